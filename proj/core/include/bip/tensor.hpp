#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace bip {

/// Dense row-major 2-D array. `BasicMatrix<float>` is the storage type for
/// every weight and activation; the double instantiation exists only for the
/// gradient-check path.
template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T(0));
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data);

  static BasicMatrix identity(std::size_t n);
  static BasicMatrix from_rows(std::initializer_list<std::initializer_list<T>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  std::string shape_string() const;

  template <typename U>
  BasicMatrix<U> cast() const {
    BasicMatrix<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const BasicMatrix& a, const BasicMatrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using MatrixD = BasicMatrix<double>;

// Products. Every output element accumulates sequentially over k.
template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b);
/// aᵀ·b
template <typename T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b);
/// a·bᵀ
template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b);
/// acc += aᵀ·b, used for weight-gradient accumulation.
template <typename T>
void matmul_tn_accumulate(const BasicMatrix<T>& a, const BasicMatrix<T>& b, BasicMatrix<T>& acc);

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& m);

/// Row-wise softmax with per-row max subtraction.
template <typename T>
BasicMatrix<T> softmax_rows(const BasicMatrix<T>& m);

template <typename T>
void add_inplace(BasicMatrix<T>& acc, const BasicMatrix<T>& other);

template <typename T>
BasicMatrix<T> abs(const BasicMatrix<T>& m);

/// Entry j = mean over rows of |m[t, j]|. Throws on an empty matrix.
std::vector<float> abs_col_mean(const Matrix& m);
/// Entry j = Σ_k |m[j, k]|.
std::vector<float> row_l1_sums(const Matrix& m);
/// Entry k = Σ_j |m[j, k]|.
std::vector<float> col_l1_sums(const Matrix& m);

/// |m|·v for a vector v of length m.cols().
std::vector<float> abs_matvec(const Matrix& m, std::span<const float> v);

float max_abs(const Matrix& m);
float max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& m);

/// Keep the listed columns, in order.
template <typename T>
BasicMatrix<T> select_cols(const BasicMatrix<T>& m, std::span<const std::size_t> cols);
/// Keep the listed rows, in order.
template <typename T>
BasicMatrix<T> select_rows(const BasicMatrix<T>& m, std::span<const std::size_t> rows);

}  // namespace bip
