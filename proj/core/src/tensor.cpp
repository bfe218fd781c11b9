#include "bip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <stdexcept>

namespace bip {

template <typename T>
BasicMatrix<T>::BasicMatrix(std::size_t rows, std::size_t cols, T fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

template <typename T>
BasicMatrix<T>::BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw std::invalid_argument("matrix data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string());
  }
}

template <typename T>
BasicMatrix<T> BasicMatrix<T>::identity(std::size_t n) {
  BasicMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
  return m;
}

template <typename T>
BasicMatrix<T> BasicMatrix<T>::from_rows(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<T> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return BasicMatrix(r, c, std::move(data));
}

template <typename T>
std::string BasicMatrix<T>::shape_string() const {
  std::ostringstream os;
  os << rows_ << "x" << cols_;
  return os.str();
}

namespace {

template <typename T>
[[noreturn]] void shape_error(const char* op, const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_string() +
                              " and " + b.shape_string());
}

}  // namespace

// Register tile: rows [i, i+RB) by columns [j0, j0+JB) of C.
template <typename T, std::size_t RB, std::size_t JB>
inline void gemm_tile(const T* a, std::size_t si, std::size_t sk, const T* b, T* c, std::size_t i,
                      std::size_t j0, std::size_t inner, std::size_t m) {
  T acc[RB][JB];
  for (std::size_t r = 0; r < RB; ++r)
    for (std::size_t j = 0; j < JB; ++j) acc[r][j] = c[(i + r) * m + j0 + j];
  for (std::size_t k = 0; k < inner; ++k) {
    const T* brow = b + k * m + j0;
    for (std::size_t r = 0; r < RB; ++r) {
      const T av = a[(i + r) * si + k * sk];
      for (std::size_t j = 0; j < JB; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < RB; ++r)
    for (std::size_t j = 0; j < JB; ++j) c[(i + r) * m + j0 + j] = acc[r][j];
}

// Narrow variant: one 64-byte vector per row. GCC keeps these in registers
// where the plain-array form spills.
template <typename T, std::size_t RB>
inline void gemm_tile_narrow(const T* a, std::size_t si, std::size_t sk, const T* b, T* c,
                             std::size_t i, std::size_t j0, std::size_t inner, std::size_t m) {
  using V [[gnu::vector_size(64)]] = T;
  V acc[RB];
  for (std::size_t r = 0; r < RB; ++r) std::memcpy(&acc[r], c + (i + r) * m + j0, sizeof(V));
  for (std::size_t k = 0; k < inner; ++k) {
    V bv;
    std::memcpy(&bv, b + k * m + j0, sizeof(V));
    for (std::size_t r = 0; r < RB; ++r) acc[r] += a[(i + r) * si + k * sk] * bv;
  }
  for (std::size_t r = 0; r < RB; ++r) std::memcpy(c + (i + r) * m + j0, &acc[r], sizeof(V));
}

template <typename T, std::size_t RB, std::size_t JB>
inline std::size_t gemm_panel(const T* a, std::size_t si, std::size_t sk, const T* b, T* c,
                              std::size_t n, std::size_t inner, std::size_t m, std::size_t j0) {
  for (; j0 + JB <= m; j0 += JB) {
    std::size_t i = 0;
    for (; i + RB <= n; i += RB) gemm_tile<T, RB, JB>(a, si, sk, b, c, i, j0, inner, m);
    for (; i < n; ++i) gemm_tile<T, 1, JB>(a, si, sk, b, c, i, j0, inner, m);
  }
  return j0;
}

// C[i,j] += sum_k A(i,k) B[k,j] where A(i,k) = a[i*si + k*sk]. Each output
// element accumulates in increasing k, whatever the tiling.
template <typename T>
void gemm_kernel(const T* a, std::size_t si, std::size_t sk, const T* b, T* c, std::size_t n,
                 std::size_t inner, std::size_t m) {
  constexpr std::size_t W = 64 / sizeof(T);
  std::size_t j0 = gemm_panel<T, 4, 4 * W>(a, si, sk, b, c, n, inner, m, 0);
  for (; j0 + W <= m; j0 += W) {
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) gemm_tile_narrow<T, 8>(a, si, sk, b, c, i, j0, inner, m);
    for (; i < n; ++i) gemm_tile_narrow<T, 1>(a, si, sk, b, c, i, j0, inner, m);
  }
  if (j0 == m) return;
  for (std::size_t i = 0; i < n; ++i) {
    T* out = c + i * m;
    for (std::size_t k = 0; k < inner; ++k) {
      const T av = a[i * si + k * sk];
      const T* brow = b + k * m;
      for (std::size_t j = j0; j < m; ++j) out[j] += av * brow[j];
    }
  }
}

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  BasicMatrix<T> c(a.rows(), b.cols());
  gemm_kernel(a.data(), a.cols(), std::size_t{1}, b.data(), c.data(), a.rows(), a.cols(), b.cols());
  return c;
}

template <typename T>
void matmul_tn_accumulate(const BasicMatrix<T>& a, const BasicMatrix<T>& b, BasicMatrix<T>& acc) {
  if (a.rows() != b.rows()) shape_error("matmul_tn", a, b);
  if (acc.rows() != a.cols() || acc.cols() != b.cols()) shape_error("matmul_tn(acc)", acc, b);
  gemm_kernel(a.data(), std::size_t{1}, a.cols(), b.data(), acc.data(), a.cols(), a.rows(), b.cols());
}

template <typename T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  BasicMatrix<T> c(a.cols(), b.cols());
  matmul_tn_accumulate(a, b, c);
  return c;
}

template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
  return matmul(a, transpose(b));
}

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& m) {
  BasicMatrix<T> t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

template <typename T>
BasicMatrix<T> softmax_rows(const BasicMatrix<T>& m) {
  BasicMatrix<T> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto in = m.row(i);
    auto o = out.row(i);
    if (in.empty()) continue;
    const T mx = *std::max_element(in.begin(), in.end());
    T sum = 0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const T inv = T(1) / sum;
    for (auto& v : o) v *= inv;
  }
  return out;
}

template <typename T>
void add_inplace(BasicMatrix<T>& acc, const BasicMatrix<T>& other) {
  if (acc.rows() != other.rows() || acc.cols() != other.cols()) shape_error("add", acc, other);
  T* a = acc.data();
  const T* b = other.data();
  for (std::size_t i = 0; i < acc.size(); ++i) a[i] += b[i];
}

template <typename T>
BasicMatrix<T> abs(const BasicMatrix<T>& m) {
  BasicMatrix<T> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = std::abs(m.data()[i]);
  return out;
}

std::vector<float> abs_col_mean(const Matrix& m) {
  if (m.rows() == 0 || m.cols() == 0) {
    throw std::invalid_argument("abs_col_mean: empty matrix " + m.shape_string());
  }
  std::vector<double> acc(m.cols(), 0.0);
  for (std::size_t t = 0; t < m.rows(); ++t) {
    auto r = m.row(t);
    for (std::size_t j = 0; j < r.size(); ++j) acc[j] += std::abs(static_cast<double>(r[j]));
  }
  std::vector<float> out(m.cols());
  for (std::size_t j = 0; j < acc.size(); ++j)
    out[j] = static_cast<float>(acc[j] / static_cast<double>(m.rows()));
  return out;
}

std::vector<float> row_l1_sums(const Matrix& m) {
  std::vector<float> out(m.rows(), 0.0f);
  for (std::size_t j = 0; j < m.rows(); ++j) {
    float s = 0.0f;
    for (float v : m.row(j)) s += std::abs(v);
    out[j] = s;
  }
  return out;
}

std::vector<float> col_l1_sums(const Matrix& m) {
  std::vector<float> out(m.cols(), 0.0f);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) out[k] += std::abs(r[k]);
  }
  return out;
}

std::vector<float> abs_matvec(const Matrix& m, std::span<const float> v) {
  if (v.size() != m.cols()) {
    throw std::invalid_argument("abs_matvec: matrix " + m.shape_string() + " vs vector of length " +
                                std::to_string(v.size()));
  }
  std::vector<float> out(m.rows(), 0.0f);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    float s = 0.0f;
    auto r = m.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) s += std::abs(r[k]) * v[k];
    out[i] = s;
  }
  return out;
}

float max_abs(const Matrix& m) {
  float mx = 0.0f;
  for (float v : m.values()) mx = std::max(mx, std::abs(v));
  return mx;
}

float max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("max_abs_diff", a, b);
  float mx = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) mx = std::max(mx, std::abs(a.data()[i] - b.data()[i]));
  return mx;
}

bool all_finite(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(), [](float v) { return std::isfinite(v); });
}

template <typename T>
BasicMatrix<T> select_cols(const BasicMatrix<T>& m, std::span<const std::size_t> cols) {
  BasicMatrix<T> out(m.rows(), cols.size());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (cols[j] >= m.cols()) throw std::out_of_range("select_cols: column out of range");
      out(i, j) = m(i, cols[j]);
    }
  return out;
}

template <typename T>
BasicMatrix<T> select_rows(const BasicMatrix<T>& m, std::span<const std::size_t> rows) {
  BasicMatrix<T> out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows()) throw std::out_of_range("select_rows: row out of range");
    std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}

#define BIP_INSTANTIATE(T)                                                                       \
  template class BasicMatrix<T>;                                                                 \
  template BasicMatrix<T> matmul(const BasicMatrix<T>&, const BasicMatrix<T>&);                  \
  template BasicMatrix<T> matmul_tn(const BasicMatrix<T>&, const BasicMatrix<T>&);               \
  template BasicMatrix<T> matmul_nt(const BasicMatrix<T>&, const BasicMatrix<T>&);               \
  template void matmul_tn_accumulate(const BasicMatrix<T>&, const BasicMatrix<T>&,               \
                                     BasicMatrix<T>&);                                           \
  template BasicMatrix<T> transpose(const BasicMatrix<T>&);                                      \
  template BasicMatrix<T> softmax_rows(const BasicMatrix<T>&);                                   \
  template void add_inplace(BasicMatrix<T>&, const BasicMatrix<T>&);                             \
  template BasicMatrix<T> abs(const BasicMatrix<T>&);                                            \
  template BasicMatrix<T> select_cols(const BasicMatrix<T>&, std::span<const std::size_t>);      \
  template BasicMatrix<T> select_rows(const BasicMatrix<T>&, std::span<const std::size_t>);

BIP_INSTANTIATE(float)
BIP_INSTANTIATE(double)

#undef BIP_INSTANTIATE

}  // namespace bip
