#include <cmath>
#include <numeric>
#include <string>

#include "doctest.h"
#include "helpers.hpp"

#include "bip/activation.hpp"
#include "bip/tensor.hpp"

using bip::Matrix;
using testutil::random_matrix;

TEST_SUITE("tensor") {

TEST_CASE("identity times M is M") {
  const Matrix m = Matrix::from_rows({{1.5f, -2.0f}, {3.25f, 4.0f}});
  CHECK(bip::matmul(Matrix::identity(2), m) == m);
}

TEST_CASE("hand-checkable product") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  const Matrix b = Matrix::from_rows({{0}, {1}});
  CHECK(bip::matmul(a, b) == Matrix::from_rows({{2}, {4}}));
}

TEST_CASE("shape mismatch names both shapes") {
  const Matrix a(2, 3), b(2, 3);
  try {
    (void)bip::matmul(a, b);
    FAIL("expected an exception");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find(a.shape_string()) != std::string::npos);
    CHECK(msg.find(b.shape_string()) != std::string::npos);
  }
}

TEST_CASE("associativity on random 8x8 within 1e-4 relative") {
  const Matrix a = random_matrix(8, 8, 1), b = random_matrix(8, 8, 2), c = random_matrix(8, 8, 3);
  const Matrix left = bip::matmul(bip::matmul(a, b), c);
  const Matrix right = bip::matmul(a, bip::matmul(b, c));
  CHECK(testutil::max_rel_diff(left, right) <= 1e-4);
}

TEST_CASE("matmul agrees with a double reference") {
  // 16x16 plus shapes that exercise every kernel tail.
  const std::size_t shapes[][3] = {{16, 16, 16}, {1, 1, 1}, {5, 7, 3}, {37, 70, 83}, {64, 128, 64}, {9, 33, 17}};
  for (const auto& s : shapes) {
    const Matrix a = random_matrix(s[0], s[1], 10 + s[0]), b = random_matrix(s[1], s[2], 20 + s[2]);
    const Matrix c = bip::matmul(a, b);
    const auto ref = testutil::reference_product(a, b);
    double num = 0, den = 1e-30;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      num = std::max(num, std::abs(c.data()[i] - ref[i]));
      den = std::max(den, std::abs(ref[i]));
    }
    CHECK(num / den <= 1e-4);
  }
}

TEST_CASE("transposed products match explicit transposes") {
  const Matrix a = random_matrix(13, 21, 4), b = random_matrix(13, 19, 5), c = random_matrix(17, 21, 6);
  CHECK(testutil::max_rel_diff(bip::matmul_tn(a, b), bip::matmul(bip::transpose(a), b)) <= 1e-6);
  CHECK(testutil::max_rel_diff(bip::matmul_nt(a, c), bip::matmul(a, bip::transpose(c))) <= 1e-6);
  Matrix acc = random_matrix(21, 19, 7);
  Matrix expect = acc;
  bip::add_inplace(expect, bip::matmul_tn(a, b));
  bip::matmul_tn_accumulate(a, b, acc);
  CHECK(testutil::max_rel_diff(acc, expect) <= 1e-5);
}

TEST_CASE("double instantiation") {
  const bip::MatrixD a = bip::MatrixD::from_rows({{1, 2}, {3, 4}});
  CHECK(bip::matmul(a, a) == bip::MatrixD::from_rows({{7, 10}, {15, 22}}));
}

TEST_CASE("softmax examples") {
  const Matrix m = Matrix::from_rows({{0, 0, 0}});
  const Matrix s = bip::softmax_rows(m);
  for (std::size_t j = 0; j < 3; ++j) CHECK(s(0, j) == doctest::Approx(1.0 / 3).epsilon(1e-6));

  const Matrix sat = bip::softmax_rows(Matrix::from_rows({{1000, 0}}));
  CHECK(std::abs(sat(0, 0) - 1.0f) <= 1e-6);
  CHECK(std::abs(sat(0, 1)) <= 1e-6);

  const Matrix logs = bip::softmax_rows(Matrix::from_rows({{std::log(1.0f), std::log(2.0f), std::log(3.0f)}}));
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(logs(0, j) - (j + 1) / 6.0) <= 1e-6);
}

TEST_CASE("softmax rows sum to one even for large magnitudes") {
  bip::Rng rng(11);
  Matrix m = random_matrix(32, 17, rng, 1e4);
  m(0, 0) = 1e4f;
  m(1, 3) = -1e4f;
  const Matrix s = bip::softmax_rows(m);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    double sum = 0;
    for (float v : s.row(r)) {
      CHECK(v >= 0.0f);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("abs_col_mean examples") {
  CHECK(bip::abs_col_mean(Matrix::from_rows({{1, -1}, {3, -3}})) == std::vector<float>{2, 2});
  CHECK(bip::abs_col_mean(Matrix(3, 4)) == std::vector<float>(4, 0.0f));
  CHECK(bip::abs_col_mean(Matrix::from_rows({{-5}})) == std::vector<float>{5});
  CHECK_THROWS_AS(bip::abs_col_mean(Matrix()), std::invalid_argument);
}

TEST_CASE("row_l1_sums examples") {
  CHECK(bip::row_l1_sums(Matrix::from_rows({{2, -2}})) == std::vector<float>{4});
  CHECK(bip::row_l1_sums(Matrix::identity(3)) == std::vector<float>{1, 1, 1});
  CHECK(bip::row_l1_sums(Matrix(2, 5)) == std::vector<float>(2, 0.0f));
}

TEST_CASE("reductions are permutation-equivariant in the aggregated axis") {
  const Matrix m = random_matrix(6, 5, 12);
  std::vector<std::size_t> rows = {3, 1, 5, 0, 4, 2}, cols = {4, 0, 3, 1, 2};
  // Reordering the summed axis can only change rounding.
  const auto a = bip::abs_col_mean(m), b = bip::abs_col_mean(bip::select_rows(m, std::span<const std::size_t>(rows)));
  for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == doctest::Approx(b[j]).epsilon(1e-6));
  const auto c = bip::row_l1_sums(m), e = bip::row_l1_sums(bip::select_cols(m, std::span<const std::size_t>(cols)));
  for (std::size_t j = 0; j < c.size(); ++j) CHECK(c[j] == doctest::Approx(e[j]).epsilon(1e-6));
}

TEST_CASE("declared Lipschitz constants bound the measured slope") {
  for (auto kind : {bip::ActivationKind::ReLU, bip::ActivationKind::GeLU, bip::ActivationKind::SiLU}) {
    const double step = 1e-4;
    double max_slope = 0.0;
    double prev = bip::activate<double>(kind, -10.0);
    for (long i = 1; i <= 200000; ++i) {
      const double x = -10.0 + step * static_cast<double>(i);
      const double y = bip::activate<double>(kind, x);
      max_slope = std::max(max_slope, std::abs(y - prev) / step);
      prev = y;
    }
    INFO(bip::to_string(kind));
    CHECK(max_slope <= bip::lipschitz_constant(kind) + 1e-3);
    // The constants are not loose either.
    CHECK(max_slope >= bip::lipschitz_constant(kind) - 1e-3);
  }
}

TEST_CASE("activation derivatives match central differences") {
  for (auto kind : {bip::ActivationKind::ReLU, bip::ActivationKind::GeLU, bip::ActivationKind::SiLU}) {
    for (double x : {-3.1, -0.7, 0.3, 1.9, 4.2}) {
      const double h = 1e-6;
      const double fd = (bip::activate<double>(kind, x + h) - bip::activate<double>(kind, x - h)) / (2 * h);
      CHECK(bip::activate_grad<double>(kind, x) == doctest::Approx(fd).epsilon(1e-6));
    }
  }
}

TEST_CASE("activation names round-trip") {
  for (auto kind : {bip::ActivationKind::ReLU, bip::ActivationKind::GeLU, bip::ActivationKind::SiLU})
    CHECK(bip::parse_activation(bip::to_string(kind)) == kind);
  CHECK_THROWS(bip::parse_activation("tanh"));
  CHECK(bip::lipschitz_constant(bip::ActivationKind::ReLU) == 1.0);
}

}
