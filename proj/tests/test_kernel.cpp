#include <cmath>

#include <gtest/gtest.h>

#include "sfa/eigh.hpp"
#include "sfa/kernel.hpp"
#include "sfa/random.hpp"

namespace {

using sfa::Matrix;

Matrix sq_dist_oracle(const Matrix& a, const Matrix& b) {
  Matrix d(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        const double diff = a(i, k) - b(j, k);
        s += diff * diff;
      }
      d(i, j) = s;
    }
  return d;
}

TEST(Project, IdentityWeights) {
  sfa::RandomEngine eng(1);
  auto x = sfa::make_token_sequence(sfa::randn(6, 4, eng), 2, 3);
  sfa::ProjectionWeights w{Matrix::identity(4), Matrix::identity(4)};
  auto [q, v] = sfa::project(x, w);
  EXPECT_EQ(sfa::max_abs_diff(q.features, x.features), 0.0);
  EXPECT_EQ(sfa::max_abs_diff(v.features, x.features), 0.0);
  EXPECT_EQ(q.grid_h, 2u);
  EXPECT_EQ(q.grid_w, 3u);
}

TEST(Project, ZeroInputGivesZero) {
  auto x = sfa::make_token_sequence(Matrix(4, 3), 2, 2);
  sfa::RandomEngine eng(2);
  sfa::ProjectionWeights w{sfa::randn(3, 5, eng), sfa::randn(3, 5, eng)};
  auto [q, v] = sfa::project(x, w);
  EXPECT_EQ(sfa::max_abs(q.features), 0.0);
  EXPECT_EQ(sfa::max_abs(v.features), 0.0);
}

TEST(Project, MatchesTwoMatmuls) {
  sfa::RandomEngine eng(3);
  auto x = sfa::make_token_sequence(sfa::randn(8, 5, eng), 4, 2);
  sfa::ProjectionWeights w{sfa::randn(5, 6, eng), sfa::randn(5, 6, eng)};
  auto [q, v] = sfa::project(x, w);
  EXPECT_EQ(sfa::max_abs_diff(q.features, sfa::matmul(x.features, w.w_qk)), 0.0);
  EXPECT_EQ(sfa::max_abs_diff(v.features, sfa::matmul(x.features, w.w_v)), 0.0);
}

TEST(Project, DimensionMismatchThrows) {
  auto x = sfa::make_token_sequence(Matrix(4, 3), 2, 2);
  sfa::ProjectionWeights w{Matrix(4, 5), Matrix(4, 5)};
  EXPECT_THROW(sfa::project(x, w), sfa::ShapeError);
}

TEST(PairwiseSqDist, TwoPointsOnLine) {
  Matrix a = Matrix::from_rows({{0}, {1}});
  Matrix d = sfa::pairwise_sq_dist(a, a);
  Matrix want = Matrix::from_rows({{0, 1}, {1, 0}});
  EXPECT_EQ(sfa::max_abs_diff(d, want), 0.0);
}

TEST(PairwiseSqDist, EqualSingleRows) {
  Matrix a = Matrix::from_rows({{1.5, -2.0, 0.25}});
  Matrix d = sfa::pairwise_sq_dist(a, a);
  EXPECT_EQ(d(0, 0), 0.0);
}

TEST(PairwiseSqDist, MatchesDoubleLoopOracle) {
  sfa::RandomEngine eng(4);
  Matrix a = sfa::randn(6, 4, eng);
  Matrix b = sfa::randn(3, 4, eng);
  EXPECT_LE(sfa::max_abs_diff(sfa::pairwise_sq_dist(a, b), sq_dist_oracle(a, b)), 1e-10);
}

TEST(PairwiseSqDist, FeatureMismatchThrows) {
  EXPECT_THROW(sfa::pairwise_sq_dist(Matrix(2, 3), Matrix(2, 4)), sfa::ShapeError);
}

TEST(GaussianAttention, IdenticalRowsGiveAllOnes) {
  Matrix q = Matrix::from_rows({{1, 2, 3}, {1, 2, 3}});
  Matrix s = sfa::gaussian_attention_matrix(q, q, 3);
  EXPECT_EQ(sfa::max_abs_diff(s, Matrix::from_rows({{1, 1}, {1, 1}})), 0.0);
}

TEST(GaussianAttention, DiagonalExactlyOne) {
  sfa::RandomEngine eng(5);
  Matrix q = sfa::randn(9, 6, eng);
  Matrix s = sfa::gaussian_attention_matrix(q, q, 6);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(s(i, i), 1.0);
}

TEST(GaussianAttention, HandEvaluatedOffDiagonal) {
  // dist^2 = 4 and d_e = 4, so the off-diagonal is exp(-4 / (2*2)) = exp(-1).
  Matrix q = Matrix::from_rows({{0, 0, 0, 0}, {2, 0, 0, 0}});
  Matrix s = sfa::gaussian_attention_matrix(q, q, 4);
  EXPECT_NEAR(s(0, 1), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(s(0, 1), 0.367879, 1e-6);
}

TEST(GaussianAttention, ZeroDimThrows) {
  EXPECT_THROW(sfa::gaussian_attention_matrix(Matrix(2, 0), Matrix(2, 0), 0),
               sfa::DomainError);
}

TEST(GaussianAttention, ExactSymmetryAndRange) {
  sfa::RandomEngine eng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix q = sfa::randn(12, 8, eng);
    Matrix s = sfa::gaussian_attention_matrix(q, q, 8);
    EXPECT_EQ(sfa::max_abs_diff(s, sfa::transpose(s)), 0.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      EXPECT_GT(s.data()[i], 0.0);
      EXPECT_LE(s.data()[i], 1.0);
    }
  }
}

TEST(GaussianAttention, PositiveSemiDefinite) {
  sfa::RandomEngine eng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = std::min<std::size_t>(8 + 3 * trial, 32);
    Matrix q = sfa::randn(n, 5, eng);
    Matrix s = sfa::gaussian_attention_matrix(q, q, 5);
    auto eig = sfa::jacobi_eigh(s);
    for (double l : eig.eigenvalues) EXPECT_GE(l, -1e-8);
  }
}

TEST(GaussianAttention, TranslationInvariant) {
  sfa::RandomEngine eng(8);
  Matrix q = sfa::randn(10, 4, eng);
  Matrix shift = sfa::randn(1, 4, eng);
  Matrix q_shifted = q;
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t j = 0; j < q.cols(); ++j) q_shifted(i, j) += shift(0, j);
  Matrix s0 = sfa::gaussian_attention_matrix(q, q, 4);
  Matrix s1 = sfa::gaussian_attention_matrix(q_shifted, q_shifted, 4);
  EXPECT_LE(sfa::max_abs_diff(s0, s1), 1e-10);
}

TEST(SoftmaxAttention, SingleRow) {
  Matrix q = Matrix::from_rows({{0.3, -1.2}});
  Matrix s = sfa::softmax_attention_matrix(q, q, 2);
  EXPECT_EQ(s.rows(), 1u);
  EXPECT_DOUBLE_EQ(s(0, 0), 1.0);
}

TEST(SoftmaxAttention, ZeroLogitsAreUniform) {
  Matrix q(5, 3);
  Matrix s = sfa::softmax_attention_matrix(q, q, 3);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(s(i, j), 0.2, 1e-15);
}

TEST(SoftmaxAttention, MatchesNaiveOracleAndRowsSumToOne) {
  sfa::RandomEngine eng(9);
  Matrix q = sfa::randn(5, 8, eng);
  Matrix k = sfa::randn(5, 8, eng);
  Matrix s = sfa::softmax_attention_matrix(q, k, 8);

  // Naive exp/normalize oracle, no max subtraction.
  Matrix logits = sfa::matmul(q, sfa::transpose(k));
  for (std::size_t i = 0; i < 5; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 5; ++j) sum += std::exp(logits(i, j) / std::sqrt(8.0));
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_NEAR(s(i, j), std::exp(logits(i, j) / std::sqrt(8.0)) / sum, 1e-12);
    }
  }
  for (std::size_t i = 0; i < 5; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < 5; ++j) row_sum += s(i, j);
    EXPECT_NEAR(row_sum, 1.0, 1e-12);
  }
}

}  // namespace
