#include <algorithm>

#include <gtest/gtest.h>

#include "sfa/random.hpp"
#include "sfa/sampling.hpp"

namespace {

using sfa::Matrix;
using sfa::SamplerMethod;
using sfa::SamplerSpec;

SamplerSpec pool_spec(std::size_t k, std::size_t m) {
  SamplerSpec s;
  s.method = SamplerMethod::AvgPool;
  s.kernel = k;
  s.target_m = m;
  return s;
}

TEST(AvgPool, IdentityWithKernelOne) {
  sfa::RandomEngine eng(1);
  auto q = sfa::make_token_sequence(sfa::randn(12, 3, eng), 3, 4);
  auto out = sfa::sample(q, pool_spec(1, 12));
  EXPECT_EQ(sfa::max_abs_diff(out.features, q.features), 0.0);
  EXPECT_EQ(out.grid_h, 3u);
  EXPECT_EQ(out.grid_w, 4u);
}

TEST(AvgPool, MeanOfFourTokens) {
  auto q = sfa::make_token_sequence(Matrix::from_rows({{1}, {3}, {5}, {7}}), 2, 2);
  auto out = sfa::sample(q, pool_spec(2, 1));
  EXPECT_EQ(out.features.rows(), 1u);
  EXPECT_DOUBLE_EQ(out.features(0, 0), 4.0);
  EXPECT_EQ(out.grid_h, 1u);
  EXPECT_EQ(out.grid_w, 1u);
}

TEST(AvgPool, IndivisibleGridThrows) {
  sfa::RandomEngine eng(2);
  auto q = sfa::make_token_sequence(sfa::randn(6, 2, eng), 2, 3);
  EXPECT_THROW(sfa::sample(q, pool_spec(2, 1)), sfa::ShapeError);
}

TEST(AvgPool, WrongTargetMThrows) {
  sfa::RandomEngine eng(3);
  auto q = sfa::make_token_sequence(sfa::randn(16, 2, eng), 4, 4);
  EXPECT_THROW(sfa::sample(q, pool_spec(2, 5)), sfa::ShapeError);
}

TEST(AvgPool, TokensStayInWindowHull) {
  sfa::RandomEngine eng(4);
  auto q = sfa::make_token_sequence(sfa::randn(16, 5, eng), 4, 4);
  auto out = sfa::sample(q, pool_spec(2, 4));
  for (std::size_t wy = 0; wy < 2; ++wy) {
    for (std::size_t wx = 0; wx < 2; ++wx) {
      for (std::size_t c = 0; c < 5; ++c) {
        double lo = 1e300, hi = -1e300;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const double v = q.features((wy * 2 + dy) * 4 + (wx * 2 + dx), c);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
          }
        const double pooled = out.features(wy * 2 + wx, c);
        EXPECT_GE(pooled, lo - 1e-12);
        EXPECT_LE(pooled, hi + 1e-12);
      }
    }
  }
}

TEST(BiasedSampling, PicksFirstMRows) {
  sfa::RandomEngine eng(5);
  auto q = sfa::make_token_sequence(sfa::randn(100, 4, eng), 10, 10);
  SamplerSpec s;
  s.method = SamplerMethod::Biased;
  s.target_m = 49;
  auto out = sfa::sample(q, s);
  EXPECT_EQ(out.features.rows(), 49u);
  EXPECT_EQ(sfa::max_abs_diff(out.features, sfa::row_block(q.features, 0, 49)), 0.0);
  EXPECT_EQ(out.grid_h, 49u);
  EXPECT_EQ(out.grid_w, 1u);
}

TEST(RandomSampling, DeterministicOrderPreservingSubset) {
  sfa::RandomEngine eng(6);
  auto q = sfa::make_token_sequence(sfa::randn(40, 3, eng), 5, 8);
  SamplerSpec s;
  s.method = SamplerMethod::Random;
  s.target_m = 12;
  s.seed = 777;
  auto out1 = sfa::sample(q, s);
  auto out2 = sfa::sample(q, s);
  EXPECT_EQ(sfa::max_abs_diff(out1.features, out2.features), 0.0);

  auto idx = sfa::random_landmark_indices(40, 12, 777);
  EXPECT_EQ(idx.size(), 12u);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  EXPECT_TRUE(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_EQ(out1.features(i, c), q.features(idx[i], c));
    }
  }
}

TEST(RandomSampling, TargetAboveNThrows) {
  sfa::RandomEngine eng(7);
  auto q = sfa::make_token_sequence(sfa::randn(4, 2, eng), 2, 2);
  SamplerSpec s;
  s.method = SamplerMethod::Random;
  s.target_m = 5;
  EXPECT_THROW(sfa::sample(q, s), sfa::DomainError);
}

TEST(ConvSample, AveragingStencilEqualsAvgPool) {
  sfa::RandomEngine eng(8);
  auto q = sfa::make_token_sequence(sfa::randn(16, 3, eng), 4, 4);
  SamplerSpec s;
  s.method = SamplerMethod::Conv;
  s.kernel = 2;
  s.target_m = 4;
  s.conv_weights = sfa::average_stencil(2, 3);
  auto conv_out = sfa::sample(q, s);
  auto pool_out = sfa::sample(q, pool_spec(2, 4));
  EXPECT_LE(sfa::max_abs_diff(conv_out.features, pool_out.features), 1e-12);
}

TEST(ConvSample, ZeroWeightsGiveZeroTokens) {
  sfa::RandomEngine eng(9);
  auto q = sfa::make_token_sequence(sfa::randn(16, 3, eng), 4, 4);
  SamplerSpec s;
  s.method = SamplerMethod::Conv;
  s.kernel = 2;
  s.target_m = 4;
  s.conv_weights = Matrix(4 * 3, 3);
  auto out = sfa::sample(q, s);
  EXPECT_EQ(sfa::max_abs(out.features), 0.0);
}

TEST(ConvSample, MatchesSlidingWindowOracle) {
  sfa::RandomEngine eng(10);
  const std::size_t k = 2, d = 3;
  auto q = sfa::make_token_sequence(sfa::randn(16, d, eng), 4, 4);
  Matrix w = sfa::randn(k * k * d, d, eng);
  SamplerSpec s;
  s.method = SamplerMethod::Conv;
  s.kernel = k;
  s.target_m = 4;
  s.conv_weights = w;
  auto out = sfa::sample(q, s);

  // Explicit window-loop oracle: flatten each window row-major with channels
  // fastest, then multiply by the weight matrix.
  for (std::size_t wy = 0; wy < 2; ++wy) {
    for (std::size_t wx = 0; wx < 2; ++wx) {
      std::vector<double> flat;
      for (std::size_t dy = 0; dy < k; ++dy)
        for (std::size_t dx = 0; dx < k; ++dx)
          for (std::size_t c = 0; c < d; ++c)
            flat.push_back(q.features((wy * k + dy) * 4 + (wx * k + dx), c));
      for (std::size_t cout = 0; cout < d; ++cout) {
        double want = 0.0;
        for (std::size_t i = 0; i < flat.size(); ++i) want += flat[i] * w(i, cout);
        EXPECT_NEAR(out.features(wy * 2 + wx, cout), want, 1e-10);
      }
    }
  }
}

TEST(ConvSample, MissingWeightsThrow) {
  sfa::RandomEngine eng(11);
  auto q = sfa::make_token_sequence(sfa::randn(16, 3, eng), 4, 4);
  SamplerSpec s;
  s.method = SamplerMethod::Conv;
  s.kernel = 2;
  s.target_m = 4;
  EXPECT_THROW(sfa::sample(q, s), sfa::ShapeError);
  s.conv_weights = Matrix(5, 3);  // wrong shape
  EXPECT_THROW(sfa::sample(q, s), sfa::ShapeError);
}

TEST(SamplerMethod, NamesRoundTrip) {
  for (auto m : {SamplerMethod::AvgPool, SamplerMethod::Conv, SamplerMethod::Random,
                 SamplerMethod::Biased}) {
    EXPECT_EQ(sfa::parse_sampler_method(sfa::sampler_method_name(m)), m);
  }
  EXPECT_THROW(sfa::parse_sampler_method("pooled"), sfa::DomainError);
}

}  // namespace
