#pragma once

// Bottleneck token samplers: the m landmark tokens are produced from Q by
// average pooling, a strided bias-free convolution, uniform random selection,
// or a biased pick of the first m tokens.

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sfa/kernel.hpp"
#include "sfa/matrix.hpp"

namespace sfa {

enum class SamplerMethod { AvgPool, Conv, Random, Biased };

inline const char* sampler_method_name(SamplerMethod m) {
  switch (m) {
    case SamplerMethod::AvgPool: return "avg_pool";
    case SamplerMethod::Conv: return "conv";
    case SamplerMethod::Random: return "random";
    case SamplerMethod::Biased: return "biased";
  }
  return "?";
}

inline SamplerMethod parse_sampler_method(const std::string& name) {
  if (name == "avg_pool") return SamplerMethod::AvgPool;
  if (name == "conv") return SamplerMethod::Conv;
  if (name == "random") return SamplerMethod::Random;
  if (name == "biased") return SamplerMethod::Biased;
  throw DomainError("unknown sampler method: " + name);
}

struct SamplerSpec {
  SamplerMethod method = SamplerMethod::AvgPool;
  std::size_t kernel = 1;     // pooling/conv window and stride
  std::size_t target_m = 0;
  std::uint64_t seed = 0;     // random method only
  std::optional<Matrix> conv_weights;  // (kernel^2 * d_e) x d_e, no bias
};

namespace sampling_detail {

inline void check_grid(const TokenSequence& q, const SamplerSpec& spec) {
  if (spec.kernel == 0) throw DomainError("sample: kernel must be positive");
  if (q.grid_h % spec.kernel != 0 || q.grid_w % spec.kernel != 0) {
    throw ShapeError("sample: grid " + std::to_string(q.grid_h) + "x" +
                     std::to_string(q.grid_w) + " not divisible by kernel " +
                     std::to_string(spec.kernel));
  }
  const std::size_t m = (q.grid_h / spec.kernel) * (q.grid_w / spec.kernel);
  if (m != spec.target_m) {
    throw ShapeError("sample: kernel " + std::to_string(spec.kernel) +
                     " yields m=" + std::to_string(m) + ", expected " +
                     std::to_string(spec.target_m));
  }
}

}  // namespace sampling_detail

// Non-overlapping k x k window means over a row-major (grid_h, grid_w) token
// grid. Shared by the plain sampler and the autograd pooling op.
inline Matrix avg_pool_matrix(const Matrix& features, std::size_t grid_h,
                              std::size_t grid_w, std::size_t k) {
  const std::size_t oh = grid_h / k, ow = grid_w / k, d = features.cols();
  Matrix out(oh * ow, d);
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t wy = 0; wy < oh; ++wy) {
    for (std::size_t wx = 0; wx < ow; ++wx) {
      double* dst = out.row(wy * ow + wx);
      for (std::size_t dy = 0; dy < k; ++dy) {
        for (std::size_t dx = 0; dx < k; ++dx) {
          const double* src = features.row((wy * k + dy) * grid_w + (wx * k + dx));
          for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
        }
      }
      for (std::size_t c = 0; c < d; ++c) dst[c] *= inv;
    }
  }
  return out;
}

// Strided bias-free convolution: each k x k window is flattened row-major
// (channels fastest) and multiplied by `weights` (k^2*d x d). Shared with the
// autograd conv op.
inline Matrix conv_sample_matrix(const Matrix& features, std::size_t grid_h,
                                 std::size_t grid_w, std::size_t k,
                                 const Matrix& weights) {
  const std::size_t d = features.cols();
  if (weights.rows() != k * k * d || weights.cols() != d) {
    throw ShapeError("conv_sample: weights must be (kernel^2*d) x d");
  }
  const std::size_t oh = grid_h / k, ow = grid_w / k;
  Matrix out(oh * ow, d);
  for (std::size_t wy = 0; wy < oh; ++wy) {
    for (std::size_t wx = 0; wx < ow; ++wx) {
      double* dst = out.row(wy * ow + wx);
      for (std::size_t dy = 0; dy < k; ++dy) {
        for (std::size_t dx = 0; dx < k; ++dx) {
          const std::size_t cell = dy * k + dx;
          const double* src = features.row((wy * k + dy) * grid_w + (wx * k + dx));
          for (std::size_t cin = 0; cin < d; ++cin) {
            const double x = src[cin];
            const double* wrow = weights.row(cell * d + cin);
            for (std::size_t cout = 0; cout < d; ++cout) dst[cout] += x * wrow[cout];
          }
        }
      }
    }
  }
  return out;
}

// Conv weights equal to per-channel window averaging; conv_sample with these
// reproduces avg_pool.
inline Matrix average_stencil(std::size_t k, std::size_t d) {
  Matrix w(k * k * d, d);
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t cell = 0; cell < k * k; ++cell)
    for (std::size_t c = 0; c < d; ++c) w(cell * d + c, c) = inv;
  return w;
}

// Order-preserving selection of m of n indices without replacement
// (Algorithm S), deterministic for a fixed seed.
inline std::vector<std::size_t> random_landmark_indices(std::size_t n, std::size_t m,
                                                        std::uint64_t seed) {
  std::vector<std::size_t> picked;
  picked.reserve(m);
  std::mt19937_64 eng(seed);
  std::size_t need = m;
  for (std::size_t i = 0; i < n && need > 0; ++i) {
    const std::size_t remaining = n - i;
    std::uniform_int_distribution<std::size_t> dist(0, remaining - 1);
    if (dist(eng) < need) {
      picked.push_back(i);
      --need;
    }
  }
  return picked;
}

inline Matrix gather_rows(const Matrix& a, const std::vector<std::size_t>& idx) {
  Matrix out(idx.size(), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy(a.row(idx[i]), a.row(idx[i]) + a.cols(), out.row(i));
  }
  return out;
}

inline TokenSequence conv_sample(const TokenSequence& q, const SamplerSpec& spec) {
  if (!spec.conv_weights.has_value()) {
    throw ShapeError("conv_sample: conv_weights missing");
  }
  sampling_detail::check_grid(q, spec);
  Matrix out = conv_sample_matrix(q.features, q.grid_h, q.grid_w, spec.kernel,
                                  *spec.conv_weights);
  return TokenSequence{std::move(out), q.grid_h / spec.kernel, q.grid_w / spec.kernel};
}

inline TokenSequence sample(const TokenSequence& q, const SamplerSpec& spec) {
  switch (spec.method) {
    case SamplerMethod::AvgPool: {
      sampling_detail::check_grid(q, spec);
      Matrix out = avg_pool_matrix(q.features, q.grid_h, q.grid_w, spec.kernel);
      return TokenSequence{std::move(out), q.grid_h / spec.kernel,
                           q.grid_w / spec.kernel};
    }
    case SamplerMethod::Conv:
      return conv_sample(q, spec);
    case SamplerMethod::Random: {
      if (spec.target_m > q.n()) {
        throw DomainError("sample: target_m exceeds token count");
      }
      auto idx = random_landmark_indices(q.n(), spec.target_m, spec.seed);
      return TokenSequence{gather_rows(q.features, idx), spec.target_m, 1};
    }
    case SamplerMethod::Biased: {
      if (spec.target_m > q.n()) {
        throw DomainError("sample: target_m exceeds token count");
      }
      return TokenSequence{row_block(q.features, 0, spec.target_m), spec.target_m, 1};
    }
  }
  throw DomainError("sample: unknown method");
}

}  // namespace sfa
