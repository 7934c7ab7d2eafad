#pragma once

// Attention-matrix construction. The similarity is a Gaussian kernel of token
// distances, S_ij = exp(-||q_i - k_j||^2 / (2*sqrt(d_e))), with query and key
// projections tied so S is a symmetric PSD Gram matrix. A standard softmax
// attention matrix is provided as the baseline.

#include <cmath>
#include <utility>
#include <vector>

#include "sfa/matrix.hpp"

namespace sfa {

struct TokenSequence {
  Matrix features;       // n x d
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;

  std::size_t n() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
};

inline TokenSequence make_token_sequence(Matrix features, std::size_t grid_h,
                                         std::size_t grid_w) {
  if (grid_h * grid_w != features.rows()) {
    throw ShapeError("TokenSequence: grid_h*grid_w must equal token count");
  }
  if (features.cols() == 0) {
    throw ShapeError("TokenSequence: feature dimension must be positive");
  }
  return TokenSequence{std::move(features), grid_h, grid_w};
}

// Query and key share one projection; that tie is what makes the attention
// matrix symmetric.
struct ProjectionWeights {
  Matrix w_qk;  // d x d_e
  Matrix w_v;   // d x d_e
};

inline std::pair<TokenSequence, TokenSequence> project(const TokenSequence& x,
                                                       const ProjectionWeights& w) {
  if (x.features.cols() != w.w_qk.rows() || x.features.cols() != w.w_v.rows()) {
    throw ShapeError("project: feature dimension does not match projection rows");
  }
  TokenSequence q{matmul(x.features, w.w_qk), x.grid_h, x.grid_w};
  TokenSequence v{matmul(x.features, w.w_v), x.grid_h, x.grid_w};
  return {std::move(q), std::move(v)};
}

// result[i][j] = ||a_i - b_j||^2, computed via the expanded form
// ||a_i||^2 + ||b_j||^2 - 2 a_i.b_j and clamped at zero. Row norms reuse the
// same multiply-accumulate order as matmul, so the diagonal is exactly zero
// and the matrix exactly symmetric when a and b are the same matrix.
inline Matrix pairwise_sq_dist(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("pairwise_sq_dist: feature dimensions differ");
  }
  Matrix d = matmul(a, transpose(b));  // m x n, holds a.b^T, rewritten in place

  std::vector<double> ra(a.rows()), rb(b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* p = a.row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) s += p[k] * p[k];
    ra[i] = s;
  }
  for (std::size_t j = 0; j < b.rows(); ++j) {
    const double* p = b.row(j);
    double s = 0.0;
    for (std::size_t k = 0; k < b.cols(); ++k) s += p[k] * p[k];
    rb[j] = s;
  }

  const std::int64_t m = static_cast<std::int64_t>(a.rows());
  const std::size_t n = b.rows();
#pragma omp parallel for schedule(static) if (a.rows() * n >= (std::size_t{1} << 16))
  for (std::int64_t i = 0; i < m; ++i) {
    double* di = d.row(static_cast<std::size_t>(i));
    const double rai = ra[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < n; ++j) {
      di[j] = std::max(0.0, (rai + rb[j]) - 2.0 * di[j]);
    }
  }
  return d;
}

// S = exp(-pairwise_sq_dist / (2*sqrt(d_e))). The distance buffer is
// transformed in place, so only one m x n buffer is ever live.
inline Matrix gaussian_attention_matrix(const Matrix& q, const Matrix& k,
                                        std::size_t d_e) {
  if (d_e == 0) throw DomainError("gaussian_attention_matrix: d_e must be positive");
  if (q.cols() != d_e || k.cols() != d_e) {
    throw ShapeError("gaussian_attention_matrix: feature dimension must equal d_e");
  }
  Matrix s = pairwise_sq_dist(q, k);
  const double inv_scale = -1.0 / (2.0 * std::sqrt(static_cast<double>(d_e)));
  map_inplace(s, [inv_scale](double x) { return std::exp(x * inv_scale); });
  return s;
}

// Row-wise softmax of Q K^T / sqrt(d_e), with the usual per-row max
// subtraction for overflow safety.
inline Matrix softmax_attention_matrix(const Matrix& q, const Matrix& k,
                                       std::size_t d_e) {
  if (d_e == 0) throw DomainError("softmax_attention_matrix: d_e must be positive");
  if (q.cols() != d_e || k.cols() != d_e) {
    throw ShapeError("softmax_attention_matrix: feature dimension must equal d_e");
  }
  Matrix s = matmul(q, transpose(k));
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_e));
  const std::int64_t rows = static_cast<std::int64_t>(s.rows());
  const std::size_t n = s.cols();
#pragma omp parallel for schedule(static) if (s.size() >= (std::size_t{1} << 16))
  for (std::int64_t i = 0; i < rows; ++i) {
    double* row = s.row(static_cast<std::size_t>(i));
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      row[j] *= scale;
      mx = std::max(mx, row[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  }
  return s;
}

}  // namespace sfa
