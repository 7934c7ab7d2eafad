#pragma once

// Softmax-free attention with Nystrom low-rank reconstruction.
//
// Per head: Qt = sample(Q); A = exp(Qt (-) Qt); P = exp(Qt (-) Q);
// output = P^T * (NR(A) * (P * V)), evaluated in exactly that association
// order so no n x n matrix is ever formed. The full S_hat = P^T NR(A) P is
// materialized only on explicit request (debug / heatmaps).

#include <utility>
#include <vector>

#include "sfa/kernel.hpp"
#include "sfa/matrix.hpp"
#include "sfa/pinv.hpp"
#include "sfa/sampling.hpp"

namespace sfa {

struct AttentionConfig {
  std::size_t d_e = 64;
  std::size_t heads = 2;
  std::size_t d_h = 32;  // = d_e / heads
  SamplerSpec sampler;
  NewtonConfig newton;
};

struct AttentionOutput {
  Matrix values_out;                     // n x d_e
  std::vector<PinvReport> pinv_reports;  // one per head
  std::vector<Matrix> s_hat;             // per head, debug mode only
};

inline void validate_attention_config(const AttentionConfig& cfg) {
  if (cfg.heads == 0 || cfg.d_h == 0 || cfg.d_e != cfg.heads * cfg.d_h) {
    throw DomainError("AttentionConfig: d_e must equal heads * d_h");
  }
}

inline AttentionOutput soft_attention(const TokenSequence& q, const TokenSequence& v,
                                      const AttentionConfig& cfg,
                                      bool materialize_s_hat = false) {
  validate_attention_config(cfg);
  if (q.features.cols() != cfg.d_e || v.features.cols() != cfg.d_e ||
      q.n() != v.n()) {
    throw ShapeError("soft_attention: q and v must be n x d_e");
  }

  // One sampling pass on the full d_e features, shared by all heads.
  const TokenSequence q_tilde = sample(q, cfg.sampler);

  const std::size_t n = q.n();
  AttentionOutput out;
  out.values_out = Matrix(n, cfg.d_e);
  out.pinv_reports.reserve(cfg.heads);

  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::size_t c0 = h * cfg.d_h, c1 = c0 + cfg.d_h;
    const Matrix qh = col_block(q.features, c0, c1);
    const Matrix qth = col_block(q_tilde.features, c0, c1);
    const Matrix vh = col_block(v.features, c0, c1);

    const Matrix a = gaussian_attention_matrix(qth, qth, cfg.d_h);
    const Matrix p = gaussian_attention_matrix(qth, qh, cfg.d_h);  // m x n
    auto [a_t, report] = newton_pinv(a, cfg.newton);
    out.pinv_reports.push_back(std::move(report));

    const Matrix pv = matmul(p, vh);      // m x d_h
    const Matrix apv = matmul(a_t, pv);   // m x d_h
    set_col_block(out.values_out, c0, matmul(transpose(p), apv));

    if (materialize_s_hat) {
      out.s_hat.push_back(matmul(transpose(p), matmul(a_t, p)));
    }
  }
  return out;
}

// Quadratic oracle: S V with the dense Gaussian-kernel attention matrix.
inline Matrix exact_gaussian_attention(const Matrix& q, const Matrix& v,
                                       std::size_t d_e) {
  if (q.rows() != v.rows()) {
    throw ShapeError("exact_gaussian_attention: q and v row counts differ");
  }
  Matrix s = gaussian_attention_matrix(q, q, d_e);
  return matmul(s, v);
}

// Quadratic baseline: row-softmax attention applied to V.
inline Matrix exact_softmax_attention(const Matrix& q, const Matrix& v,
                                      std::size_t d_e) {
  if (q.rows() != v.rows()) {
    throw ShapeError("exact_softmax_attention: q and v row counts differ");
  }
  Matrix s = softmax_attention_matrix(q, q, d_e);
  return matmul(s, v);
}

// ||S_hat - S||_F / ||S||_F for a single-head token set; quadratic by design,
// guarded so it is never called at benchmark scale.
inline double approximation_error(const TokenSequence& q, const AttentionConfig& cfg) {
  const std::size_t n = q.n();
  if (n > 4096) {
    throw DomainError("approximation_error: n exceeds the 4096 materialization guard");
  }
  const std::size_t d = q.features.cols();
  const TokenSequence q_tilde = sample(q, cfg.sampler);
  const Matrix a = gaussian_attention_matrix(q_tilde.features, q_tilde.features, d);
  const Matrix p = gaussian_attention_matrix(q_tilde.features, q.features, d);
  auto [a_t, report] = newton_pinv(a, cfg.newton);
  const Matrix s_hat = matmul(transpose(p), matmul(a_t, p));
  const Matrix s = gaussian_attention_matrix(q.features, q.features, d);
  return frobenius_norm(sub(s_hat, s)) / frobenius_norm(s);
}

}  // namespace sfa
