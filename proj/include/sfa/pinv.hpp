#pragma once

// Moore-Penrose pseudoinverse of symmetric PSD Gram matrices.
//
// Production path: Newton-Raphson iteration A_{k+1} = 2A_k - A_k A A_k from
// A_0 = alpha*A, run for a fixed number of steps with a per-step residual
// trace. Oracle path: eigendecomposition with eigenvalue truncation.
//
// The iteration converges exactly when every positive eigenvalue l of A
// satisfies |1 - alpha*l^2| < 1, i.e. alpha*lmax^2 < 2. The one-norm search
// rule (smallest n with ||I - A*2*beta^n/||A||_1^2||_1 below one) does not by
// itself exclude the alpha*lmax^2 == 2 boundary, where the iteration collapses
// onto the null map, so alpha_init additionally enforces the strict spectral
// contraction and falls back to alpha = 1/lmax^2 when the one-norm inequality
// has no solution (it has none whenever A is not strictly diagonally
// dominant, e.g. any singular Gram matrix).

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sfa/eigh.hpp"
#include "sfa/matrix.hpp"

namespace sfa {

enum class AlphaRule {
  BetaSearch,  // geometric search over alpha = 2*beta^n/||A||_1^2
  OneNorm,     // plain alpha = 2/||A||_1^2, no search
};

struct NewtonConfig {
  std::size_t max_iters = 20;
  double beta = 0.5;
  std::size_t alpha_search_cap = 100;
  NormKind norm_kind = NormKind::Frobenius;
  AlphaRule alpha_rule = AlphaRule::BetaSearch;
};

struct AlphaInit {
  double alpha = 0.0;
  std::size_t exponent = 0;
  // False when the one-norm inequality had no solution within the search cap
  // and the spectral fallback was used instead.
  bool l1_satisfied = true;
};

struct PinvReport {
  std::size_t iterations_run = 0;
  std::vector<double> residuals;  // length iterations_run + 1, includes k = 0
  double alpha_used = 0.0;
  std::size_t alpha_exponent = 0;
  bool alpha_l1_satisfied = true;
};

// ||A A_k A - A|| / ||A|| in the chosen norm: the normalized violation of the
// first Penrose condition.
inline double convergence_residual(const Matrix& a, const Matrix& a_k, NormKind kind) {
  if (a.rows() != a.cols() || !a.same_shape(a_k)) {
    throw ShapeError("convergence_residual: need square matrices of equal shape");
  }
  Matrix m = matmul(matmul(a, a_k), a);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] -= a.data()[i];
  return norm(m, kind) / norm(a, kind);
}

namespace detail {

inline void require_symmetric(const Matrix& a, const char* who, double tol = 1e-8) {
  if (a.rows() != a.cols() || a.empty()) {
    throw DomainError(std::string(who) + ": matrix must be square and non-empty");
  }
  const double scale = std::max(1.0, max_abs(a));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol * scale) {
        throw DomainError(std::string(who) + ": matrix is not symmetric");
      }
}

}  // namespace detail

inline AlphaInit alpha_init(const Matrix& a, const NewtonConfig& cfg = {}) {
  detail::require_symmetric(a, "alpha_init");
  const double n1 = one_norm(a);
  if (n1 == 0.0) throw DomainError("alpha_init: zero matrix has no usable one-norm");
  const double base = 2.0 / (n1 * n1);

  if (cfg.alpha_rule == AlphaRule::OneNorm) {
    return {base, 0, true};
  }

  const double lmax = detail::power_lambda_max_sym(a);
  // Strict contraction bound with a small margin; at alpha*lmax^2 == 2 the
  // top eigencomponent maps exactly onto zero and never recovers.
  const double spectral_cap = 2.0 * (1.0 - 1e-3);

  // Column sums of |off-diagonal| entries, reused for every candidate alpha.
  const std::size_t m = a.rows();
  std::vector<double> off(m, 0.0), diag(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      if (i == j) diag[j] = a(j, j);
      else off[j] += std::abs(a(i, j));
    }
  }

  double alpha = base;
  for (std::size_t n = 0; n <= cfg.alpha_search_cap; ++n, alpha *= cfg.beta) {
    double col_norm = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      col_norm = std::max(col_norm, std::abs(1.0 - alpha * diag[j]) + alpha * off[j]);
    }
    if (col_norm < 1.0 && alpha * lmax * lmax <= spectral_cap) {
      return {alpha, n, true};
    }
  }
  return {1.0 / (lmax * lmax), cfg.alpha_search_cap, false};
}

// One Newton step; shared with the autograd graph so forward values match
// bit for bit.
inline Matrix newton_step_matrix(const Matrix& a_k, const Matrix& a) {
  Matrix t = matmul(matmul(a_k, a), a_k);
  Matrix next(a_k.rows(), a_k.cols());
  for (std::size_t i = 0; i < next.size(); ++i) {
    next.data()[i] = 2.0 * a_k.data()[i] - t.data()[i];
  }
  return next;
}

inline std::pair<Matrix, PinvReport> newton_pinv(const Matrix& a,
                                                 const NewtonConfig& cfg = {}) {
  detail::require_symmetric(a, "newton_pinv");
  const AlphaInit init = alpha_init(a, cfg);

  PinvReport report;
  report.alpha_used = init.alpha;
  report.alpha_exponent = init.exponent;
  report.alpha_l1_satisfied = init.l1_satisfied;
  report.iterations_run = cfg.max_iters;
  report.residuals.reserve(cfg.max_iters + 1);

  Matrix a_k = scale(a, init.alpha);
  report.residuals.push_back(convergence_residual(a, a_k, cfg.norm_kind));
  for (std::size_t k = 1; k <= cfg.max_iters; ++k) {
    a_k = newton_step_matrix(a_k, a);
    if (!all_finite(a_k)) {
      throw NumericError("newton_pinv: non-finite entries at iteration " +
                         std::to_string(k));
    }
    report.residuals.push_back(convergence_residual(a, a_k, cfg.norm_kind));
  }
  return {std::move(a_k), std::move(report)};
}

// Oracle pseudoinverse: V diag(1/l_i for l_i above threshold, else 0) V^T.
// `eig_threshold` is relative to the largest eigenvalue.
inline Matrix eigh_pinv(const Matrix& a, double eig_threshold = 1e-10) {
  detail::require_symmetric(a, "eigh_pinv");
  auto eig = jacobi_eigh(a);
  double lmax = 0.0;
  for (double l : eig.eigenvalues) lmax = std::max(lmax, l);
  const double cutoff = eig_threshold * lmax;

  const std::size_t n = a.rows();
  Matrix inv_lam(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    inv_lam(i, i) = (eig.eigenvalues[i] > cutoff) ? 1.0 / eig.eigenvalues[i] : 0.0;
  }
  return matmul(matmul(eig.eigenvectors, inv_lam), transpose(eig.eigenvectors));
}

}  // namespace sfa
