#pragma once

// Symmetric eigendecomposition by cyclic Jacobi rotations. Every matrix that
// needs a pseudoinverse in this library is a symmetric PSD Gram matrix, so a
// full SVD is never required.

#include <cmath>
#include <vector>

#include "sfa/matrix.hpp"

namespace sfa {

struct EighResult {
  std::vector<double> eigenvalues;  // ascending
  Matrix eigenvectors;              // columns, matching eigenvalue order
};

// Cyclic Jacobi sweeps until the off-diagonal Frobenius mass drops below
// 1e-12 of the total, capped at 100 sweeps. `sym_tol` bounds the accepted
// input asymmetry, relative to the largest entry.
inline EighResult jacobi_eigh(const Matrix& a, double sym_tol = 1e-8) {
  if (a.rows() != a.cols() || a.empty()) {
    throw DomainError("jacobi_eigh: matrix must be square and non-empty");
  }
  const std::size_t n = a.rows();
  const double scale = std::max(1.0, max_abs(a));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(a(i, j) - a(j, i)) > sym_tol * scale) {
        throw DomainError("jacobi_eigh: matrix is not symmetric within tolerance");
      }
    }
  }

  Matrix m = a;
  // Symmetrize exactly so rotations keep both triangles consistent.
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (m(i, j) + m(j, i));
      m(i, j) = avg;
      m(j, i) = avg;
    }
  }
  Matrix v = Matrix::identity(n);

  const double total = frobenius_norm(m);
  const double off_tol = 1e-12 * std::max(total, 1e-300);

  for (std::size_t sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * m(p, q) * m(p, q);
    if (std::sqrt(off) <= off_tol) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (apq == 0.0) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0)
                             ? 1.0 / (theta + std::sqrt(theta * theta + 1.0))
                             : 1.0 / (theta - std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        const double app = m(p, p), aqq = m(q, q);
        m(p, p) = app - t * apq;
        m(q, q) = aqq + t * apq;
        m(p, q) = 0.0;
        m(q, p) = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (i == p || i == q) continue;
          const double aip = m(i, p), aiq = m(i, q);
          m(i, p) = c * aip - s * aiq;
          m(p, i) = m(i, p);
          m(i, q) = s * aip + c * aiq;
          m(q, i) = m(i, q);
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vip = v(i, p), viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
  }

  // Sort ascending, permuting eigenvector columns along.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return m(x, x) < m(y, y); });

  EighResult result;
  result.eigenvalues.resize(n);
  result.eigenvectors = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    result.eigenvalues[k] = m(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) result.eigenvectors(i, k) = v(i, order[k]);
  }
  return result;
}

}  // namespace sfa
