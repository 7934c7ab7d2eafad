#pragma once

// Dense row-major double matrices plus the allocation accounting used by the
// scaling benchmarks. Matrices are immutable value types in practice: every
// operation returns a fresh matrix, so sharing across threads is safe.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace sfa {

class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Allocation accounting
//
// Counts matrix buffer bytes only (not transient scalars or bookkeeping).
// Scopes nest; an allocation is attributed to the innermost open scope.
// Everything is thread-local: a measurement never sees another thread.
// ---------------------------------------------------------------------------

struct AllocStats {
  std::uint64_t peak_live_bytes = 0;
  std::uint64_t total_allocated_bytes = 0;
  std::uint64_t allocation_count = 0;
};

namespace alloc_detail {

struct ScopeRecord {
  std::int64_t live_at_start = 0;
  AllocStats stats;
};

inline thread_local std::int64_t g_live_bytes = 0;
inline thread_local std::vector<ScopeRecord> g_scopes;

inline void on_alloc(std::size_t bytes) {
  g_live_bytes += static_cast<std::int64_t>(bytes);
  if (!g_scopes.empty()) {
    ScopeRecord& top = g_scopes.back();
    top.stats.total_allocated_bytes += bytes;
    top.stats.allocation_count += 1;
    const std::int64_t rel = g_live_bytes - top.live_at_start;
    if (rel > static_cast<std::int64_t>(top.stats.peak_live_bytes)) {
      top.stats.peak_live_bytes = static_cast<std::uint64_t>(rel);
    }
  }
}

inline void on_free(std::size_t bytes) {
  g_live_bytes -= static_cast<std::int64_t>(bytes);
}

template <typename T>
struct TrackedAllocator {
  using value_type = T;
  TrackedAllocator() = default;
  template <typename U>
  TrackedAllocator(const TrackedAllocator<U>&) {}
  T* allocate(std::size_t n) {
    on_alloc(n * sizeof(T));
    return std::allocator<T>().allocate(n);
  }
  void deallocate(T* p, std::size_t n) {
    on_free(n * sizeof(T));
    std::allocator<T>().deallocate(p, n);
  }
  bool operator==(const TrackedAllocator&) const { return true; }
  bool operator!=(const TrackedAllocator&) const { return false; }
};

}  // namespace alloc_detail

class AllocScope {
 public:
  AllocScope() {
    alloc_detail::g_scopes.push_back({alloc_detail::g_live_bytes, {}});
  }
  ~AllocScope() {
    if (!done_) alloc_detail::g_scopes.pop_back();
  }
  AllocScope(const AllocScope&) = delete;
  AllocScope& operator=(const AllocScope&) = delete;

  // Closes the scope and returns what it saw.
  AllocStats finish() {
    AllocStats s = alloc_detail::g_scopes.back().stats;
    alloc_detail::g_scopes.pop_back();
    done_ = true;
    return s;
  }

 private:
  bool done_ = false;
};

template <typename F>
auto with_alloc_tracking(F&& work) {
  AllocScope scope;
  if constexpr (std::is_void_v<std::invoke_result_t<F>>) {
    work();
    return scope.finish();
  } else {
    auto result = work();
    AllocStats stats = scope.finish();
    return std::make_pair(std::move(result), stats);
  }
}

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols),
        data_(values.begin(), values.end()) {
    if (data_.size() != rows * cols) {
      throw ShapeError("Matrix: value count does not match rows*cols");
    }
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
      std::size_t j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double, alloc_detail::TrackedAllocator<double>> data_;
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch (" +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
  }
}

// C = A*B. Parallelized over output rows with a fixed per-element accumulation
// order, so results are bit-identical regardless of thread count.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + ")");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Matrix c(m, n);
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  const std::int64_t mrows = static_cast<std::int64_t>(m);
  const bool big = m * n * k >= (std::size_t{1} << 18);
#pragma omp parallel for schedule(static) if (big)
  for (std::int64_t i = 0; i < mrows; ++i) {
    const double* ai = A + i * k;
    double* ci = C + i * n;
    constexpr std::size_t kBlock = 512;
    for (std::size_t jb = 0; jb < n; jb += kBlock) {
      const std::size_t je = std::min(n, jb + kBlock);
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = ai[p];
        const double* bp = B + p * n;
        for (std::size_t j = jb; j < je; ++j) ci[j] += aip * bp[j];
      }
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
  return c;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "sub");
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] - b.data()[i];
  return c;
}

inline Matrix scale(const Matrix& a, double s) {
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * s;
  return c;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * b.data()[i];
  return c;
}

template <typename F>
inline void map_inplace(Matrix& a, F&& f) {
  double* p = a.data();
  const std::int64_t n = static_cast<std::int64_t>(a.size());
#pragma omp parallel for schedule(static) if (n >= (1 << 16))
  for (std::int64_t i = 0; i < n; ++i) p[i] = f(p[i]);
}

inline Matrix col_block(const Matrix& a, std::size_t c0, std::size_t c1) {
  if (c1 > a.cols() || c0 > c1) throw ShapeError("col_block: bad column range");
  Matrix out(a.rows(), c1 - c0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* src = a.row(i) + c0;
    std::copy(src, src + (c1 - c0), out.row(i));
  }
  return out;
}

inline Matrix row_block(const Matrix& a, std::size_t r0, std::size_t r1) {
  if (r1 > a.rows() || r0 > r1) throw ShapeError("row_block: bad row range");
  Matrix out(r1 - r0, a.cols());
  std::copy(a.row(r0), a.row(r0) + (r1 - r0) * a.cols(), out.data());
  return out;
}

inline void set_col_block(Matrix& dst, std::size_t c0, const Matrix& src) {
  if (src.rows() != dst.rows() || c0 + src.cols() > dst.cols()) {
    throw ShapeError("set_col_block: block does not fit");
  }
  for (std::size_t i = 0; i < src.rows(); ++i) {
    std::copy(src.row(i), src.row(i) + src.cols(), dst.row(i) + c0);
  }
}

inline bool all_finite(const Matrix& a) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a.data()[i])) return false;
  }
  return true;
}

inline double max_abs(const Matrix& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i]));
  return m;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Norms
// ---------------------------------------------------------------------------

enum class NormKind { One, Frobenius, Spectral };

inline double one_norm(const Matrix& a) {
  if (a.empty()) throw ShapeError("one_norm: empty matrix");
  double best = 0.0;
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += std::abs(a(i, j));
    best = std::max(best, s);
  }
  return best;
}

inline double frobenius_norm(const Matrix& a) {
  if (a.empty()) throw ShapeError("frobenius_norm: empty matrix");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * a.data()[i];
  return std::sqrt(s);
}

namespace detail {

// Largest-magnitude eigenvalue of a symmetric matrix by power iteration with a
// fixed pseudo-random start vector. Relative tolerance 1e-8, at most 1000
// iterations.
inline double power_lambda_max_sym(const Matrix& a, double rtol = 1e-8,
                                   std::size_t max_iters = 1000) {
  const std::size_t n = a.rows();
  std::vector<double> v(n), av(n);
  std::mt19937_64 eng(0x5eedULL);
  std::uniform_real_distribution<double> dist(0.1, 1.0);
  for (std::size_t i = 0; i < n; ++i) v[i] = dist(eng);
  double vnorm = 0.0;
  for (double x : v) vnorm += x * x;
  vnorm = std::sqrt(vnorm);
  for (double& x : v) x /= vnorm;

  double lambda = 0.0;
  for (std::size_t it = 0; it < max_iters; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      const double* ai = a.row(i);
      for (std::size_t j = 0; j < n; ++j) s += ai[j] * v[j];
      av[i] = s;
    }
    double next = 0.0;
    for (std::size_t i = 0; i < n; ++i) next += v[i] * av[i];
    double avnorm = 0.0;
    for (double x : av) avnorm += x * x;
    avnorm = std::sqrt(avnorm);
    if (avnorm == 0.0) return 0.0;
    for (std::size_t i = 0; i < n; ++i) v[i] = av[i] / avnorm;
    if (it > 0 && std::abs(next - lambda) <= rtol * std::abs(next)) {
      return next;
    }
    lambda = next;
  }
  return lambda;
}

}  // namespace detail

// Largest singular value, computed by power iteration on the smaller Gram
// matrix of A.
inline double spectral_norm(const Matrix& a) {
  if (a.empty()) throw ShapeError("spectral_norm: empty matrix");
  Matrix g = (a.rows() >= a.cols()) ? matmul(transpose(a), a)
                                    : matmul(a, transpose(a));
  const double lmax = detail::power_lambda_max_sym(g);
  return std::sqrt(std::max(0.0, lmax));
}

inline double norm(const Matrix& a, NormKind kind) {
  switch (kind) {
    case NormKind::One: return one_norm(a);
    case NormKind::Frobenius: return frobenius_norm(a);
    case NormKind::Spectral: return spectral_norm(a);
  }
  throw DomainError("norm: unknown kind");
}

}  // namespace sfa
