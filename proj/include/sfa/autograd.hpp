#pragma once

// Minimal reverse-mode differentiation over the matrix operations reachable
// from the attention pipeline. One Tape per training step; nodes are recorded
// in topological order (parents precede children) and backward visits each
// node exactly once, accumulating additively into shared parents.
//
// Forward values are computed by the same non-autograd routines used
// elsewhere in the library, so both paths agree bit for bit.

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "sfa/kernel.hpp"
#include "sfa/matrix.hpp"
#include "sfa/pinv.hpp"
#include "sfa/sampling.hpp"

namespace sfa::autograd {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  const Matrix& grad() const;
};

class Tape {
 public:
  Var leaf(Matrix value, bool requires_grad) {
    return add_node(std::move(value), {}, nullptr, requires_grad);
  }

  Var constant(Matrix value) { return leaf(std::move(value), false); }

  std::size_t size() const { return nodes_.size(); }
  int next_id() const { return static_cast<int>(nodes_.size()); }

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].requires_grad; }

  const Matrix& grad(int id) const {
    const Node& n = nodes_[id];
    if (n.grad.empty()) {
      throw UsageError("Tape: gradient read before backward reached this node");
    }
    return n.grad;
  }

  void accumulate(int id, Matrix contribution) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = std::move(contribution);
    } else {
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        n.grad.data()[i] += contribution.data()[i];
      }
    }
  }

  // Seeds d(out)/d(out) = 1 and walks the tape in reverse creation order.
  void backward(const Var& out) {
    if (out.tape != this) throw UsageError("Tape::backward: var from another tape");
    if (value(out.id).rows() != 1 || value(out.id).cols() != 1) {
      throw UsageError("Tape::backward: output must be a 1x1 scalar");
    }
    Matrix seed(1, 1);
    seed(0, 0) = 1.0;
    accumulate(out.id, std::move(seed));
    for (int id = out.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  Var add_node(Matrix value, std::vector<int> parents,
               std::function<void(Tape&, const Matrix&)> backward,
               bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad,
                          std::move(parents), std::move(backward)});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // materialized lazily during backward
    bool requires_grad = false;
    std::vector<int> parents;
    std::function<void(Tape&, const Matrix&)> backward;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(id); }
inline const Matrix& Var::grad() const { return tape->grad(id); }

namespace ag_detail {

inline Tape* same_tape(const Var& a, const Var& b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw UsageError("autograd: vars belong to different tapes");
  }
  return a.tape;
}

}  // namespace ag_detail

inline Var matmul(const Var& a, const Var& b) {
  Tape* t = ag_detail::same_tape(a, b);
  const int ia = a.id, ib = b.id;
  const bool rg = t->needs_grad(ia) || t->needs_grad(ib);
  return t->add_node(
      sfa::matmul(a.value(), b.value()), {ia, ib},
      rg ? std::function<void(Tape&, const Matrix&)>(
               [ia, ib](Tape& tp, const Matrix& g) {
                 if (tp.needs_grad(ia)) {
                   tp.accumulate(ia, sfa::matmul(g, sfa::transpose(tp.value(ib))));
                 }
                 if (tp.needs_grad(ib)) {
                   tp.accumulate(ib, sfa::matmul(sfa::transpose(tp.value(ia)), g));
                 }
               })
         : nullptr,
      rg);
}

inline Var transpose(const Var& a) {
  Tape* t = a.tape;
  const int ia = a.id;
  return t->add_node(
      sfa::transpose(a.value()), {ia},
      [ia](Tape& tp, const Matrix& g) { tp.accumulate(ia, sfa::transpose(g)); },
      t->needs_grad(ia));
}

inline Var add(const Var& a, const Var& b) {
  Tape* t = ag_detail::same_tape(a, b);
  const int ia = a.id, ib = b.id;
  return t->add_node(
      sfa::add(a.value(), b.value()), {ia, ib},
      [ia, ib](Tape& tp, const Matrix& g) {
        tp.accumulate(ia, g);
        tp.accumulate(ib, g);
      },
      t->needs_grad(ia) || t->needs_grad(ib));
}

inline Var sub(const Var& a, const Var& b) {
  Tape* t = ag_detail::same_tape(a, b);
  const int ia = a.id, ib = b.id;
  return t->add_node(
      sfa::sub(a.value(), b.value()), {ia, ib},
      [ia, ib](Tape& tp, const Matrix& g) {
        tp.accumulate(ia, g);
        tp.accumulate(ib, sfa::scale(g, -1.0));
      },
      t->needs_grad(ia) || t->needs_grad(ib));
}

inline Var scalar_mul(const Var& a, double c) {
  Tape* t = a.tape;
  const int ia = a.id;
  return t->add_node(
      sfa::scale(a.value(), c), {ia},
      [ia, c](Tape& tp, const Matrix& g) { tp.accumulate(ia, sfa::scale(g, c)); },
      t->needs_grad(ia));
}

inline Var elementwise_exp(const Var& a) {
  Tape* t = a.tape;
  Matrix out = a.value();
  map_inplace(out, [](double x) { return std::exp(x); });
  const int ia = a.id;
  const int self = t->next_id();
  return t->add_node(
      std::move(out), {ia},
      [ia, self](Tape& tp, const Matrix& g) {
        tp.accumulate(ia, sfa::hadamard(g, tp.value(self)));
      },
      t->needs_grad(ia));
}

inline Var relu(const Var& a) {
  Tape* t = a.tape;
  Matrix out = a.value();
  map_inplace(out, [](double x) { return x > 0.0 ? x : 0.0; });
  const int ia = a.id;
  return t->add_node(
      std::move(out), {ia},
      [ia](Tape& tp, const Matrix& g) {
        const Matrix& x = tp.value(ia);
        Matrix gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) {
          gx.data()[i] = x.data()[i] > 0.0 ? g.data()[i] : 0.0;
        }
        tp.accumulate(ia, std::move(gx));
      },
      t->needs_grad(ia));
}

namespace ag_detail {

// Shared by pairwise_sq_dist and the fused gaussian_kernel: scatter the
// gradient of D[i][j] = ||a_i - b_j||^2 back to a and b.
inline void pairwise_backward(Tape& tp, const Matrix& gd, int ia, int ib) {
  const Matrix& av = tp.value(ia);
  const Matrix& bv = tp.value(ib);
  if (tp.needs_grad(ia)) {
    Matrix ga = sfa::matmul(gd, bv);  // rows(a) x d
    for (std::size_t i = 0; i < av.rows(); ++i) {
      double rs = 0.0;
      for (std::size_t j = 0; j < gd.cols(); ++j) rs += gd(i, j);
      for (std::size_t c = 0; c < av.cols(); ++c) {
        ga(i, c) = 2.0 * (rs * av(i, c) - ga(i, c));
      }
    }
    tp.accumulate(ia, std::move(ga));
  }
  if (tp.needs_grad(ib)) {
    Matrix gb = sfa::matmul(sfa::transpose(gd), av);  // rows(b) x d
    for (std::size_t j = 0; j < bv.rows(); ++j) {
      double cs = 0.0;
      for (std::size_t i = 0; i < gd.rows(); ++i) cs += gd(i, j);
      for (std::size_t c = 0; c < bv.cols(); ++c) {
        gb(j, c) = 2.0 * (cs * bv(j, c) - gb(j, c));
      }
    }
    tp.accumulate(ib, std::move(gb));
  }
}

}  // namespace ag_detail

inline Var pairwise_sq_dist(const Var& a, const Var& b) {
  Tape* t = ag_detail::same_tape(a, b);
  const int ia = a.id, ib = b.id;
  return t->add_node(
      sfa::pairwise_sq_dist(a.value(), b.value()), {ia, ib},
      [ia, ib](Tape& tp, const Matrix& g) {
        ag_detail::pairwise_backward(tp, g, ia, ib);
      },
      t->needs_grad(ia) || t->needs_grad(ib));
}

// Fused S = exp(-pairwise_sq_dist(a, b) / (2 sqrt(d_e))); identical math to
// the three-op composition, one node on the tape.
inline Var gaussian_kernel(const Var& a, const Var& b, std::size_t d_e) {
  Tape* t = ag_detail::same_tape(a, b);
  const int ia = a.id, ib = b.id;
  const int self = t->next_id();
  const double inv_scale = -1.0 / (2.0 * std::sqrt(static_cast<double>(d_e)));
  return t->add_node(
      sfa::gaussian_attention_matrix(a.value(), b.value(), d_e), {ia, ib},
      [ia, ib, self, inv_scale](Tape& tp, const Matrix& g) {
        Matrix gd = sfa::hadamard(g, tp.value(self));
        for (std::size_t i = 0; i < gd.size(); ++i) gd.data()[i] *= inv_scale;
        ag_detail::pairwise_backward(tp, gd, ia, ib);
      },
      t->needs_grad(ia) || t->needs_grad(ib));
}

// One unrolled Newton-Raphson step A_next = 2 A_k - A_k A A_k. Forward is the
// shared newton_step_matrix; backward is the exact derivative of this step.
inline Var newton_step(const Var& a_k, const Var& a) {
  Tape* t = ag_detail::same_tape(a_k, a);
  const int ik = a_k.id, ia = a.id;
  return t->add_node(
      sfa::newton_step_matrix(a_k.value(), a.value()), {ik, ia},
      [ik, ia](Tape& tp, const Matrix& g) {
        const Matrix ak_t = sfa::transpose(tp.value(ik));
        if (tp.needs_grad(ik)) {
          const Matrix a_t = sfa::transpose(tp.value(ia));
          Matrix gk = sfa::scale(g, 2.0);
          const Matrix term1 = sfa::matmul(sfa::matmul(g, ak_t), a_t);
          const Matrix term2 = sfa::matmul(a_t, sfa::matmul(ak_t, g));
          for (std::size_t i = 0; i < gk.size(); ++i) {
            gk.data()[i] -= term1.data()[i] + term2.data()[i];
          }
          tp.accumulate(ik, std::move(gk));
        }
        if (tp.needs_grad(ia)) {
          tp.accumulate(ia, sfa::scale(sfa::matmul(sfa::matmul(ak_t, g), ak_t), -1.0));
        }
      },
      t->needs_grad(ik) || t->needs_grad(ia));
}

// Per-row normalization with learned scale and shift (1 x d each).
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta,
                      double eps = 1e-5) {
  Tape* t = ag_detail::same_tape(x, gamma);
  ag_detail::same_tape(x, beta);
  const Matrix& xv = x.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (gamma.value().rows() != 1 || gamma.value().cols() != d ||
      beta.value().rows() != 1 || beta.value().cols() != d) {
    throw ShapeError("layer_norm: gamma and beta must be 1 x d");
  }

  Matrix xhat(n, d);
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = xv.row(i);
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xi[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xi[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (std::size_t j = 0; j < d; ++j) xhat(i, j) = (xi[j] - mu) * is;
  }
  Matrix out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out(i, j) = xhat(i, j) * gamma.value()(0, j) + beta.value()(0, j);
    }
  }

  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return t->add_node(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& tp, const Matrix& g) {
        const std::size_t n = g.rows(), d = g.cols();
        const Matrix& gam = tp.value(ig);
        if (tp.needs_grad(ig)) {
          Matrix gg(1, d);
          for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += g(i, j) * xhat(i, j);
            gg(0, j) = s;
          }
          tp.accumulate(ig, std::move(gg));
        }
        if (tp.needs_grad(ib)) {
          Matrix gb(1, d);
          for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += g(i, j);
            gb(0, j) = s;
          }
          tp.accumulate(ib, std::move(gb));
        }
        if (tp.needs_grad(ix)) {
          Matrix gx(n, d);
          for (std::size_t i = 0; i < n; ++i) {
            double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g(i, j) * gam(0, j);
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat(i, j);
            }
            mean_dxhat /= static_cast<double>(d);
            mean_dxhat_xhat /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g(i, j) * gam(0, j);
              gx(i, j) = inv_std[i] * (dxh - mean_dxhat - xhat(i, j) * mean_dxhat_xhat);
            }
          }
          tp.accumulate(ix, std::move(gx));
        }
      },
      t->needs_grad(ix) || t->needs_grad(ig) || t->needs_grad(ib));
}

// Non-overlapping k x k window means over a token grid (the avg_pool
// sampler). `blocks` > 1 pools each of `blocks` stacked grids independently.
inline Var window_avg_pool(const Var& x, std::size_t grid_h, std::size_t grid_w,
                           std::size_t k, std::size_t blocks = 1) {
  Tape* t = x.tape;
  const Matrix& xv = x.value();
  const std::size_t n = grid_h * grid_w;
  if (xv.rows() != n * blocks) throw ShapeError("window_avg_pool: row count mismatch");
  if (grid_h % k != 0 || grid_w % k != 0) {
    throw ShapeError("window_avg_pool: grid not divisible by kernel");
  }
  const std::size_t m = (grid_h / k) * (grid_w / k);
  const std::size_t d = xv.cols();
  Matrix out(m * blocks, d);
  for (std::size_t s = 0; s < blocks; ++s) {
    Matrix pooled = avg_pool_matrix(row_block(xv, s * n, (s + 1) * n), grid_h, grid_w, k);
    for (std::size_t r = 0; r < m; ++r) {
      std::copy(pooled.row(r), pooled.row(r) + d, out.row(s * m + r));
    }
  }
  const int ix = x.id;
  return t->add_node(
      std::move(out), {ix},
      [ix, grid_h, grid_w, k, blocks](Tape& tp, const Matrix& g) {
        const std::size_t n = grid_h * grid_w;
        const std::size_t ow = grid_w / k, oh = grid_h / k;
        const std::size_t m = oh * ow;
        const std::size_t d = g.cols();
        const double inv = 1.0 / static_cast<double>(k * k);
        Matrix gx(n * blocks, d);
        for (std::size_t s = 0; s < blocks; ++s) {
          for (std::size_t wy = 0; wy < oh; ++wy) {
            for (std::size_t wx = 0; wx < ow; ++wx) {
              const double* gr = g.row(s * m + wy * ow + wx);
              for (std::size_t dy = 0; dy < k; ++dy) {
                for (std::size_t dx = 0; dx < k; ++dx) {
                  double* dst = gx.row(s * n + (wy * k + dy) * grid_w + (wx * k + dx));
                  for (std::size_t c = 0; c < d; ++c) dst[c] += gr[c] * inv;
                }
              }
            }
          }
        }
        tp.accumulate(ix, std::move(gx));
      },
      t->needs_grad(ix));
}

// Convenience alias matching the sampler vocabulary: pooling collapses window
// rows to their mean.
inline Var row_mean_pool(const Var& x, std::size_t grid_h, std::size_t grid_w,
                         std::size_t k) {
  return window_avg_pool(x, grid_h, grid_w, k);
}

// Strided bias-free convolution sampler with learnable weights.
// `blocks` stacked grids share the weights.
inline Var conv_sample(const Var& x, std::size_t grid_h, std::size_t grid_w,
                       std::size_t k, const Var& weights, std::size_t blocks = 1) {
  Tape* t = ag_detail::same_tape(x, weights);
  const Matrix& xv = x.value();
  const std::size_t n = grid_h * grid_w;
  if (xv.rows() != n * blocks) throw ShapeError("conv_sample: row count mismatch");
  const std::size_t d = xv.cols();
  const std::size_t m = (grid_h / k) * (grid_w / k);
  Matrix out(m * blocks, d);
  for (std::size_t s = 0; s < blocks; ++s) {
    Matrix conv = conv_sample_matrix(row_block(xv, s * n, (s + 1) * n), grid_h,
                                     grid_w, k, weights.value());
    for (std::size_t r = 0; r < m; ++r) {
      std::copy(conv.row(r), conv.row(r) + d, out.row(s * m + r));
    }
  }
  const int ix = x.id, iw = weights.id;
  return t->add_node(
      std::move(out), {ix, iw},
      [ix, iw, grid_h, grid_w, k, blocks](Tape& tp, const Matrix& g) {
        const Matrix& xv = tp.value(ix);
        const Matrix& wv = tp.value(iw);
        const std::size_t n = grid_h * grid_w;
        const std::size_t ow = grid_w / k, oh = grid_h / k;
        const std::size_t m = oh * ow;
        const std::size_t d = xv.cols();
        Matrix gx(xv.rows(), d);
        Matrix gw(wv.rows(), wv.cols());
        for (std::size_t s = 0; s < blocks; ++s) {
          for (std::size_t wy = 0; wy < oh; ++wy) {
            for (std::size_t wx = 0; wx < ow; ++wx) {
              const double* gr = g.row(s * m + wy * ow + wx);
              for (std::size_t dy = 0; dy < k; ++dy) {
                for (std::size_t dx = 0; dx < k; ++dx) {
                  const std::size_t cell = dy * k + dx;
                  const std::size_t row = s * n + (wy * k + dy) * grid_w + (wx * k + dx);
                  const double* xr = xv.row(row);
                  double* gxr = gx.row(row);
                  for (std::size_t cin = 0; cin < d; ++cin) {
                    const double* wrow = wv.row(cell * d + cin);
                    double* gwrow = gw.row(cell * d + cin);
                    double acc = 0.0;
                    for (std::size_t cout = 0; cout < d; ++cout) {
                      acc += gr[cout] * wrow[cout];
                      gwrow[cout] += xr[cin] * gr[cout];
                    }
                    gxr[cin] += acc;
                  }
                }
              }
            }
          }
        }
        if (tp.needs_grad(ix)) tp.accumulate(ix, std::move(gx));
        if (tp.needs_grad(iw)) tp.accumulate(iw, std::move(gw));
      },
      t->needs_grad(ix) || t->needs_grad(iw));
}

inline Var row_gather(const Var& x, std::vector<std::size_t> indices) {
  Tape* t = x.tape;
  const int ix = x.id;
  Matrix out = gather_rows(x.value(), indices);
  const std::size_t src_rows = x.value().rows();
  return t->add_node(
      std::move(out), {ix},
      [ix, indices = std::move(indices), src_rows](Tape& tp, const Matrix& g) {
        Matrix gx(src_rows, g.cols());
        for (std::size_t i = 0; i < indices.size(); ++i) {
          double* dst = gx.row(indices[i]);
          const double* src = g.row(i);
          for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += src[c];
        }
        tp.accumulate(ix, std::move(gx));
      },
      t->needs_grad(ix));
}

inline Var row_slice(const Var& x, std::size_t r0, std::size_t r1) {
  Tape* t = x.tape;
  const int ix = x.id;
  const std::size_t src_rows = x.value().rows();
  return t->add_node(
      row_block(x.value(), r0, r1), {ix},
      [ix, r0, src_rows](Tape& tp, const Matrix& g) {
        Matrix gx(src_rows, g.cols());
        for (std::size_t i = 0; i < g.rows(); ++i) {
          std::copy(g.row(i), g.row(i) + g.cols(), gx.row(r0 + i));
        }
        tp.accumulate(ix, std::move(gx));
      },
      t->needs_grad(ix));
}

inline Var col_slice(const Var& x, std::size_t c0, std::size_t c1) {
  Tape* t = x.tape;
  const int ix = x.id;
  const std::size_t src_cols = x.value().cols();
  return t->add_node(
      col_block(x.value(), c0, c1), {ix},
      [ix, c0, src_cols](Tape& tp, const Matrix& g) {
        Matrix gx(g.rows(), src_cols);
        for (std::size_t i = 0; i < g.rows(); ++i) {
          std::copy(g.row(i), g.row(i) + g.cols(), gx.row(i) + c0);
        }
        tp.accumulate(ix, std::move(gx));
      },
      t->needs_grad(ix));
}

inline Var col_concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("col_concat: no parts");
  Tape* t = parts[0].tape;
  std::size_t total = 0;
  bool rg = false;
  std::vector<int> ids;
  for (const Var& p : parts) {
    ag_detail::same_tape(parts[0], p);
    total += p.value().cols();
    rg = rg || t->needs_grad(p.id);
    ids.push_back(p.id);
  }
  const std::size_t rows = parts[0].value().rows();
  Matrix out(rows, total);
  std::size_t c0 = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    offsets.push_back(c0);
    set_col_block(out, c0, p.value());
    c0 += p.value().cols();
  }
  return t->add_node(
      std::move(out), ids,
      [ids, offsets](Tape& tp, const Matrix& g) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const std::size_t w = tp.value(ids[i]).cols();
          tp.accumulate(ids[i], col_block(g, offsets[i], offsets[i] + w));
        }
      },
      rg);
}

inline Var row_concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("row_concat: no parts");
  Tape* t = parts[0].tape;
  std::size_t total = 0;
  bool rg = false;
  std::vector<int> ids;
  for (const Var& p : parts) {
    ag_detail::same_tape(parts[0], p);
    total += p.value().rows();
    rg = rg || t->needs_grad(p.id);
    ids.push_back(p.id);
  }
  const std::size_t cols = parts[0].value().cols();
  Matrix out(total, cols);
  std::size_t r0 = 0;
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    offsets.push_back(r0);
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.row(r0));
    r0 += p.value().rows();
  }
  return t->add_node(
      std::move(out), ids,
      [ids, offsets](Tape& tp, const Matrix& g) {
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const std::size_t h = tp.value(ids[i]).rows();
          tp.accumulate(ids[i], row_block(g, offsets[i], offsets[i] + h));
        }
      },
      rg);
}

// y = x + b with b broadcast across rows (1 x d).
inline Var add_row_broadcast(const Var& x, const Var& b) {
  Tape* t = ag_detail::same_tape(x, b);
  const Matrix& xv = x.value();
  const Matrix& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != xv.cols()) {
    throw ShapeError("add_row_broadcast: bias must be 1 x cols");
  }
  Matrix out(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    for (std::size_t j = 0; j < xv.cols(); ++j) out(i, j) = xv(i, j) + bv(0, j);
  }
  const int ix = x.id, ib = b.id;
  return t->add_node(
      std::move(out), {ix, ib},
      [ix, ib](Tape& tp, const Matrix& g) {
        if (tp.needs_grad(ix)) tp.accumulate(ix, g);
        if (tp.needs_grad(ib)) {
          Matrix gb(1, g.cols());
          for (std::size_t j = 0; j < g.cols(); ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < g.rows(); ++i) s += g(i, j);
            gb(0, j) = s;
          }
          tp.accumulate(ib, std::move(gb));
        }
      },
      t->needs_grad(ix) || t->needs_grad(ib));
}

// y = x + tile(p, blocks): x is (blocks*n) x d, p is n x d.
inline Var tile_rows_add(const Var& x, const Var& p, std::size_t blocks) {
  Tape* t = ag_detail::same_tape(x, p);
  const Matrix& xv = x.value();
  const Matrix& pv = p.value();
  if (xv.rows() != pv.rows() * blocks || xv.cols() != pv.cols()) {
    throw ShapeError("tile_rows_add: shapes do not tile");
  }
  const std::size_t n = pv.rows(), d = pv.cols();
  Matrix out(xv.rows(), d);
  for (std::size_t s = 0; s < blocks; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* xr = xv.row(s * n + i);
      const double* pr = pv.row(i);
      double* or_ = out.row(s * n + i);
      for (std::size_t j = 0; j < d; ++j) or_[j] = xr[j] + pr[j];
    }
  }
  const int ix = x.id, ip = p.id;
  return t->add_node(
      std::move(out), {ix, ip},
      [ix, ip, blocks, n](Tape& tp, const Matrix& g) {
        if (tp.needs_grad(ix)) tp.accumulate(ix, g);
        if (tp.needs_grad(ip)) {
          Matrix gp(n, g.cols());
          for (std::size_t s = 0; s < blocks; ++s) {
            for (std::size_t i = 0; i < n; ++i) {
              const double* gr = g.row(s * n + i);
              double* dst = gp.row(i);
              for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += gr[j];
            }
          }
          tp.accumulate(ip, std::move(gp));
        }
      },
      t->needs_grad(ix) || t->needs_grad(ip));
}

// Mean over all rows -> 1 x d. With blocks > 1, each stacked block of
// rows/blocks rows is pooled separately -> blocks x d.
inline Var mean_pool_rows(const Var& x, std::size_t blocks = 1) {
  Tape* t = x.tape;
  const Matrix& xv = x.value();
  if (xv.rows() % blocks != 0) throw ShapeError("mean_pool_rows: uneven blocks");
  const std::size_t n = xv.rows() / blocks, d = xv.cols();
  Matrix out(blocks, d);
  for (std::size_t s = 0; s < blocks; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* xr = xv.row(s * n + i);
      for (std::size_t j = 0; j < d; ++j) out(s, j) += xr[j];
    }
    for (std::size_t j = 0; j < d; ++j) out(s, j) /= static_cast<double>(n);
  }
  const int ix = x.id;
  return t->add_node(
      std::move(out), {ix},
      [ix, blocks, n](Tape& tp, const Matrix& g) {
        const double inv = 1.0 / static_cast<double>(n);
        Matrix gx(n * blocks, g.cols());
        for (std::size_t s = 0; s < blocks; ++s) {
          for (std::size_t i = 0; i < n; ++i) {
            double* dst = gx.row(s * n + i);
            const double* gr = g.row(s);
            for (std::size_t j = 0; j < g.cols(); ++j) dst[j] = gr[j] * inv;
          }
        }
        tp.accumulate(ix, std::move(gx));
      },
      t->needs_grad(ix));
}

// Mean cross-entropy of row-wise logits against integer labels -> 1 x 1.
inline Var cross_entropy_with_logits(const Var& logits, std::vector<int> labels) {
  Tape* t = logits.tape;
  const Matrix& z = logits.value();
  const std::size_t n = z.rows(), c = z.cols();
  if (labels.size() != n) throw ShapeError("cross_entropy_with_logits: label count");

  Matrix probs(n, c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* zi = z.row(i);
    double mx = zi[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, zi[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs(i, j) = std::exp(zi[j] - mx);
      sum += probs(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) probs(i, j) /= sum;
    loss += std::log(sum) + mx - zi[labels[i]];
  }
  loss /= static_cast<double>(n);

  Matrix out(1, 1);
  out(0, 0) = loss;
  const int iz = logits.id;
  return t->add_node(
      std::move(out), {iz},
      [iz, labels = std::move(labels), probs = std::move(probs)](Tape& tp,
                                                                 const Matrix& g) {
        const double gs = g(0, 0) / static_cast<double>(probs.rows());
        Matrix gz = probs;
        for (std::size_t i = 0; i < gz.rows(); ++i) gz(i, labels[i]) -= 1.0;
        for (std::size_t i = 0; i < gz.size(); ++i) gz.data()[i] *= gs;
        tp.accumulate(iz, std::move(gz));
      },
      t->needs_grad(iz));
}

// Sum of squared entries -> 1 x 1 scalar.
inline Var sum_squares(const Var& x) {
  Tape* t = x.tape;
  const Matrix& xv = x.value();
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv.data()[i] * xv.data()[i];
  Matrix out(1, 1);
  out(0, 0) = s;
  const int ix = x.id;
  return t->add_node(
      std::move(out), {ix},
      [ix](Tape& tp, const Matrix& g) {
        tp.accumulate(ix, sfa::scale(tp.value(ix), 2.0 * g(0, 0)));
      },
      t->needs_grad(ix));
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckResult {
  std::vector<double> max_rel_err;  // one entry per parameter
  double worst = 0.0;
  bool pass = false;
};

// Central finite differences against the tape gradients. `build` is called as
// build(tape, vars) where vars[i] is a leaf for *params[i]; it must return a
// scalar Var and be deterministic (verified by double evaluation).
template <typename BuildFn>
GradCheckResult grad_check(BuildFn&& build, const std::vector<Matrix*>& params,
                           double h, double tol) {
  auto eval = [&](bool want_grads, std::vector<Matrix>* grads) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (Matrix* p : params) vars.push_back(tape.leaf(*p, true));
    Var out = build(tape, vars);
    const double loss = out.value()(0, 0);
    if (want_grads) {
      tape.backward(out);
      grads->clear();
      for (const Var& v : vars) grads->push_back(v.grad());
    }
    return loss;
  };

  const double l1 = eval(false, nullptr);
  const double l2 = eval(false, nullptr);
  if (!(l1 == l2)) {
    throw UsageError("grad_check: computation is not deterministic");
  }

  std::vector<Matrix> analytic;
  eval(true, &analytic);

  GradCheckResult result;
  result.max_rel_err.resize(params.size(), 0.0);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& m = *params[p];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double keep = m.data()[i];
      m.data()[i] = keep + h;
      const double lp = eval(false, nullptr);
      m.data()[i] = keep - h;
      const double lm = eval(false, nullptr);
      m.data()[i] = keep;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = analytic[p].data()[i];
      const double denom = std::max({std::abs(an), std::abs(fd), 1e-6});
      const double rel = std::abs(an - fd) / denom;
      result.max_rel_err[p] = std::max(result.max_rel_err[p], rel);
    }
    result.worst = std::max(result.worst, result.max_rel_err[p]);
  }
  result.pass = result.worst <= tol;
  return result;
}

}  // namespace sfa::autograd
