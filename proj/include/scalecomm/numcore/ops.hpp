// SPDX-License-Identifier: Apache-2.0
//
// The closed operator set of the compute graph. Every loss in the project is a
// composition of these; each op records its own vector-Jacobian product.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "scalecomm/numcore/graph.hpp"

namespace scalecomm::num {

namespace detail {

inline Graph& graph_of(Var a) {
  if (!a.valid()) throw StructuralError("op on an unbound Var");
  return *a.graph();
}

inline Graph& graph_of(Var a, Var b) {
  if (a.graph() != b.graph()) throw StructuralError("op mixes nodes from different graphs");
  return graph_of(a);
}

// Broadcast kinds for binary elementwise ops: b equal-shaped, a 1×c row, or 1×1.
enum class Broadcast { none, row, scalar };

inline Broadcast broadcast_kind(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::none;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  if (b.size() == 1) return Broadcast::scalar;
  require_same_shape(a, b, what);
  return Broadcast::none;
}

inline Matrix reduce_to(const Matrix& g, Broadcast kind) {
  switch (kind) {
    case Broadcast::row:
      return g.colwise().sum();
    case Broadcast::scalar:
      return Matrix::Constant(1, 1, g.sum());
    default:
      return g;
  }
}

inline void check_mask(const Matrix& a, const Matrix& mask, const char* what) {
  require_same_shape(a, mask, what);
}

}  // namespace detail

// ---------------------------------------------------------------- linear algebra

inline Var matmul(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  if (a.cols() != b.rows()) {
    throw StructuralError("matmul: inner dimensions " + shape_str(a.rows(), a.cols()) + " x " +
                          shape_str(b.rows(), b.cols()));
  }
  Matrix out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& gr, int, const Matrix& go) {
    if (gr.requires_grad(ia)) gr.accumulate_expr(ia, go * gr.value(ib).transpose());
    if (gr.requires_grad(ib)) gr.accumulate_expr(ib, gr.value(ia).transpose() * go);
  });
}

inline Var transpose(Var a) {
  Graph& g = detail::graph_of(a);
  Matrix out = a.value().transpose();
  const int ia = a.id();
  return g.record(std::move(out), {ia}, [ia](Graph& gr, int, const Matrix& go) {
    gr.accumulate_expr(ia, go.transpose());
  });
}

// ---------------------------------------------------------------- elementwise

/// a + b; b may be equal-shaped, a 1×cols row (bias broadcast), or 1×1.
inline Var add(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  const auto kind = detail::broadcast_kind(a.value(), b.value(), "add");
  Matrix out = a.value();
  if (kind == detail::Broadcast::none) out += b.value();
  else if (kind == detail::Broadcast::row) out.rowwise() += b.value().row(0);
  else out.array() += b.value()(0, 0);
  const int ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib, kind](Graph& gr, int, const Matrix& go) {
    gr.accumulate(ia, go);
    if (gr.requires_grad(ib)) gr.accumulate(ib, detail::reduce_to(go, kind));
  });
}

/// a - b with the same broadcasting rules as add.
inline Var sub(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  const auto kind = detail::broadcast_kind(a.value(), b.value(), "sub");
  Matrix out = a.value();
  if (kind == detail::Broadcast::none) out -= b.value();
  else if (kind == detail::Broadcast::row) out.rowwise() -= b.value().row(0);
  else out.array() -= b.value()(0, 0);
  const int ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib, kind](Graph& gr, int, const Matrix& go) {
    gr.accumulate(ia, go);
    if (gr.requires_grad(ib)) gr.accumulate(ib, -detail::reduce_to(go, kind));
  });
}

/// Elementwise product of equal-shaped operands.
inline Var mul(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  const int ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& gr, int, const Matrix& go) {
    if (gr.requires_grad(ia)) gr.accumulate_expr(ia, go.cwiseProduct(gr.value(ib)));
    if (gr.requires_grad(ib)) gr.accumulate_expr(ib, go.cwiseProduct(gr.value(ia)));
  });
}

/// Elementwise quotient of equal-shaped operands.
inline Var div(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  require_same_shape(a.value(), b.value(), "div");
  if ((b.value().array() == 0.0).any()) throw DomainError("div: division by zero");
  Matrix out = a.value().cwiseQuotient(b.value());
  const int ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& gr, int self, const Matrix& go) {
    const Matrix& bv = gr.value(ib);
    if (gr.requires_grad(ia)) gr.accumulate_expr(ia, go.cwiseQuotient(bv));
    if (gr.requires_grad(ib)) {
      gr.accumulate_expr(ib, -(go.cwiseProduct(gr.value(self))).cwiseQuotient(bv));
    }
  });
}

inline Var scale(Var a, double s) {
  Graph& g = detail::graph_of(a);
  Matrix out = a.value() * s;
  const int ia = a.id();
  return g.record(std::move(out), {ia}, [ia, s](Graph& gr, int, const Matrix& go) {
    gr.accumulate_expr(ia, go * s);
  });
}

/// a + c for a scalar constant c.
inline Var shift(Var a, double c) {
  Graph& g = detail::graph_of(a);
  Matrix out = a.value().array() + c;
  const int ia = a.id();
  return g.record(std::move(out), {ia}, [ia](Graph& gr, int, const Matrix& go) {
    gr.accumulate(ia, go);
  });
}

inline Var relu(Var a) {
  Graph& g = detail::graph_of(a);
  Matrix out = a.value().cwiseMax(0.0);
  const int ia = a.id();
  return g.record(std::move(out), {ia}, [ia](Graph& gr, int, const Matrix& go) {
    gr.accumulate_expr(ia, (gr.value(ia).array() > 0.0).select(go, 0.0).matrix());
  });
}

inline Var exp(Var a) {
  Graph& g = detail::graph_of(a);
  Matrix out = a.value().array().exp();
  const int ia = a.id();
  return g.record(std::move(out), {ia}, [ia](Graph& gr, int self, const Matrix& go) {
    gr.accumulate_expr(ia, go.cwiseProduct(gr.value(self)));
  });
}

inline Var log(Var a) {
  Graph& g = detail::graph_of(a);
  if ((a.value().array() <= 0.0).any()) throw DomainError("log: non-positive argument");
  Matrix out = a.value().array().log();
  const int ia = a.id();
  return g.record(std::move(out), {ia}, [ia](Graph& gr, int, const Matrix& go) {
    gr.accumulate_expr(ia, go.cwiseQuotient(gr.value(ia)));
  });
}

inline Var sqrt(Var a) {
  Graph& g = detail::graph_of(a);
  if ((a.value().array() <= 0.0).any()) throw DomainError("sqrt: non-positive argument");
  Matrix out = a.value().array().sqrt();
  const int ia = a.id();
  return g.record(std::move(out), {ia}, [ia](Graph& gr, int self, const Matrix& go) {
    gr.accumulate_expr(ia, (0.5 * go.array() / gr.value(self).array()).matrix());
  });
}

inline Var square(Var a) { return mul(a, a); }

/// Clamp into [lo, hi]; gradient passes only strictly inside the interval.
inline Var clip(Var a, double lo, double hi) {
  Graph& g = detail::graph_of(a);
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  const int ia = a.id();
  return g.record(std::move(out), {ia}, [ia, lo, hi](Graph& gr, int, const Matrix& go) {
    const auto& x = gr.value(ia).array();
    gr.accumulate_expr(ia, ((x > lo) && (x < hi)).select(go, 0.0).matrix());
  });
}

/// Elementwise minimum; ties route the gradient to `a`.
inline Var minimum(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  require_same_shape(a.value(), b.value(), "minimum");
  Matrix out = a.value().cwiseMin(b.value());
  const int ia = a.id(), ib = b.id();
  return g.record(std::move(out), {ia, ib}, [ia, ib](Graph& gr, int, const Matrix& go) {
    const auto take_a = gr.value(ia).array() <= gr.value(ib).array();
    if (gr.requires_grad(ia)) gr.accumulate_expr(ia, take_a.select(go, 0.0).matrix());
    if (gr.requires_grad(ib)) gr.accumulate_expr(ib, take_a.select(0.0, go).matrix());
  });
}

// ---------------------------------------------------------------- reductions

inline Var sum(Var a) {
  Graph& g = detail::graph_of(a);
  Matrix out = Matrix::Constant(1, 1, a.value().sum());
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  return g.record(std::move(out), {ia}, [ia, r, c](Graph& gr, int, const Matrix& go) {
    gr.accumulate_expr(ia, Matrix::Constant(r, c, go(0, 0)));
  });
}

inline Var mean(Var a) {
  if (a.value().size() == 0) throw DomainError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

/// Sum over columns: n×c → n×1.
inline Var row_sum(Var a) {
  Graph& g = detail::graph_of(a);
  Matrix out = a.value().rowwise().sum();
  const int ia = a.id();
  const Index c = a.cols();
  return g.record(std::move(out), {ia}, [ia, c](Graph& gr, int, const Matrix& go) {
    gr.accumulate_expr(ia, go.replicate(1, c));
  });
}

/// Mean over rows: n×c → 1×c.
inline Var col_mean(Var a) {
  Graph& g = detail::graph_of(a);
  Matrix out = a.value().colwise().mean();
  const int ia = a.id();
  const Index r = a.rows();
  return g.record(std::move(out), {ia}, [ia, r](Graph& gr, int, const Matrix& go) {
    gr.accumulate_expr(ia, (go / static_cast<double>(r)).replicate(r, 1));
  });
}

/// Subtracts each column's mean.
inline Var center_cols(Var a) { return sub(a, col_mean(a)); }

// ---------------------------------------------------------------- softmax family

/// Row-wise softmax with max-subtraction. Optional 0/1 mask: masked entries get
/// probability 0; an all-masked row yields all zeros.
inline Var softmax_rows(Var a, const Matrix* mask = nullptr) {
  Graph& g = detail::graph_of(a);
  const Matrix& x = a.value();
  if (mask) detail::check_mask(x, *mask, "softmax_rows");
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < x.cols(); ++j) {
      if (!mask || (*mask)(i, j) != 0.0) mx = std::max(mx, x(i, j));
    }
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (Index j = 0; j < x.cols(); ++j) {
      if (!mask || (*mask)(i, j) != 0.0) {
        out(i, j) = std::exp(x(i, j) - mx);
        z += out(i, j);
      }
    }
    out.row(i) /= z;
  }
  const int ia = a.id();
  return g.record(std::move(out), {ia}, [ia](Graph& gr, int self, const Matrix& go) {
    const Matrix& y = gr.value(self);
    Matrix dot = go.cwiseProduct(y).rowwise().sum();
    Matrix gi = y.cwiseProduct(go - dot.replicate(1, y.cols()));
    gr.accumulate(ia, gi);
  });
}

/// Row-wise log-softmax. Masked entries are excluded from the normalizer and
/// output 0 (so exp(out)·out contributes nothing to an entropy sum). Rows
/// with every entry masked are a domain error.
inline Var log_softmax_rows(Var a, const Matrix* mask = nullptr) {
  Graph& g = detail::graph_of(a);
  const Matrix& x = a.value();
  if (mask) detail::check_mask(x, *mask, "log_softmax_rows");
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  Matrix prob = Matrix::Zero(x.rows(), x.cols());
  Matrix valid = mask ? *mask : Matrix::Ones(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index j = 0; j < x.cols(); ++j) {
      if (valid(i, j) != 0.0) mx = std::max(mx, x(i, j));
    }
    if (!std::isfinite(mx)) throw DomainError("log_softmax_rows: row without finite unmasked logits");
    double z = 0.0;
    for (Index j = 0; j < x.cols(); ++j) {
      if (valid(i, j) != 0.0) z += std::exp(x(i, j) - mx);
    }
    const double lse = mx + std::log(z);
    for (Index j = 0; j < x.cols(); ++j) {
      if (valid(i, j) != 0.0) {
        out(i, j) = x(i, j) - lse;
        prob(i, j) = std::exp(out(i, j));
      }
    }
  }
  const int ia = a.id();
  return g.record(std::move(out), {ia},
                  [ia, prob = std::move(prob), valid = std::move(valid)](Graph& gr, int,
                                                                         const Matrix& go) {
                    // d out_j / d x_l = δ_jl − p_l over unmasked j, l; masked outputs are constant.
                    Matrix gi = Matrix::Zero(go.rows(), go.cols());
                    for (Index i = 0; i < go.rows(); ++i) {
                      double s = 0.0;
                      for (Index j = 0; j < go.cols(); ++j) {
                        if (valid(i, j) != 0.0) s += go(i, j);
                      }
                      for (Index j = 0; j < go.cols(); ++j) {
                        if (valid(i, j) != 0.0) gi(i, j) = go(i, j) - prob(i, j) * s;
                      }
                    }
                    gr.accumulate(ia, gi);
                  });
}

/// Row-wise log-sum-exp: n×c → n×1.
inline Var logsumexp_rows(Var a) {
  Graph& g = detail::graph_of(a);
  const Matrix& x = a.value();
  Matrix out(x.rows(), 1);
  for (Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    out(i, 0) = mx + std::log((x.row(i).array() - mx).exp().sum());
  }
  const int ia = a.id();
  return g.record(std::move(out), {ia}, [ia](Graph& gr, int self, const Matrix& go) {
    const Matrix& xv = gr.value(ia);
    const Matrix& lse = gr.value(self);
    Matrix gi(xv.rows(), xv.cols());
    for (Index i = 0; i < xv.rows(); ++i) {
      gi.row(i) = (xv.row(i).array() - lse(i, 0)).exp() * go(i, 0);
    }
    gr.accumulate(ia, gi);
  });
}

// ---------------------------------------------------------------- geometry

/// Row-wise x / max(‖x‖, eps).
inline Var l2_normalize_rows(Var a, double eps = 1e-8) {
  Graph& g = detail::graph_of(a);
  const Matrix& x = a.value();
  Matrix norms = x.rowwise().norm();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) out.row(i) = x.row(i) / std::max(norms(i, 0), eps);
  const int ia = a.id();
  return g.record(std::move(out), {ia},
                  [ia, norms = std::move(norms), eps](Graph& gr, int self, const Matrix& go) {
                    const Matrix& y = gr.value(self);
                    Matrix gi(y.rows(), y.cols());
                    for (Index i = 0; i < y.rows(); ++i) {
                      const double n = norms(i, 0);
                      if (n > eps) {
                        const double d = y.row(i).dot(go.row(i));
                        gi.row(i) = (go.row(i) - d * y.row(i)) / n;
                      } else {
                        gi.row(i) = go.row(i) / eps;
                      }
                    }
                    gr.accumulate(ia, gi);
                  });
}

/// Pairwise cosine similarities between the rows of a (n×d) and b (m×d): n×m.
inline Var cosine_matrix(Var a, Var b) {
  return matmul(l2_normalize_rows(a), transpose(l2_normalize_rows(b)));
}

/// Cosine similarity of matching rows: n×d, n×d → n×1.
inline Var cosine_rows(Var a, Var b) {
  return row_sum(mul(l2_normalize_rows(a), l2_normalize_rows(b)));
}

// ---------------------------------------------------------------- structure

inline Var concat_cols(Var a, Var b) {
  Graph& g = detail::graph_of(a, b);
  if (a.rows() != b.rows()) throw StructuralError("concat_cols: row count mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a.value();
  out.rightCols(b.cols()) = b.value();
  const int ia = a.id(), ib = b.id();
  const Index ca = a.cols(), cb = b.cols();
  return g.record(std::move(out), {ia, ib}, [ia, ib, ca, cb](Graph& gr, int, const Matrix& go) {
    if (gr.requires_grad(ia)) gr.accumulate_expr(ia, go.leftCols(ca));
    if (gr.requires_grad(ib)) gr.accumulate_expr(ib, go.rightCols(cb));
  });
}

/// Rows of a at the given indices (repeats allowed).
inline Var gather_rows(Var a, std::vector<Index> idx) {
  Graph& g = detail::graph_of(a);
  const Matrix& x = a.value();
  Matrix out(static_cast<Index>(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= x.rows()) throw StructuralError("gather_rows: index out of range");
    out.row(static_cast<Index>(r)) = x.row(idx[r]);
  }
  const int ia = a.id();
  const Index n = x.rows();
  return g.record(std::move(out), {ia},
                  [ia, n, idx = std::move(idx)](Graph& gr, int, const Matrix& go) {
                    Matrix gi = Matrix::Zero(n, go.cols());
                    for (std::size_t r = 0; r < idx.size(); ++r) gi.row(idx[r]) += go.row(static_cast<Index>(r));
                    gr.accumulate(ia, gi);
                  });
}

/// out(i) = a(i, cols[i]): n×c → n×1.
inline Var pick(Var a, std::vector<Index> cols) {
  Graph& g = detail::graph_of(a);
  const Matrix& x = a.value();
  if (static_cast<Index>(cols.size()) != x.rows()) throw StructuralError("pick: one column per row");
  Matrix out(x.rows(), 1);
  for (Index i = 0; i < x.rows(); ++i) {
    const Index c = cols[static_cast<std::size_t>(i)];
    if (c < 0 || c >= x.cols()) throw StructuralError("pick: column out of range");
    out(i, 0) = x(i, c);
  }
  const int ia = a.id();
  const Index nc = x.cols();
  return g.record(std::move(out), {ia},
                  [ia, nc, cols = std::move(cols)](Graph& gr, int, const Matrix& go) {
                    Matrix gi = Matrix::Zero(go.rows(), nc);
                    for (Index i = 0; i < go.rows(); ++i) gi(i, cols[static_cast<std::size_t>(i)]) = go(i, 0);
                    gr.accumulate(ia, gi);
                  });
}

/// Per-group dot products: q is B×d, keys is (B·K)×d grouped by row of q;
/// out(b, k) = q(b)·keys(b·K + k).
inline Var group_dot(Var q, Var keys) {
  Graph& g = detail::graph_of(q, keys);
  const Matrix& qv = q.value();
  const Matrix& kv = keys.value();
  if (qv.cols() != kv.cols() || qv.rows() == 0 || kv.rows() % qv.rows() != 0) {
    throw StructuralError("group_dot: keys must be (B*K)x d for q of B x d");
  }
  const Index B = qv.rows(), K = kv.rows() / qv.rows();
  Matrix out(B, K);
  for (Index b = 0; b < B; ++b) {
    out.row(b) = (kv.middleRows(b * K, K) * qv.row(b).transpose()).transpose();
  }
  const int iq = q.id(), ik = keys.id();
  return g.record(std::move(out), {iq, ik}, [iq, ik, B, K](Graph& gr, int, const Matrix& go) {
    const Matrix& qv2 = gr.value(iq);
    const Matrix& kv2 = gr.value(ik);
    if (gr.requires_grad(iq)) {
      Matrix gq(B, qv2.cols());
      for (Index b = 0; b < B; ++b) gq.row(b) = go.row(b) * kv2.middleRows(b * K, K);
      gr.accumulate(iq, gq);
    }
    if (gr.requires_grad(ik)) {
      Matrix gk(B * K, kv2.cols());
      for (Index b = 0; b < B; ++b) gk.middleRows(b * K, K) = go.row(b).transpose() * qv2.row(b);
      gr.accumulate(ik, gk);
    }
  });
}

/// Per-group weighted sums: w is B×K, vals is (B·K)×d; out(b) = Σ_k w(b,k)·vals(b·K+k).
inline Var group_combine(Var w, Var vals) {
  Graph& g = detail::graph_of(w, vals);
  const Matrix& wv = w.value();
  const Matrix& vv = vals.value();
  const Index B = wv.rows(), K = wv.cols();
  if (vv.rows() != B * K) throw StructuralError("group_combine: vals must be (B*K) x d");
  Matrix out(B, vv.cols());
  for (Index b = 0; b < B; ++b) out.row(b) = wv.row(b) * vv.middleRows(b * K, K);
  const int iw = w.id(), iv = vals.id();
  return g.record(std::move(out), {iw, iv}, [iw, iv, B, K](Graph& gr, int, const Matrix& go) {
    const Matrix& wv2 = gr.value(iw);
    const Matrix& vv2 = gr.value(iv);
    if (gr.requires_grad(iw)) {
      Matrix gw(B, K);
      for (Index b = 0; b < B; ++b) gw.row(b) = (vv2.middleRows(b * K, K) * go.row(b).transpose()).transpose();
      gr.accumulate(iw, gw);
    }
    if (gr.requires_grad(iv)) {
      Matrix gv(B * K, vv2.cols());
      for (Index b = 0; b < B; ++b) gv.middleRows(b * K, K) = wv2.row(b).transpose() * go.row(b);
      gr.accumulate(iv, gv);
    }
  });
}

// ---------------------------------------------------------------- plain-value kernels

/// Cosine similarity of two equal-length vectors. Zero norm is a domain error.
inline double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw StructuralError("cosine_sim: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DomainError("cosine_sim: zero-norm input");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

/// Temperature softmax with max-subtraction.
inline std::vector<double> softmax(std::span<const double> logits, double temperature) {
  if (logits.empty()) throw DomainError("softmax: empty input");
  if (!(temperature > 0.0)) throw DomainError("softmax: temperature must be positive");
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : logits) {
    if (!std::isfinite(x)) throw DomainError("softmax: non-finite logit");
    mx = std::max(mx, x);
  }
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / temperature);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

}  // namespace scalecomm::num
