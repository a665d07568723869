// SPDX-License-Identifier: Apache-2.0
//
// Representation-quality metrics over encoded datasets. Plain Eigen, no graph.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "scalecomm/errors.hpp"
#include "scalecomm/numcore/rng.hpp"
#include "scalecomm/numcore/tensor.hpp"

namespace scalecomm::eval {

using num::Index;
using num::Matrix;

namespace detail {

inline Matrix unit_rows(const Matrix& m) {
  Matrix out = m;
  for (Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

/// Index of the cosine-nearest gallery row for each query; ties go to the lowest index.
inline std::vector<Index> nearest(const Matrix& queries, const Matrix& gallery) {
  const Matrix sims = unit_rows(queries) * unit_rows(gallery).transpose();
  std::vector<Index> out(static_cast<std::size_t>(queries.rows()));
  for (Index i = 0; i < sims.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < sims.cols(); ++j) {
      if (sims(i, j) > sims(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

inline double entropy(const std::map<int, double>& counts, double n) {
  double h = 0.0;
  for (const auto& [k, c] : counts) {
    if (c > 0) h -= (c / n) * std::log(c / n);
  }
  return h;
}

}  // namespace detail

/// Fraction of rows whose cosine-nearest key (full gallery) is their own row.
inline double recall_at_1(const Matrix& messages, const Matrix& keys) {
  if (messages.rows() < 2) throw DomainError("recall_at_1: need at least 2 rows");
  if (messages.rows() != keys.rows() || messages.cols() != keys.cols()) {
    throw StructuralError("recall_at_1: messages and keys must be aligned in one space");
  }
  const auto nn = detail::nearest(messages, keys);
  double hits = 0;
  for (std::size_t i = 0; i < nn.size(); ++i) hits += nn[i] == static_cast<Index>(i) ? 1.0 : 0.0;
  return hits / static_cast<double>(nn.size());
}

/// Fraction of rows with a successor whose predicted latent is nearest to the
/// true successor latent among all latents.
inline double temporal_at_1(const Matrix& predicted, const Matrix& latents, const std::vector<long>& successor) {
  if (predicted.rows() != latents.rows() || static_cast<Index>(successor.size()) != latents.rows()) {
    throw StructuralError("temporal_at_1: row mismatch");
  }
  std::vector<Index> rows;
  for (std::size_t i = 0; i < successor.size(); ++i) {
    if (successor[i] >= 0) rows.push_back(static_cast<Index>(i));
  }
  if (rows.empty()) throw DomainError("temporal_at_1: no row has a successor at horizon k");
  Matrix q(static_cast<Index>(rows.size()), predicted.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) q.row(static_cast<Index>(r)) = predicted.row(rows[r]);
  const auto nn = detail::nearest(q, latents);
  double hits = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    hits += nn[r] == successor[static_cast<std::size_t>(rows[r])] ? 1.0 : 0.0;
  }
  return hits / static_cast<double>(rows.size());
}

/// NMI with arithmetic-mean normalisation. A single-cluster partition gives 0.
inline double nmi(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw StructuralError("nmi: partitions differ in length");
  if (a.empty()) throw DomainError("nmi: empty partition");
  const double n = static_cast<double>(a.size());
  std::map<int, double> ca, cb;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[a[i]] += 1;
    cb[b[i]] += 1;
    joint[{a[i], b[i]}] += 1;
  }
  if (ca.size() < 2 || cb.size() < 2) return 0.0;
  double mi = 0.0;
  for (const auto& [k, c] : joint) {
    mi += (c / n) * std::log(c * n / (ca[k.first] * cb[k.second]));
  }
  const double denom = 0.5 * (detail::entropy(ca, n) + detail::entropy(cb, n));
  return std::clamp(mi / denom, 0.0, 1.0);
}

/// Hard argmax-prototype assignment of each message (lowest index on ties).
inline std::vector<int> assign_prototypes(const Matrix& messages, const Matrix& prototypes) {
  const auto nn = detail::nearest(messages, prototypes);
  return {nn.begin(), nn.end()};
}

inline double proto_nmi(const Matrix& messages, const Matrix& prototypes, const std::vector<int>& labels) {
  if (static_cast<Index>(labels.size()) != messages.rows()) throw StructuralError("proto_nmi: label count mismatch");
  std::vector<int> distinct(labels);
  std::sort(distinct.begin(), distinct.end());
  if (std::unique(distinct.begin(), distinct.end()) - distinct.begin() < 2) {
    throw DomainError("proto_nmi: need at least 2 distinct labels");
  }
  return nmi(assign_prototypes(messages, prototypes), labels);
}

/// ‖XcᵀYc‖²_F / (‖XcᵀXc‖_F ‖YcᵀYc‖_F) with column-centred inputs.
inline double linear_cka(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows() || x.rows() < 2) throw DomainError("linear_cka: need >= 2 aligned rows");
  const Matrix xc = x.rowwise() - x.colwise().mean();
  const Matrix yc = y.rowwise() - y.colwise().mean();
  if (xc.isZero(0.0) || yc.isZero(0.0)) throw DomainError("linear_cka: zero-variance input");
  const double cross = (xc.transpose() * yc).squaredNorm();
  const double xx = (xc.transpose() * xc).norm();
  const double yy = (yc.transpose() * yc).norm();
  return std::clamp(cross / (xx * yy), 0.0, 1.0);
}

struct ProbeConfig {
  int max_epochs = 500;
  double tolerance = 1e-6;  // stop when the loss changes by less than this
  double lr = 0.05;
  double train_fraction = 0.8;
};

namespace detail {

/// Full-batch Adam on the multinomial logistic loss. Returns W ((d+1)×C).
inline Matrix fit_softmax(const Matrix& x, const std::vector<int>& y, int classes, const ProbeConfig& cfg) {
  const Index n = x.rows(), d = x.cols();
  Matrix xb(n, d + 1);
  xb.leftCols(d) = x;
  xb.col(d).setOnes();
  Matrix onehot = Matrix::Zero(n, classes);
  for (Index i = 0; i < n; ++i) onehot(i, y[static_cast<std::size_t>(i)]) = 1.0;
  Matrix w = Matrix::Zero(d + 1, classes), m = w, v = w;
  double prev = std::numeric_limits<double>::infinity();
  for (int ep = 1; ep <= cfg.max_epochs; ++ep) {
    Matrix logits = xb * w;
    Matrix p(n, classes);
    double loss = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double mx = logits.row(i).maxCoeff();
      const auto e = (logits.row(i).array() - mx).exp();
      const double s = e.sum();
      p.row(i) = e / s;
      loss -= logits(i, y[static_cast<std::size_t>(i)]) - mx - std::log(s);
    }
    loss /= static_cast<double>(n);
    if (std::abs(prev - loss) < cfg.tolerance) break;
    prev = loss;
    const Matrix g = xb.transpose() * (p - onehot) / static_cast<double>(n);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(0.9, ep), c2 = 1.0 - std::pow(0.999, ep);
    w.array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + 1e-8);
  }
  return w;
}

}  // namespace detail

/// Held-out accuracy of a multinomial linear classifier on standardised
/// features, seeded 80/20 split. A class missing from the training split
/// triggers one resample, then a domain error.
inline double probe_accuracy(const Matrix& latents, const std::vector<int>& labels, std::uint64_t seed,
                             const ProbeConfig& cfg = {}) {
  const Index M = latents.rows();
  if (static_cast<Index>(labels.size()) != M) throw StructuralError("probe_accuracy: label count mismatch");
  if (M < 20) throw DomainError("probe_accuracy: need at least 20 rows");
  const int classes = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<int> present(labels);
  std::sort(present.begin(), present.end());
  present.erase(std::unique(present.begin(), present.end()), present.end());
  if (present.size() < 2) throw DomainError("probe_accuracy: need at least 2 classes");

  num::Rng rng(num::derive_seed(seed, 0x9B0BEULL));
  std::vector<Index> order(static_cast<std::size_t>(M));
  const Index n_train = static_cast<Index>(std::floor(cfg.train_fraction * static_cast<double>(M)));
  bool ok = false;
  for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
    for (Index i = 0; i < M; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    std::vector<bool> seen(static_cast<std::size_t>(classes), false);
    for (Index i = 0; i < n_train; ++i) seen[static_cast<std::size_t>(labels[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])])] = true;
    ok = std::all_of(present.begin(), present.end(), [&](int c) { return seen[static_cast<std::size_t>(c)]; });
  }
  if (!ok) throw DomainError("probe_accuracy: a class is absent from the training split after resampling");

  Matrix xtr(n_train, latents.cols()), xte(M - n_train, latents.cols());
  std::vector<int> ytr(static_cast<std::size_t>(n_train)), yte(static_cast<std::size_t>(M - n_train));
  for (Index i = 0; i < M; ++i) {
    const Index r = order[static_cast<std::size_t>(i)];
    if (i < n_train) {
      xtr.row(i) = latents.row(r);
      ytr[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(r)];
    } else {
      xte.row(i - n_train) = latents.row(r);
      yte[static_cast<std::size_t>(i - n_train)] = labels[static_cast<std::size_t>(r)];
    }
  }
  const Eigen::RowVectorXd mu = xtr.colwise().mean();
  Eigen::RowVectorXd sd = ((xtr.rowwise() - mu).array().square().colwise().mean()).sqrt();
  for (Index j = 0; j < sd.size(); ++j) sd(j) = sd(j) > 1e-12 ? sd(j) : 1.0;
  xtr = ((xtr.rowwise() - mu).array().rowwise() / sd.array()).matrix();
  xte = ((xte.rowwise() - mu).array().rowwise() / sd.array()).matrix();

  const Matrix w = detail::fit_softmax(xtr, ytr, classes, cfg);
  if (xte.rows() == 0) return 0.0;
  double hits = 0;
  for (Index i = 0; i < xte.rows(); ++i) {
    Eigen::RowVectorXd s = xte.row(i) * w.topRows(w.rows() - 1) + w.row(w.rows() - 1);
    Index best = 0;
    for (Index c = 1; c < s.size(); ++c) {
      if (s(c) > s(best)) best = c;
    }
    hits += best == yte[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  }
  return hits / static_cast<double>(xte.rows());
}

}  // namespace scalecomm::eval
