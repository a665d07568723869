// SPDX-License-Identifier: Apache-2.0
//
// Self-supervised objectives on the message hypersphere. All similarities are
// cosine; every contrastive denominator goes through log-sum-exp.

#pragma once

#include <cmath>
#include <vector>

#include "scalecomm/numcore/ops.hpp"

namespace scalecomm::ssl {

using num::Graph;
using num::Index;
using num::Matrix;
using num::Tensor;
using num::Var;

/// Warning counters for the skip-with-zero paths.
struct Diagnostics {
  long empty_queue = 0;
  long missing_cpc_pairs = 0;
  long missing_temporal_pairs = 0;
  long missing_peers = 0;
  long message_guard = 0;
};

/// InfoNCE over a similarity matrix: mean_i [ logsumexp_j(s_ij/τ) − s_i,pos(i)/τ ].
inline Var info_nce(Var sims, std::vector<Index> positive_col, double tau) {
  if (!(tau > 0.0)) throw DomainError("info_nce: temperature must be positive");
  Var logits = num::scale(sims, 1.0 / tau);
  Var pos = num::pick(logits, std::move(positive_col));
  return num::mean(num::sub(num::logsumexp_rows(logits), pos));
}

inline Var zero_loss(Graph& g) { return g.constant(Matrix::Zero(1, 1)); }

/// Cross-agent contrast. Row i of `peer_keys` (already in message space) is the
/// positive for message i; the other rows are its negatives.
inline Var loss_x_contrast(Var messages, Var peer_keys, double tau) {
  if (messages.rows() < 2) throw DomainError("loss_x_contrast: need a batch of at least 2");
  if (messages.rows() != peer_keys.rows()) throw StructuralError("loss_x_contrast: row mismatch");
  std::vector<Index> pos(static_cast<std::size_t>(messages.rows()));
  for (Index i = 0; i < messages.rows(); ++i) pos[static_cast<std::size_t>(i)] = i;
  return info_nce(num::cosine_matrix(messages, peer_keys), std::move(pos), tau);
}

/// Nearest-neighbour contrast: positive = the EMA key of the same sample,
/// negatives = queue entries (both in message space). The positive also sits
/// in the denominator. Positives and negatives are detached here, so gradient
/// reaches only the messages. Empty queue → zero and a warning count.
inline Var loss_knn(Var messages, Var ema_positives, const Matrix& queue_keys, double tau,
                    Diagnostics* diag = nullptr) {
  Graph& g = *messages.graph();
  if (queue_keys.rows() == 0) {
    if (diag) ++diag->empty_queue;
    return zero_loss(g);
  }
  if (messages.rows() != ema_positives.rows()) throw StructuralError("loss_knn: row mismatch");
  Var pos = g.detach(ema_positives);
  Var neg = g.constant(queue_keys);
  Var sims = num::concat_cols(num::cosine_rows(messages, pos), num::cosine_matrix(messages, neg));
  return info_nce(sims, std::vector<Index>(static_cast<std::size_t>(messages.rows()), 0), tau);
}

/// Temporal CPC: sim(g(m_t), z_{t+k}) against queue negatives in latent space.
/// Rows with valid[i] == false (no same-episode successor) are excluded; no
/// valid row or an empty queue gives zero plus a warning count.
inline Var loss_cpc(Var predicted, Var future_latents, const std::vector<bool>& valid,
                    const Matrix& queue_latents, double tau, Diagnostics* diag = nullptr) {
  Graph& g = *predicted.graph();
  if (static_cast<Index>(valid.size()) != predicted.rows() || future_latents.rows() != predicted.rows()) {
    throw StructuralError("loss_cpc: row mismatch");
  }
  std::vector<Index> rows;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (valid[i]) rows.push_back(static_cast<Index>(i));
  }
  if (rows.empty()) {
    if (diag) ++diag->missing_cpc_pairs;
    return zero_loss(g);
  }
  if (queue_latents.rows() == 0) {
    if (diag) ++diag->empty_queue;
    return zero_loss(g);
  }
  Var pred = num::gather_rows(predicted, rows);
  Var fut = num::gather_rows(g.detach(future_latents), rows);
  Var neg = g.constant(queue_latents);
  Var sims = num::concat_cols(num::cosine_rows(pred, fut), num::cosine_matrix(pred, neg));
  return info_nce(sims, std::vector<Index>(rows.size(), 0), tau);
}

/// Soft codes q = softmax_p(sim(m, p)/τ) for each row of m. No gradient.
inline Matrix proto_assign(const Matrix& messages, const Matrix& prototypes, double tau) {
  if (prototypes.rows() < 2) throw DomainError("proto_assign: need at least 2 prototypes");
  if (!(tau > 0.0)) throw DomainError("proto_assign: temperature must be positive");
  Graph g;
  Var s = num::cosine_matrix(g.constant(messages), g.constant(prototypes));
  return num::softmax_rows(num::scale(s, 1.0 / tau)).value();
}

/// Running mean of the target code logits, subtracted before the softmax so
/// that no single prototype absorbs every assignment.
struct CodeCenter {
  Matrix mean;  // 1×P, starts at zero
  double momentum = 0.9;

  /// Centred codes softmax_p(sim(m,p)/τ − c); then c ← μ·c + (1−μ)·batch mean of sim/τ.
  Matrix codes(const Matrix& messages, const Matrix& prototypes, double tau) {
    if (prototypes.rows() < 2) throw DomainError("proto_assign: need at least 2 prototypes");
    if (!(tau > 0.0)) throw DomainError("proto_assign: temperature must be positive");
    Graph g;
    const Matrix logits = num::scale(num::cosine_matrix(g.constant(messages), g.constant(prototypes)), 1.0 / tau).value();
    if (mean.size() == 0) mean = Matrix::Zero(1, prototypes.rows());
    if (mean.cols() != prototypes.rows()) throw StructuralError("code centre: prototype count changed");
    Matrix shifted = logits.rowwise() - mean.row(0);
    const Matrix q = num::softmax_rows(g.constant(std::move(shifted))).value();
    if (logits.rows() > 0) mean = momentum * mean + (1.0 - momentum) * logits.colwise().mean();
    return q;
  }
};

/// Mean cross-entropy between fixed target codes and the online log-softmax
/// over prototype similarities. Differentiable in messages and prototypes.
inline Var loss_proto(Var messages, Var prototypes, const Matrix& codes, double tau) {
  if (prototypes.rows() < 2) throw DomainError("loss_proto: need at least 2 prototypes");
  if (codes.rows() != messages.rows() || codes.cols() != prototypes.rows()) {
    throw StructuralError("loss_proto: code shape mismatch");
  }
  Graph& g = *messages.graph();
  Var logp = num::log_softmax_rows(num::scale(num::cosine_matrix(messages, prototypes), 1.0 / tau));
  Var ce = num::sum(num::mul(g.constant(codes), logp));
  return num::scale(ce, -1.0 / static_cast<double>(messages.rows()));
}

// ---------------------------------------------------------------- invariance terms

/// Mean squared Euclidean distance between online latents and detached targets.
inline Var loss_pred(Var online, const Matrix& target) {
  Graph& g = *online.graph();
  Var d = num::sub(online, g.constant(target));
  return num::scale(num::sum(num::square(d)), 1.0 / static_cast<double>(online.rows()));
}

/// mean(1 − cos(a_i, b_i)).
inline Var loss_cosine_gap(Var a, Var b) {
  return num::shift(num::scale(num::mean(num::cosine_rows(a, b)), -1.0), 1.0);
}

/// Linear CKA between two row-aligned batches, differentiable in both.
inline Var linear_cka(Var x, Var y) {
  if (x.rows() != y.rows() || x.rows() < 2) throw DomainError("linear_cka: need >= 2 aligned rows");
  Var xc = num::center_cols(x);
  Var yc = num::center_cols(y);
  if (xc.value().isZero(0.0) || yc.value().isZero(0.0)) {
    throw DomainError("linear_cka: zero-variance input");
  }
  Var cross = num::sum(num::square(num::matmul(num::transpose(xc), yc)));
  Var xx = num::sqrt(num::sum(num::square(num::matmul(num::transpose(xc), xc))));
  Var yy = num::sqrt(num::sum(num::square(num::matmul(num::transpose(yc), yc))));
  return num::div(cross, num::mul(xx, yy));
}

/// 1 − CKA(online, detached target).
inline Var loss_cka(Var online, const Matrix& target) {
  Graph& g = *online.graph();
  return num::shift(num::scale(linear_cka(online, g.constant(target)), -1.0), 1.0);
}

}  // namespace scalecomm::ssl
