// SPDX-License-Identifier: Apache-2.0
//
// The weighted self-supervised objective over one minibatch: cross-agent
// contrast, queue contrast, temporal CPC, prototype distillation and the four
// invariance terms, with per-term breakdown and ablation switches.

#pragma once

#include <array>
#include <iomanip>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "scalecomm/encoder/model.hpp"
#include "scalecomm/env/trajectory.hpp"
#include "scalecomm/ssl/augment.hpp"
#include "scalecomm/ssl/losses.hpp"
#include "scalecomm/ssl/queue.hpp"

namespace scalecomm::ssl {

struct SslWeights {
  double alpha = 1.0;      // cross-agent contrast
  double beta = 0.5;       // queue contrast
  double gamma_cpc = 0.8;  // temporal CPC
  double delta = 0.3;      // prototype distillation
  double eta = 0.2;        // invariance block
  double lambda1 = 1.0;    // L_pred
  double lambda2 = 0.5;    // L_ts
  double lambda3 = 0.5;    // L_hz
  double lambda4 = 0.25;   // L_CKA
  double tau = 0.1;
  int cpc_horizon = 3;

  void validate() const {
    for (double w : {alpha, beta, gamma_cpc, delta, eta, lambda1, lambda2, lambda3, lambda4}) {
      if (!(w >= 0.0)) throw ConfigError("ssl: loss weights must be non-negative");
    }
    if (!(tau > 0.0)) throw ConfigError("ssl: tau must be positive");
    if (cpc_horizon < 1) throw ConfigError("ssl: cpc_horizon must be >= 1");
  }
};

struct Ablations {
  bool no_contrast = false;
  bool no_proto = false;
  bool no_curriculum = false;

  std::string label() const {
    if (no_contrast) return "no_contrast";
    if (no_proto) return "no_proto";
    if (no_curriculum) return "no_curriculum";
    return "full";
  }
};

/// Unweighted term values plus the weighted total. Ablated terms read 0.
struct SslBreakdown {
  double x = 0, knn = 0, cpc = 0, proto = 0, pred = 0, ts = 0, hz = 0, cka = 0, inv = 0, total = 0;

  static constexpr const char* csv_header() {
    return "step,L_X,L_KNN,L_CPC,L_Proto,L_pred,L_ts,L_hz,L_CKA,total";
  }
  void write_csv(std::ostream& os, long step) const {
    os << step << std::setprecision(17);
    for (double v : {x, knn, cpc, proto, pred, ts, hz, cka, total}) os << ',' << v;
    os << '\n';
  }
  SslBreakdown& operator+=(const SslBreakdown& o) {
    x += o.x; knn += o.knn; cpc += o.cpc; proto += o.proto; pred += o.pred;
    ts += o.ts; hz += o.hz; cka += o.cka; inv += o.inv; total += o.total;
    return *this;
  }
  SslBreakdown scaled(double s) const {
    SslBreakdown r = *this;
    r.x *= s; r.knn *= s; r.cpc *= s; r.proto *= s; r.pred *= s;
    r.ts *= s; r.hz *= s; r.cka *= s; r.inv *= s; r.total *= s;
    return r;
  }
};

/// P unit-norm prototype vectors.
struct PrototypeBank {
  Matrix vectors;

  static PrototypeBank from(const enc::ParamSet& ps) { return {ps[enc::names::kProto].value().mat()}; }
  Index count() const { return vectors.rows(); }
};

/// One minibatch of anchors with their peers, successors and augmented views.
struct SslBatch {
  Matrix online;                 // strong view of the anchor
  Matrix target;                 // weak view of the anchor (EMA branch)
  Matrix peer;                   // strong view of a co-observing peer, rows where peer_valid
  std::vector<bool> peer_valid;
  Matrix next;                   // anchor at t+1, strong view
  std::vector<bool> next_valid;
  Matrix future;                 // anchor at t+k, unaugmented (EMA branch)
  std::vector<bool> future_valid;

  Index size() const { return online.rows(); }
};

/// Assembles a batch from buffer rows. Peers share (episode, t); successors
/// share (episode, agent). Pairs that would cross an episode end are marked invalid.
inline SslBatch make_batch(const env::TrajectoryBuffer& buf, std::span<const std::size_t> anchors,
                           int num_agents, int horizon, const AugmentationConfig& aug,
                           num::Rng& rng) {
  const Index B = static_cast<Index>(anchors.size());
  const Index d = buf.obs_dim();
  SslBatch b;
  b.online.resize(B, d);
  b.target.resize(B, d);
  b.peer = Matrix::Zero(B, d);
  b.next = Matrix::Zero(B, d);
  b.future = Matrix::Zero(B, d);
  b.peer_valid.assign(anchors.size(), false);
  b.next_valid.assign(anchors.size(), false);
  b.future_valid.assign(anchors.size(), false);
  const AugmentationConfig weak = aug.weak();
  auto put = [](Matrix& m, Index r, const std::vector<double>& v) {
    for (std::size_t j = 0; j < v.size(); ++j) m(r, static_cast<Index>(j)) = v[j];
  };
  for (Index i = 0; i < B; ++i) {
    const std::size_t row = anchors[static_cast<std::size_t>(i)];
    const auto& tr = buf[row];
    put(b.online, i, augment(tr.obs, tr.mask, aug, rng));
    put(b.target, i, augment(tr.obs, tr.mask, weak, rng));
    const long p = buf.peer(row, num_agents, rng.index(std::max(1, num_agents - 1)));
    if (p >= 0) {
      const auto& pt = buf[static_cast<std::size_t>(p)];
      put(b.peer, i, augment(pt.obs, pt.mask, aug, rng));
      b.peer_valid[static_cast<std::size_t>(i)] = true;
    }
    const long n = buf.successor(row, 1);
    if (n >= 0) {
      const auto& nt = buf[static_cast<std::size_t>(n)];
      put(b.next, i, augment(nt.obs, nt.mask, aug, rng));
      b.next_valid[static_cast<std::size_t>(i)] = true;
    }
    const long f = buf.successor(row, horizon);
    if (f >= 0) {
      put(b.future, i, buf[static_cast<std::size_t>(f)].obs);
      b.future_valid[static_cast<std::size_t>(i)] = true;
    }
  }
  return b;
}

/// Everything the EMA branch contributes to one batch; computed without a graph.
struct TargetOutputs {
  Matrix latent;        // z* of the weak view
  Matrix message;       // m* of the weak view
  Matrix key;           // z* projected to message space (queue-contrast positive)
  Matrix future;        // z* of the t+k frame
  Matrix queue_latent;  // queue contents
  Matrix queue_key;     // queue contents projected to message space
};

inline TargetOutputs compute_targets(const enc::ParamSet& ema, const SslBatch& batch,
                                     const MemoryQueue& queue) {
  Graph g;
  const enc::ModelView v = enc::bind_constant(g, ema);
  TargetOutputs t;
  const enc::Encoded e = enc::encode(v, g.constant(batch.target));
  t.latent = e.latent.value();
  t.message = enc::message(v, e.latent).value();
  t.key = enc::compare_key(v, e.latent).value();
  t.future = enc::encode(v, g.constant(batch.future)).latent.value();
  t.queue_latent = queue.contents();
  t.queue_key = t.queue_latent.rows() > 0 ? enc::compare_key(v, g.constant(t.queue_latent)).value()
                                           : Matrix(0, v.cmp_w.cols());
  return t;
}

struct SslLoss {
  Var total;
  Var x, knn, cpc, proto, pred, ts, hz, cka;
  SslBreakdown parts;
};

namespace detail {
inline std::vector<Index> true_rows(const std::vector<bool>& v) {
  std::vector<Index> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i]) out.push_back(static_cast<Index>(i));
  }
  return out;
}
}  // namespace detail

/// Weighted total α·X + β·KNN + γ·CPC + δ·Proto + η·(λ1·pred + λ2·ts + λ3·hz + λ4·CKA).
/// An ablated term is not evaluated and reads 0 in the breakdown. With a
/// `center`, target codes are centred (and the centre advanced) before use.
inline SslLoss total_ssl_loss(Graph& g, const enc::ModelView& online, const SslBatch& batch,
                              const TargetOutputs& tgt, const SslWeights& w, const Ablations& abl,
                              Diagnostics& diag, CodeCenter* center = nullptr) {
  w.validate();
  const Index B = batch.size();
  const auto peer_rows = detail::true_rows(batch.peer_valid);
  const auto next_rows = detail::true_rows(batch.next_valid);

  // One encoder pass over anchors, peers and successors stacked row-wise.
  const Index np = static_cast<Index>(peer_rows.size()), nn = static_cast<Index>(next_rows.size());
  Matrix stacked(B + np + nn, batch.online.cols());
  stacked.topRows(B) = batch.online;
  for (Index i = 0; i < np; ++i) stacked.row(B + i) = batch.peer.row(peer_rows[static_cast<std::size_t>(i)]);
  for (Index i = 0; i < nn; ++i) stacked.row(B + np + i) = batch.next.row(next_rows[static_cast<std::size_t>(i)]);
  const enc::Encoded enc_all = enc::encode(online, g.constant(stacked));

  auto range = [](Index from, Index count) {
    std::vector<Index> r(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i) r[static_cast<std::size_t>(i)] = from + i;
    return r;
  };
  Var z = num::gather_rows(enc_all.latent, range(0, B));
  Var hidden = num::gather_rows(enc_all.hidden, range(0, B));
  Var m = enc::message(online, z, &diag.message_guard);

  SslLoss out;
  Var zero = zero_loss(g);
  out.x = out.knn = out.cpc = out.proto = out.pred = out.ts = out.hz = out.cka = zero;

  if (!abl.no_contrast) {
    if (np >= 2) {
      Var z_peer = num::gather_rows(enc_all.latent, range(B, np));
      Var m_anchor = num::gather_rows(m, peer_rows);
      out.x = loss_x_contrast(m_anchor, enc::compare_key(online, z_peer), w.tau);
    } else {
      ++diag.missing_peers;
    }
  }
  out.knn = loss_knn(m, g.constant(tgt.key), tgt.queue_key, w.tau, &diag);
  out.cpc = loss_cpc(enc::predict_future(online, m), g.constant(tgt.future), batch.future_valid,
                     tgt.queue_latent, w.tau, &diag);
  if (!abl.no_proto) {
    const Matrix codes = center ? center->codes(tgt.message, online.proto.value(), w.tau)
                                : proto_assign(tgt.message, online.proto.value(), w.tau);
    out.proto = loss_proto(m, online.proto, codes, w.tau);
  }
  out.pred = loss_pred(z, tgt.latent);
  if (nn > 0) {
    Var z_next = num::gather_rows(enc_all.latent, range(B + np, nn));
    out.ts = loss_cosine_gap(num::gather_rows(z, next_rows), z_next);
  } else {
    ++diag.missing_temporal_pairs;
  }
  out.hz = loss_cosine_gap(num::matmul(hidden, online.hz_w), z);
  out.cka = loss_cka(z, tgt.latent);

  Var inv = num::add(num::add(num::scale(out.pred, w.lambda1), num::scale(out.ts, w.lambda2)),
                     num::add(num::scale(out.hz, w.lambda3), num::scale(out.cka, w.lambda4)));
  const double alpha = abl.no_contrast ? 0.0 : w.alpha;
  const double delta = abl.no_proto ? 0.0 : w.delta;
  out.total = num::add(
      num::add(num::add(num::scale(out.x, alpha), num::scale(out.knn, w.beta)),
               num::add(num::scale(out.cpc, w.gamma_cpc), num::scale(out.proto, delta))),
      num::scale(inv, w.eta));

  out.parts = {out.x.item(),  out.knn.item(), out.cpc.item(), out.proto.item(), out.pred.item(),
               out.ts.item(), out.hz.item(),  out.cka.item(), inv.item(),       out.total.item()};
  return out;
}

}  // namespace scalecomm::ssl
