// SPDX-License-Identifier: Apache-2.0
//
// Forward pass of the representation stack: observation → latent z → unit
// message m, query-conditioned attention over candidate tasks, and the
// policy/value heads on h = [z ; c].

#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <unordered_set>
#include <vector>

#include "scalecomm/encoder/params.hpp"
#include "scalecomm/numcore/ops.hpp"

namespace scalecomm::enc {

using num::Graph;
using num::Index;
using num::Var;

/// Parameters bound into one graph: trainable ones as leaves, the rest as constants.
struct ModelView {
  Var enc_w1, enc_b1, enc_w2, enc_b2;
  Var msg_w, cmp_w, pred_w, pred_b, hz_w, proto;
  Var att_q, att_k, att_v, bias_w;
  Var pi_w, pi_b, v_w, v_b;
};

enum class BindMode { trainable, constant };

/// Binds `ps` into `g`. Parameters named in `frozen` (or all, in constant
/// mode) enter as constants and never receive gradients.
inline ModelView bind(Graph& g, ParamSet& ps, BindMode mode = BindMode::trainable,
                      const std::unordered_set<std::string>& frozen = {}) {
  auto b = [&](const char* name) {
    Parameter& p = ps[name];
    if (mode == BindMode::constant || frozen.count(name) > 0) return g.constant(p.value());
    return g.param(p);
  };
  ModelView v;
  v.enc_w1 = b(names::kEncW1);
  v.enc_b1 = b(names::kEncB1);
  v.enc_w2 = b(names::kEncW2);
  v.enc_b2 = b(names::kEncB2);
  v.msg_w = b(names::kMsgW);
  v.cmp_w = b(names::kCmpW);
  v.pred_w = b(names::kPredW);
  v.pred_b = b(names::kPredB);
  v.hz_w = b(names::kHzW);
  v.proto = b(names::kProto);
  v.att_q = b(names::kAttQ);
  v.att_k = b(names::kAttK);
  v.att_v = b(names::kAttV);
  v.bias_w = b(names::kBiasW);
  v.pi_w = b(names::kPiW);
  v.pi_b = b(names::kPiB);
  v.v_w = b(names::kVW);
  v.v_b = b(names::kVB);
  return v;
}

inline ModelView bind_constant(Graph& g, const ParamSet& ps) {
  return bind(g, const_cast<ParamSet&>(ps), BindMode::constant);
}

struct Encoded {
  Var hidden;  // post-rectifier first layer, B×d_h
  Var latent;  // B×d_z
};

/// z = W2·relu(W1·o + b1) + b2, row-batched.
inline Encoded encode(const ModelView& v, Var obs) {
  if (obs.cols() != v.enc_w1.rows()) {
    throw StructuralError("encode: observation width " + std::to_string(obs.cols()) +
                          " does not match encoder input " + std::to_string(v.enc_w1.rows()));
  }
  Var h = num::relu(num::add(num::matmul(obs, v.enc_w1), v.enc_b1));
  Var z = num::add(num::matmul(h, v.enc_w2), v.enc_b2);
  return {h, z};
}

/// m = W_m z / max(‖W_m z‖, eps). Counts guarded rows into `guard_hits` when given.
inline Var message(const ModelView& v, Var latent, long* guard_hits = nullptr) {
  Var raw = num::matmul(latent, v.msg_w);
  if (guard_hits) {
    const Matrix norms = raw.value().rowwise().norm();
    *guard_hits += static_cast<long>((norms.array() < 1e-8).count());
  }
  return num::l2_normalize_rows(raw, 1e-8);
}

/// Projects latents into the message space for similarity against messages.
inline Var compare_key(const ModelView& v, Var latent) {
  return num::l2_normalize_rows(num::matmul(latent, v.cmp_w), 1e-8);
}

/// CPC predictor g: message space → latent space.
inline Var predict_future(const ModelView& v, Var msg) {
  return num::add(num::matmul(msg, v.pred_w), v.pred_b);
}

/// Candidate task rows of a B×(3+5K) observation batch, as a (B·K)×5 matrix.
inline Matrix task_rows(const Matrix& obs, int K) {
  Matrix out(obs.rows() * K, env::kTaskFeatures);
  for (Index b = 0; b < obs.rows(); ++b) {
    for (int k = 0; k < K; ++k) {
      out.row(b * K + k) = obs.row(b).segment(env::kSelfFeatures + env::kTaskFeatures * k,
                                              env::kTaskFeatures);
    }
  }
  return out;
}

struct Attention {
  Var weights;  // B×K, zero on masked slots
  Var context;  // B×d_z
};

/// α_k = softmax_k((W_q z)·(W_k τ_k)) over unmasked slots; c = Σ_k α_k W_v τ_k.
/// Rows with every slot masked get α = 0 and c = 0.
inline Attention attend(const ModelView& v, Var latent, Var tasks, const Matrix& mask) {
  Var q = num::matmul(latent, v.att_q);
  Var keys = num::matmul(tasks, v.att_k);
  Var scores = num::group_dot(q, keys);
  Var alpha = num::softmax_rows(scores, &mask);
  Var vals = num::matmul(tasks, v.att_v);
  return {alpha, num::group_combine(alpha, vals)};
}

/// β·B(z, τ_k) with the bilinear scorer B(z, τ) = zᵀ W_B τ: B×K.
inline Var task_bias(const ModelView& v, Var latent, Var tasks, double beta) {
  return num::scale(num::group_dot(num::matmul(latent, v.bias_w), tasks), beta);
}

struct PolicyHeads {
  Var logits;          // B×(K+1), raw (unmasked)
  Var value;           // B×1
  Matrix action_mask;  // B×(K+1), 1 where the action is available
};

struct BiasSettings {
  bool enabled = true;
  double beta = 1.0;
};

/// Logits and value from h = [z ; c]. When the scorer is enabled its bias is
/// added to the K task logits; the skip logit is never biased.
inline PolicyHeads policy_heads(const ModelView& v, Var latent, Var context, Var tasks,
                                const Matrix& task_mask, BiasSettings bias) {
  Graph& g = *latent.graph();
  Var h = num::concat_cols(latent, context);
  Var logits = num::add(num::matmul(h, v.pi_w), v.pi_b);
  if (bias.enabled && bias.beta != 0.0) {
    Var b = task_bias(v, latent, tasks, bias.beta);
    Var pad = g.constant(Matrix::Zero(b.rows(), 1));
    logits = num::add(logits, num::concat_cols(b, pad));
  }
  Var value = num::add(num::matmul(h, v.v_w), v.v_b);
  Matrix amask(task_mask.rows(), task_mask.cols() + 1);
  amask.leftCols(task_mask.cols()) = task_mask;
  amask.col(task_mask.cols()).setOnes();
  return {logits, value, std::move(amask)};
}

// ---------------------------------------------------------------- plain-value API

namespace detail {
inline Matrix row_matrix(std::span<const double> v) {
  Matrix m(1, static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Index>(i)) = v[i];
  return m;
}
}  // namespace detail

/// Latent of one observation. Wrong observation width is a structural error.
inline Tensor encode(std::span<const double> obs, const ParamSet& ps) {
  Graph g;
  const ModelView v = bind_constant(g, ps);
  return encode(v, g.constant(detail::row_matrix(obs))).latent.tensor();
}

/// Unit message from a latent. A zero pre-normalization vector is a domain error.
inline Tensor to_message(const Tensor& z, const ParamSet& ps) {
  const Matrix& wm = ps[names::kMsgW].value().mat();
  if (z.cols() != wm.rows()) throw StructuralError("to_message: latent width mismatch");
  Matrix raw = z.mat() * wm;
  for (Index i = 0; i < raw.rows(); ++i) {
    const double n = raw.row(i).norm();
    if (!(n > 0.0)) throw DomainError("to_message: zero pre-normalization vector");
    raw.row(i) /= n;
  }
  return Tensor(std::move(raw));
}

struct AttentionResult {
  Tensor weights;  // 1×K
  Tensor context;  // 1×d_z
};

/// Attention of one latent over K task rows (K×5). All-masked input is a domain error.
inline AttentionResult task_attention(const Tensor& z, const Tensor& tasks,
                                      const std::vector<bool>& mask, const ParamSet& ps) {
  if (static_cast<Index>(mask.size()) != tasks.rows()) {
    throw StructuralError("task_attention: mask length must equal task rows");
  }
  if (std::find(mask.begin(), mask.end(), true) == mask.end()) {
    throw DomainError("task_attention: every candidate is masked");
  }
  Graph g;
  const ModelView v = bind_constant(g, ps);
  Matrix m(1, static_cast<Index>(mask.size()));
  for (std::size_t k = 0; k < mask.size(); ++k) m(0, static_cast<Index>(k)) = mask[k] ? 1.0 : 0.0;
  const Attention a = attend(v, g.constant(z), g.constant(tasks), m);
  return {a.weights.tensor(), a.context.tensor()};
}

struct PolicyResult {
  Tensor logits;  // 1×(K+1); masked task slots are -inf
  double value = 0.0;
};

inline PolicyResult policy_forward(const Tensor& z, const Tensor& c, const Tensor& tasks,
                                   const std::vector<bool>& mask, const ParamSet& ps,
                                   BiasSettings bias = {}) {
  Graph g;
  const ModelView v = bind_constant(g, ps);
  Matrix m(1, static_cast<Index>(mask.size()));
  for (std::size_t k = 0; k < mask.size(); ++k) m(0, static_cast<Index>(k)) = mask[k] ? 1.0 : 0.0;
  const PolicyHeads heads = policy_heads(v, g.constant(z), g.constant(c), g.constant(tasks), m, bias);
  Tensor logits = heads.logits.tensor();
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (!mask[k]) logits(0, static_cast<Index>(k)) = -std::numeric_limits<double>::infinity();
  }
  return {logits, heads.value.item()};
}

/// Per-task logit bias β·zᵀ W_B τ_k for one latent: 1×K.
inline Tensor task_bias(const Tensor& z, const Tensor& tasks, const ParamSet& ps, double beta) {
  Graph g;
  const ModelView v = bind_constant(g, ps);
  return task_bias(v, g.constant(z), g.constant(tasks), beta).tensor();
}

/// Momentum-averaged shadow copy of the parameters.
struct EmaTarget {
  ParamSet params;
  double momentum = 0.996;
};

/// θ_EMA ← μ θ_EMA + (1 − μ) θ, elementwise over every parameter.
inline void ema_update(const ParamSet& online, EmaTarget& target) {
  const double mu = target.momentum;
  if (!(mu >= 0.0 && mu < 1.0)) throw DomainError("ema_update: momentum must lie in [0, 1)");
  if (online.size() != target.params.size()) throw StructuralError("ema_update: parameter sets differ");
  for (std::size_t i = 0; i < online.size(); ++i) {
    const Parameter& src = online.all()[i];
    Parameter& dst = target.params.all()[i];
    if (src.name() != dst.name()) throw StructuralError("ema_update: parameter order differs");
    num::require_same_shape(src.value().mat(), dst.value().mat(), "ema_update");
    dst.value().mat() = mu * dst.value().mat() + (1.0 - mu) * src.value().mat();
  }
}

}  // namespace scalecomm::enc
