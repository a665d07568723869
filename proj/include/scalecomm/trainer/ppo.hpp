// SPDX-License-Identifier: Apache-2.0
//
// On-policy machinery for Phase II: GAE, vectorised rollout collection with
// the attention policy, and the clipped surrogate update.

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "scalecomm/encoder/model.hpp"
#include "scalecomm/env/trajectory.hpp"
#include "scalecomm/numcore/optimizer.hpp"

namespace scalecomm::train {

using num::Graph;
using num::Index;
using num::Matrix;
using num::Var;

enum class EncoderMode { frozen, finetune };

struct PpoConfig {
  double clip = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int epochs = 6;
  long steps_per_iteration = 16384;  // agent-steps
  long minibatch = 2048;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double lr = 3e-4;
  enc::BiasSettings bias{};
  EncoderMode encoder_mode = EncoderMode::finetune;
  int num_envs = 8;

  void validate() const {
    if (!(clip > 0.0)) throw ConfigError("ppo: clip must be positive");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("ppo: gamma must be in [0,1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("ppo: gae_lambda must be in [0,1]");
    if (epochs < 1) throw ConfigError("ppo: epochs must be >= 1");
    if (steps_per_iteration < 1) throw ConfigError("ppo: steps_per_iteration must be >= 1");
    if (minibatch < 1) throw ConfigError("ppo: minibatch must be >= 1");
    if (!(entropy_coef >= 0.0) || !(value_coef >= 0.0)) throw ConfigError("ppo: coefficients must be >= 0");
    if (!(lr > 0.0)) throw ConfigError("ppo: lr must be positive");
    if (num_envs < 1) throw ConfigError("ppo: num_envs must be >= 1");
  }
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// Generalised advantage estimation over one stream. `dones[t]` ends the
/// episode after step t; `bootstrap` is V(s_T) for a truncated final step.
inline GaeResult gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                const std::vector<bool>& dones, double bootstrap, double gamma,
                                double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw StructuralError("gae: length mismatch");
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double gae = 0.0;
  double next_value = bootstrap;
  for (std::size_t i = n; i-- > 0;) {
    const double live = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * next_value * live - values[i];
    gae = delta + gamma * lambda * live * gae;
    out.advantages[i] = gae;
    out.returns[i] = gae + values[i];
    next_value = values[i];
  }
  return out;
}

/// Rescales the selected entries to mean 0, std 1. Unselected entries are left alone.
inline void normalize_advantages(std::vector<double>& adv, const std::vector<bool>& use) {
  double n = 0, mean = 0, sq = 0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    if (use[i]) {
      n += 1;
      mean += adv[i];
    }
  }
  if (n < 1) return;
  mean /= n;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    if (use[i]) sq += (adv[i] - mean) * (adv[i] - mean);
  }
  const double sd = std::max(std::sqrt(sq / n), 1e-8);
  for (std::size_t i = 0; i < adv.size(); ++i) {
    if (use[i]) adv[i] = (adv[i] - mean) / sd;
  }
}

// ---------------------------------------------------------------- policy forward

struct PolicyOutputs {
  enc::Encoded encoded;
  Var logp;            // B×(K+1), masked entries read 0
  Var value;           // B×1
  Matrix action_mask;  // B×(K+1)
};

inline PolicyOutputs forward_policy(const enc::ModelView& v, Var obs, const Matrix& task_mask,
                                    int K, enc::BiasSettings bias) {
  Graph& g = *obs.graph();
  PolicyOutputs out;
  out.encoded = enc::encode(v, obs);
  Var tasks = g.constant(enc::task_rows(obs.value(), K));
  const enc::Attention att = enc::attend(v, out.encoded.latent, tasks, task_mask);
  enc::PolicyHeads heads = enc::policy_heads(v, out.encoded.latent, att.context, tasks, task_mask, bias);
  out.action_mask = std::move(heads.action_mask);
  out.logp = num::log_softmax_rows(heads.logits, &out.action_mask);
  out.value = heads.value;
  return out;
}

/// Samples from exp(logp) restricted to the mask.
inline int sample_action(const Matrix& logp, const Matrix& mask, Index row, num::Rng& rng) {
  const double u = rng.uniform(0.0, 1.0);
  double acc = 0.0;
  int last = -1;
  for (Index a = 0; a < logp.cols(); ++a) {
    if (mask(row, a) == 0.0) continue;
    acc += std::exp(logp(row, a));
    last = static_cast<int>(a);
    if (u < acc) return last;
  }
  return last;
}

inline int greedy_policy_action(const Matrix& logp, const Matrix& mask, Index row) {
  int best = -1;
  for (Index a = 0; a < logp.cols(); ++a) {
    if (mask(row, a) == 0.0) continue;
    if (best < 0 || logp(row, a) > logp(row, best)) best = static_cast<int>(a);
  }
  return best;
}

// ---------------------------------------------------------------- rollouts

struct EpisodeStats {
  double team_return = 0.0;
  double deliveries = 0.0;
  double unassigned_pct = 0.0;
};

/// One iteration's on-policy data. Row = tick·(E·N) + env·N + agent.
struct Rollout {
  Matrix obs;
  Matrix task_mask;
  std::vector<int> actions;  // 0-based policy index; K is skip
  std::vector<double> logp_old, values, rewards, advantages, returns;
  std::vector<bool> dones, decision;
  std::vector<long> next_row, future_row;
  std::vector<EpisodeStats> episodes;  // completed during this rollout

  Index size() const { return obs.rows(); }
};

/// E lockstep warehouses whose episodes carry over between iterations.
class RolloutCollector {
 public:
  RolloutCollector(env::EnvConfig cfg, int num_envs, std::uint64_t seed)
      : cfg_(cfg), seed_(seed) {
    cfg_.validate();
    for (int e = 0; e < num_envs; ++e) {
      envs_.emplace_back(cfg_);
      episode_index_.push_back(0);
      obs_.push_back(envs_.back().reset(env_seed(e, 0)));
      logs_.emplace_back();
      returns_.push_back(0.0);
    }
  }

  int num_envs() const { return static_cast<int>(envs_.size()); }
  long ticks_for(long agent_steps) const {
    const long per_tick = static_cast<long>(envs_.size()) * cfg_.num_agents;
    return (agent_steps + per_tick - 1) / per_tick;
  }

  Rollout collect(const enc::ParamSet& ps, long agent_steps, const PpoConfig& pc, int horizon,
                  num::Rng& rng) {
    const int E = num_envs(), N = cfg_.num_agents, K = cfg_.num_candidates;
    const long ticks = ticks_for(agent_steps);
    const Index width = static_cast<Index>(E) * N;
    const Index rows = width * ticks;
    Rollout ro;
    ro.obs.resize(rows, cfg_.obs_dim());
    ro.task_mask.resize(rows, K);
    ro.actions.assign(static_cast<std::size_t>(rows), 0);
    ro.logp_old.assign(static_cast<std::size_t>(rows), 0.0);
    ro.values = ro.rewards = ro.logp_old;
    ro.dones.assign(static_cast<std::size_t>(rows), false);
    ro.decision = ro.dones;
    std::vector<long> episode_of(static_cast<std::size_t>(rows), 0);

    for (long tick = 0; tick < ticks; ++tick) {
      const Index base = tick * width;
      for (int e = 0; e < E; ++e) {
        for (int i = 0; i < N; ++i) {
          const Index r = base + e * N + i;
          const env::Observation& ob = obs_[static_cast<std::size_t>(e)][static_cast<std::size_t>(i)];
          for (std::size_t j = 0; j < ob.features.size(); ++j) ro.obs(r, static_cast<Index>(j)) = ob.features[j];
          for (int k = 0; k < K; ++k) ro.task_mask(r, k) = ob.mask[static_cast<std::size_t>(k)] ? 1.0 : 0.0;
          ro.decision[static_cast<std::size_t>(r)] = envs_[static_cast<std::size_t>(e)].agents()[static_cast<std::size_t>(i)].task < 0;
          episode_of[static_cast<std::size_t>(r)] = episode_index_[static_cast<std::size_t>(e)] * E + e;
        }
      }
      Graph g;
      const enc::ModelView v = enc::bind_constant(g, ps);
      const PolicyOutputs po = forward_policy(v, g.constant(Matrix(ro.obs.middleRows(base, width))),
                                              ro.task_mask.middleRows(base, width), K, pc.bias);
      const Matrix& logp = po.logp.value();
      for (int e = 0; e < E; ++e) {
        std::vector<int> acts(static_cast<std::size_t>(N));
        for (int i = 0; i < N; ++i) {
          const Index local = e * N + i;
          const int a = sample_action(logp, po.action_mask, local, rng);
          const auto r = static_cast<std::size_t>(base + local);
          ro.actions[r] = a;
          ro.logp_old[r] = logp(local, a);
          ro.values[r] = po.value.value()(local, 0);
          acts[static_cast<std::size_t>(i)] = a + 1;
        }
        auto& w = envs_[static_cast<std::size_t>(e)];
        env::StepResult res = w.step(acts);
        for (int i = 0; i < N; ++i) {
          const auto r = static_cast<std::size_t>(base + e * N + i);
          ro.rewards[r] = res.rewards[static_cast<std::size_t>(i)];
          ro.dones[r] = res.done;
          returns_[static_cast<std::size_t>(e)] += res.rewards[static_cast<std::size_t>(i)];
        }
        logs_[static_cast<std::size_t>(e)].push_back(std::move(res.events));
        if (res.done) {
          const env::EpisodeKpis k = env::episode_kpis(logs_[static_cast<std::size_t>(e)], N);
          ro.episodes.push_back({returns_[static_cast<std::size_t>(e)], k.deliveries, k.unassigned_pct});
          logs_[static_cast<std::size_t>(e)].clear();
          returns_[static_cast<std::size_t>(e)] = 0.0;
          const long next = ++episode_index_[static_cast<std::size_t>(e)];
          obs_[static_cast<std::size_t>(e)] = w.reset(env_seed(e, next));
        } else {
          obs_[static_cast<std::size_t>(e)] = std::move(res.observations);
        }
      }
    }

    // Bootstrap values for streams still running at the cut.
    Matrix tail(width, cfg_.obs_dim()), tail_mask(width, K);
    for (int e = 0; e < E; ++e) {
      for (int i = 0; i < N; ++i) {
        const env::Observation& ob = obs_[static_cast<std::size_t>(e)][static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < ob.features.size(); ++j) tail(e * N + i, static_cast<Index>(j)) = ob.features[j];
        for (int k = 0; k < K; ++k) tail_mask(e * N + i, k) = ob.mask[static_cast<std::size_t>(k)] ? 1.0 : 0.0;
      }
    }
    Graph g;
    const enc::ModelView v = enc::bind_constant(g, ps);
    const Matrix boot = forward_policy(v, g.constant(tail), tail_mask, K, pc.bias).value.value();

    ro.advantages.assign(static_cast<std::size_t>(rows), 0.0);
    ro.returns = ro.advantages;
    std::vector<double> rw(static_cast<std::size_t>(ticks)), vl(rw.size());
    std::vector<bool> dn(rw.size());
    for (Index s = 0; s < width; ++s) {
      for (long tick = 0; tick < ticks; ++tick) {
        const auto r = static_cast<std::size_t>(tick * width + s);
        rw[static_cast<std::size_t>(tick)] = ro.rewards[r];
        vl[static_cast<std::size_t>(tick)] = ro.values[r];
        dn[static_cast<std::size_t>(tick)] = ro.dones[r];
      }
      const GaeResult gr = gae_advantages(rw, vl, dn, boot(s, 0), pc.gamma, pc.gae_lambda);
      for (long tick = 0; tick < ticks; ++tick) {
        const auto r = static_cast<std::size_t>(tick * width + s);
        ro.advantages[r] = gr.advantages[static_cast<std::size_t>(tick)];
        ro.returns[r] = gr.returns[static_cast<std::size_t>(tick)];
      }
    }
    normalize_advantages(ro.advantages, ro.decision);

    ro.next_row.assign(static_cast<std::size_t>(rows), -1);
    ro.future_row = ro.next_row;
    auto link = [&](Index r, int k) -> long {
      const Index s = r + static_cast<Index>(k) * width;
      if (s >= rows || episode_of[static_cast<std::size_t>(s)] != episode_of[static_cast<std::size_t>(r)]) return -1;
      return static_cast<long>(s);
    };
    for (Index r = 0; r < rows; ++r) {
      ro.next_row[static_cast<std::size_t>(r)] = link(r, 1);
      ro.future_row[static_cast<std::size_t>(r)] = link(r, horizon);
    }
    return ro;
  }

 private:
  std::uint64_t env_seed(int e, long episode) const {
    return num::derive_seed(seed_, 0x5EED000000ULL + (static_cast<std::uint64_t>(e) << 24) +
                                       static_cast<std::uint64_t>(episode));
  }

  env::EnvConfig cfg_;
  std::uint64_t seed_;
  std::vector<env::Warehouse> envs_;
  std::vector<long> episode_index_;
  std::vector<std::vector<env::Observation>> obs_;
  std::vector<std::vector<env::StepEvents>> logs_;
  std::vector<double> returns_;
};

// ---------------------------------------------------------------- objective

struct PpoTerms {
  Var total;    // policy + c_v·value − c_e·entropy
  Var policy;
  Var value;
  Var entropy;
  double clip_fraction = 0.0;
  Var latent;   // encoder output for the minibatch rows
};

/// Clipped surrogate on the given rows. The policy and entropy terms average
/// over decision rows (agent had no bound task); the value term over all rows.
inline PpoTerms ppo_objective(Graph& g, const enc::ModelView& v, const Rollout& ro,
                              const std::vector<Index>& rows, const PpoConfig& pc, int K) {
  const Index B = static_cast<Index>(rows.size());
  Matrix obs(B, ro.obs.cols()), mask(B, K), adv(B, 1), ret(B, 1), old(B, 1), w(B, 1);
  std::vector<Index> act(static_cast<std::size_t>(B));
  double decisions = 0.0;
  for (Index i = 0; i < B; ++i) {
    const auto r = static_cast<std::size_t>(rows[static_cast<std::size_t>(i)]);
    obs.row(i) = ro.obs.row(static_cast<Index>(r));
    mask.row(i) = ro.task_mask.row(static_cast<Index>(r));
    adv(i, 0) = ro.advantages[r];
    ret(i, 0) = ro.returns[r];
    old(i, 0) = ro.logp_old[r];
    w(i, 0) = ro.decision[r] ? 1.0 : 0.0;
    decisions += w(i, 0);
    act[static_cast<std::size_t>(i)] = ro.actions[r];
  }
  if (decisions > 0) w /= decisions;

  const PolicyOutputs po = forward_policy(v, g.constant(obs), mask, K, pc.bias);
  Var logp_a = num::pick(po.logp, act);
  Var ratio = num::exp(num::sub(logp_a, g.constant(old)));
  Var A = g.constant(adv);
  Var surr = num::minimum(num::mul(ratio, A), num::mul(num::clip(ratio, 1.0 - pc.clip, 1.0 + pc.clip), A));
  Var W = g.constant(w);

  PpoTerms t;
  t.policy = num::scale(num::sum(num::mul(W, surr)), -1.0);
  Var err = num::sub(po.value, g.constant(ret));
  t.value = num::mean(num::square(err));
  Var plogp = num::mul(g.constant(po.action_mask), num::mul(num::exp(po.logp), po.logp));
  t.entropy = num::scale(num::sum(num::mul(W, num::row_sum(plogp))), -1.0);
  t.total = num::sub(num::add(t.policy, num::scale(t.value, pc.value_coef)),
                     num::scale(t.entropy, pc.entropy_coef));
  t.latent = po.encoded.latent;

  const Matrix& rv = ratio.value();
  double clipped = 0.0;
  for (Index i = 0; i < B; ++i) {
    if (w(i, 0) > 0.0 && std::abs(rv(i, 0) - 1.0) > pc.clip) clipped += 1.0;
  }
  t.clip_fraction = decisions > 0 ? clipped / decisions : 0.0;
  return t;
}

/// Optional auxiliary term added to each minibatch loss with weight `lambda`.
struct AuxHook {
  double lambda = 0.0;
  std::function<Var(Graph&, const enc::ModelView&, Var latent, const std::vector<Index>& rows)> loss;
  std::function<void(const std::vector<Index>& rows)> after_step;
};

struct LossLogEntry {
  long step = 0;
  double ppo = 0.0;
  double lambda = 0.0;
  double aux = 0.0;
  double total = 0.0;
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double aux_loss = 0.0;
  double total_loss = 0.0;
  long updates = 0;
  std::vector<LossLogEntry> log;
};

inline std::unordered_set<std::string> frozen_names(const enc::ParamSet& ps, EncoderMode mode) {
  std::unordered_set<std::string> out;
  if (mode == EncoderMode::frozen) {
    for (const auto& p : ps.all()) {
      if (enc::is_encoder_param(p.name())) out.insert(p.name());
    }
  }
  return out;
}

/// Epochs of shuffled minibatch updates on one rollout.
inline PpoStats ppo_update(const Rollout& ro, enc::ParamSet& ps, num::Optimizer& opt,
                           const PpoConfig& pc, int K, num::Rng& rng, const AuxHook* aux = nullptr,
                           long step_offset = 0) {
  pc.validate();
  const auto frozen = frozen_names(ps, pc.encoder_mode);
  std::vector<Index> order(static_cast<std::size_t>(ro.size()));
  for (Index i = 0; i < ro.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  std::vector<num::Parameter*> trainable = ps.select([&](const std::string& n) { return frozen.count(n) == 0; });
  PpoStats st;
  for (int ep = 0; ep < pc.epochs; ++ep) {
    rng.shuffle(order);
    for (std::size_t from = 0; from < order.size(); from += static_cast<std::size_t>(pc.minibatch)) {
      const std::size_t to = std::min(order.size(), from + static_cast<std::size_t>(pc.minibatch));
      std::vector<Index> rows(order.begin() + static_cast<long>(from), order.begin() + static_cast<long>(to));
      ps.zero_grad();
      Graph g;
      const enc::ModelView v = enc::bind(g, ps, enc::BindMode::trainable, frozen);
      PpoTerms t = ppo_objective(g, v, ro, rows, pc, K);
      Var total = t.total;
      double aux_value = 0.0;
      const bool use_aux = aux != nullptr && aux->lambda != 0.0 && aux->loss;
      if (use_aux) {
        Var a = aux->loss(g, v, t.latent, rows);
        aux_value = a.item();
        total = num::add(t.total, num::scale(a, aux->lambda));
      }
      if (!std::isfinite(total.item())) {
        std::ostringstream os;
        os << "ppo: non-finite loss at update " << st.updates << " (policy=" << t.policy.item()
           << " value=" << t.value.item() << " entropy=" << t.entropy.item() << " aux=" << aux_value
           << " minibatch=" << rows.size() << ")";
        throw NumericalError(os.str());
      }
      g.backward(total);
      opt.step(trainable);
      if (use_aux && aux->after_step) aux->after_step(rows);

      const double lam = aux != nullptr ? aux->lambda : 0.0;
      st.log.push_back({step_offset + st.updates, t.total.item(), lam, aux_value, total.item()});
      st.policy_loss += t.policy.item();
      st.value_loss += t.value.item();
      st.entropy += t.entropy.item();
      st.clip_fraction += t.clip_fraction;
      st.aux_loss += aux_value;
      st.total_loss += total.item();
      ++st.updates;
    }
  }
  if (st.updates > 0) {
    const double n = static_cast<double>(st.updates);
    st.policy_loss /= n;
    st.value_loss /= n;
    st.entropy /= n;
    st.clip_fraction /= n;
    st.aux_loss /= n;
    st.total_loss /= n;
  }
  return st;
}

}  // namespace scalecomm::train
