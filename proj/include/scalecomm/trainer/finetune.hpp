// SPDX-License-Identifier: Apache-2.0
//
// Phase II: PPO fine-tuning with the curriculum-weighted temporal auxiliary
// term L_aux = γ_cpc·L_CPC + λ2·L_ts on on-policy rollouts.

#pragma once

#include <chrono>
#include <functional>

#include "scalecomm/encoder/checkpoint.hpp"
#include "scalecomm/ssl/losses.hpp"
#include "scalecomm/ssl/objective.hpp"
#include "scalecomm/trainer/report.hpp"
#include "scalecomm/trainer/schedule.hpp"

namespace scalecomm::train {

struct FinetuneConfig {
  PpoConfig ppo;
  CurriculumSchedule schedule{0.0, 0.1, 0};  // ramp_steps <= 0: half the total fine-tuning steps
  int iterations = 10;
  ssl::SslWeights weights;      // gamma_cpc, lambda2, tau and cpc_horizon are used
  ssl::Ablations ablations;     // only no_curriculum matters here
  Index queue_capacity = 1024;

  CurriculumSchedule resolved_schedule() const {
    CurriculumSchedule s = schedule;
    if (s.ramp_steps <= 0) {
      s.ramp_steps = std::max<long>(1, static_cast<long>(iterations) * ppo.steps_per_iteration / 2);
    }
    return s;
  }

  void validate() const {
    ppo.validate();
    weights.validate();
    resolved_schedule().validate();
    if (iterations < 0) throw ConfigError("finetune: iterations must be >= 0");
    if (queue_capacity < 1) throw ConfigError("finetune: queue capacity must be >= 1");
  }
};

/// λ for an iteration starting after `t` agent-steps. The curriculum ablation pins λ_max.
inline double iteration_lambda(long t, const FinetuneConfig& cfg) {
  const CurriculumSchedule s = cfg.resolved_schedule();
  return cfg.ablations.no_curriculum ? s.lambda_max : curriculum_lambda(t, s);
}

using IterationCallback = std::function<void(const IterationStats&)>;

inline void finetune(const env::EnvConfig& env_cfg, enc::Checkpoint& ck, const FinetuneConfig& cfg,
                     std::uint64_t seed, TrainReport& report, const IterationCallback& on_iteration = {}) {
  cfg.validate();
  if (env_cfg.obs_dim() != ck.online[enc::names::kEncW1].value().rows()) {
    throw LoadError("finetune: checkpoint encoder input does not match the environment observation");
  }
  if (cfg.iterations == 0) return;
  const auto started = std::chrono::steady_clock::now();
  const int K = env_cfg.num_candidates;
  const int horizon = cfg.weights.cpc_horizon;
  num::Rng rng(num::derive_seed(seed, 0xF17E7ULL));
  RolloutCollector collector(env_cfg, cfg.ppo.num_envs, num::derive_seed(seed, 0xC011ECULL));
  num::Optimizer opt({num::OptimizerKind::adam, cfg.ppo.lr});
  ssl::MemoryQueue queue(cfg.queue_capacity, ck.online[enc::names::kEncW2].value().cols());

  for (int it = 0; it < cfg.iterations; ++it) {
    const double lambda = iteration_lambda(report.env_steps, cfg);
    const Rollout ro = collector.collect(ck.online, cfg.ppo.steps_per_iteration, cfg.ppo, horizon, rng);

    Matrix pending_future;  // EMA latents of this minibatch's t+k frames, queued after the step
    AuxHook hook;
    hook.lambda = lambda;
    hook.loss = [&](Graph& g, const enc::ModelView& v, Var latent, const std::vector<Index>& rows) {
      const Index B = static_cast<Index>(rows.size());
      std::vector<bool> future_valid(rows.size(), false);
      Matrix future_obs = Matrix::Zero(B, ro.obs.cols());
      std::vector<Index> with_next, next_src;
      for (Index i = 0; i < B; ++i) {
        const auto r = static_cast<std::size_t>(rows[static_cast<std::size_t>(i)]);
        if (ro.future_row[r] >= 0) {
          future_valid[static_cast<std::size_t>(i)] = true;
          future_obs.row(i) = ro.obs.row(ro.future_row[r]);
        }
        if (ro.next_row[r] >= 0) {
          with_next.push_back(i);
          next_src.push_back(ro.next_row[r]);
        }
      }
      Graph tg;
      const enc::ModelView tv = enc::bind_constant(tg, ck.target.params);
      const Matrix fut = enc::encode(tv, tg.constant(future_obs)).latent.value();
      std::vector<Index> fut_rows;
      for (Index i = 0; i < B; ++i) {
        if (future_valid[static_cast<std::size_t>(i)]) fut_rows.push_back(i);
      }
      pending_future.resize(static_cast<Index>(fut_rows.size()), fut.cols());
      for (std::size_t j = 0; j < fut_rows.size(); ++j) pending_future.row(static_cast<Index>(j)) = fut.row(fut_rows[j]);

      Var cpc = ssl::loss_cpc(enc::predict_future(v, enc::message(v, latent)), g.constant(fut), future_valid,
                              queue.contents(), cfg.weights.tau, &report.ssl_diagnostics);
      Var ts = ssl::zero_loss(g);
      if (!with_next.empty()) {
        Matrix next_obs(static_cast<Index>(next_src.size()), ro.obs.cols());
        for (std::size_t j = 0; j < next_src.size(); ++j) next_obs.row(static_cast<Index>(j)) = ro.obs.row(next_src[j]);
        Var z_next = enc::encode(v, g.constant(next_obs)).latent;
        ts = ssl::loss_cosine_gap(num::gather_rows(latent, with_next), z_next);
      } else {
        ++report.ssl_diagnostics.missing_temporal_pairs;
      }
      return num::add(num::scale(cpc, cfg.weights.gamma_cpc), num::scale(ts, cfg.weights.lambda2));
    };
    hook.after_step = [&](const std::vector<Index>&) {
      enc::ema_update(ck.online, ck.target);
      queue.push(pending_future);
    };

    PpoStats st = ppo_update(ro, ck.online, opt, cfg.ppo, K, rng, &hook, report.ppo_updates);
    report.env_steps += ro.size();
    report.ppo_updates += st.updates;
    report.loss_log.insert(report.loss_log.end(), st.log.begin(), st.log.end());
    report.phase_log.emplace_back("ppo_update");

    IterationStats s;
    s.iteration = it + 1;
    s.env_steps = report.env_steps;
    s.lambda = lambda;
    s.episodes = static_cast<int>(ro.episodes.size());
    for (const auto& e : ro.episodes) {
      s.mean_return += e.team_return;
      s.deliveries_per_ep += e.deliveries;
      s.unassigned_pct += e.unassigned_pct;
    }
    if (s.episodes > 0) {
      s.mean_return /= s.episodes;
      s.deliveries_per_ep /= s.episodes;
      s.unassigned_pct /= s.episodes;
    }
    s.clip_fraction = st.clip_fraction;
    s.policy_loss = st.policy_loss;
    s.value_loss = st.value_loss;
    s.entropy = st.entropy;
    s.aux_loss = st.aux_loss;
    s.total_loss = st.total_loss;
    report.iterations.push_back(s);
    if (on_iteration) on_iteration(s);
  }
  ck.phase = "finetune";
  report.wall_seconds +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
}

}  // namespace scalecomm::train
