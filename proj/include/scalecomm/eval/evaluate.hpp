// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scalecomm/encoder/model.hpp"
#include "scalecomm/env/trajectory.hpp"
#include "scalecomm/eval/metrics.hpp"
#include "scalecomm/trainer/ppo.hpp"

namespace scalecomm::eval {

struct EvalDataset {
  Matrix messages;   // M×d_m
  Matrix latents;    // M×d_z
  Matrix hidden;     // M×d_h
  Matrix keys;       // latents projected into message space
  Matrix predicted;  // predictor output g(m), M×d_z
  std::vector<int> labels;
  std::vector<long> successor;  // row of the same agent k steps later, or -1
  std::vector<int> episode, t, agent;

  Index size() const { return messages.rows(); }
};

inline EvalDataset encode_dataset(const env::TrajectoryBuffer& buf, const enc::ParamSet& ps, int horizon) {
  if (buf.empty()) throw DomainError("evaluate: empty dataset");
  const Index M = static_cast<Index>(buf.size());
  Matrix obs(M, buf.obs_dim());
  EvalDataset d;
  for (Index i = 0; i < M; ++i) {
    const auto& tr = buf[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < tr.obs.size(); ++j) obs(i, static_cast<Index>(j)) = tr.obs[j];
    d.labels.push_back(tr.label);
    d.episode.push_back(tr.episode);
    d.t.push_back(tr.t);
    d.agent.push_back(tr.agent);
    d.successor.push_back(buf.successor(static_cast<std::size_t>(i), horizon));
  }
  num::Graph g;
  const enc::ModelView v = enc::bind_constant(g, ps);
  const enc::Encoded e = enc::encode(v, g.constant(obs));
  num::Var m = enc::message(v, e.latent);
  d.hidden = e.hidden.value();
  d.latents = e.latent.value();
  d.messages = m.value();
  d.keys = enc::compare_key(v, e.latent).value();
  d.predicted = enc::predict_future(v, m).value();
  return d;
}

struct MetricsReport {
  double r_at_1 = 0.0;
  double temp_at_1 = 0.0;
  double proto_nmi = 0.0;
  double probe_acc = 0.0;
  double cka_mz = 0.0;

  static constexpr const char* csv_header() { return "Model,R@1,Temp@1,ProtoNMI,ProbeAcc,CKA(m,z)"; }
  void write_csv_row(std::ostream& os, const std::string& model) const {
    os << model << std::fixed << std::setprecision(6) << ',' << r_at_1 << ',' << temp_at_1 << ','
       << proto_nmi << ',' << probe_acc << ',' << cka_mz << '\n';
    os.unsetf(std::ios::floatfield);
  }
};

inline MetricsReport compute_metrics(const EvalDataset& d, const Matrix& prototypes, std::uint64_t seed,
                                     const ProbeConfig& probe = {}) {
  MetricsReport r;
  r.r_at_1 = recall_at_1(d.messages, d.keys);
  r.temp_at_1 = temporal_at_1(d.predicted, d.latents, d.successor);
  r.proto_nmi = proto_nmi(d.messages, prototypes, d.labels);
  r.probe_acc = probe_accuracy(d.latents, d.labels, seed, probe);
  r.cka_mz = linear_cka(d.messages, d.latents);
  return r;
}

struct KpiSummary {
  double deliveries_mean = 0.0;
  double deliveries_sd = 0.0;
  double unassigned_pct = 0.0;
  int episodes = 0;

  static constexpr const char* csv_header() { return "Method,Deliveries/ep,SD,Unassigned (%)"; }
  void write_csv_row(std::ostream& os, const std::string& method) const {
    os << method << std::fixed << std::setprecision(4) << ',' << deliveries_mean << ',' << deliveries_sd
       << ',' << unassigned_pct << '\n';
    os.unsetf(std::ios::floatfield);
  }
};

inline KpiSummary summarize(const std::vector<env::EpisodeKpis>& eps) {
  KpiSummary s;
  s.episodes = static_cast<int>(eps.size());
  if (eps.empty()) return s;
  for (const auto& e : eps) {
    s.deliveries_mean += e.deliveries;
    s.unassigned_pct += e.unassigned_pct;
  }
  const double n = static_cast<double>(eps.size());
  s.deliveries_mean /= n;
  s.unassigned_pct /= n;
  double sq = 0.0;
  for (const auto& e : eps) sq += (e.deliveries - s.deliveries_mean) * (e.deliveries - s.deliveries_mean);
  s.deliveries_sd = eps.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
  return s;
}

/// Deterministic (argmax) rollouts of the policy on fresh seeded episodes.
inline KpiSummary policy_kpis(const enc::ParamSet& ps, const env::EnvConfig& cfg, int episodes,
                              std::uint64_t seed, enc::BiasSettings bias = {}) {
  env::Warehouse w(cfg);
  const int K = cfg.num_candidates, N = cfg.num_agents;
  std::vector<env::EpisodeKpis> out;
  for (int e = 0; e < episodes; ++e) {
    auto obs = w.reset(env::episode_seed(seed, e));
    std::vector<env::StepEvents> log;
    while (!w.done()) {
      Matrix x(N, cfg.obs_dim()), mask(N, K);
      for (int i = 0; i < N; ++i) {
        const auto& ob = obs[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < ob.features.size(); ++j) x(i, static_cast<Index>(j)) = ob.features[j];
        for (int k = 0; k < K; ++k) mask(i, k) = ob.mask[static_cast<std::size_t>(k)] ? 1.0 : 0.0;
      }
      num::Graph g;
      const enc::ModelView v = enc::bind_constant(g, ps);
      const train::PolicyOutputs po = train::forward_policy(v, g.constant(x), mask, K, bias);
      std::vector<int> acts(static_cast<std::size_t>(N));
      for (int i = 0; i < N; ++i) acts[static_cast<std::size_t>(i)] = train::greedy_policy_action(po.logp.value(), po.action_mask, i) + 1;
      auto res = w.step(acts);
      log.push_back(std::move(res.events));
      obs = std::move(res.observations);
    }
    out.push_back(env::episode_kpis(log, N));
  }
  return summarize(out);
}

/// The nearest-task heuristic on the same seeded episodes, as a reference row.
inline KpiSummary heuristic_kpis(const env::EnvConfig& cfg, int episodes, std::uint64_t seed) {
  env::Warehouse w(cfg);
  std::vector<env::EpisodeKpis> out;
  for (int e = 0; e < episodes; ++e) {
    auto obs = w.reset(env::episode_seed(seed, e));
    std::vector<env::StepEvents> log;
    while (!w.done()) {
      std::vector<int> acts;
      for (const auto& ob : obs) acts.push_back(env::greedy_action(ob));
      auto res = w.step(acts);
      log.push_back(std::move(res.events));
      obs = std::move(res.observations);
    }
    out.push_back(env::episode_kpis(log, cfg.num_agents));
  }
  return summarize(out);
}

struct EvalConfig {
  int episodes = 5;        // representation dataset
  int steps = 200;
  int kpi_episodes = 10;   // policy rollouts
  ProbeConfig probe;

  void validate() const {
    if (episodes < 1 || steps < 1) throw ConfigError("eval: episodes and steps must be >= 1");
    if (kpi_episodes < 0) throw ConfigError("eval: kpi_episodes must be >= 0");
    if (probe.max_epochs < 1 || !(probe.tolerance >= 0.0) || !(probe.lr > 0.0)) {
      throw ConfigError("eval: invalid probe settings");
    }
  }
};

struct Evaluation {
  MetricsReport metrics;
  KpiSummary kpis;
};

/// Representation metrics on a freshly collected heuristic dataset, plus
/// policy KPIs from fresh rollouts (300-step episodes, or the env default).
inline Evaluation evaluate(const enc::ParamSet& ps, const env::EnvConfig& env_cfg, const EvalConfig& cfg,
                           int horizon, std::uint64_t seed, enc::BiasSettings bias = {}) {
  cfg.validate();
  const auto data = env::collect_heuristic_dataset(env_cfg, cfg.episodes, cfg.steps,
                                                   num::derive_seed(seed, 0xE7A1ULL));
  const EvalDataset d = encode_dataset(data, ps, horizon);
  Evaluation ev;
  ev.metrics = compute_metrics(d, ps[enc::names::kProto].value().mat(), seed, cfg.probe);
  if (cfg.kpi_episodes > 0) {
    ev.kpis = policy_kpis(ps, env_cfg, cfg.kpi_episodes, num::derive_seed(seed, 0xB0A7ULL), bias);
  }
  return ev;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"R@1", r.r_at_1}, {"Temp@1", r.temp_at_1}, {"ProtoNMI", r.proto_nmi},
          {"ProbeAcc", r.probe_acc}, {"CKA(m,z)", r.cka_mz}};
}

inline nlohmann::json to_json(const KpiSummary& k) {
  return {{"deliveries_per_ep", k.deliveries_mean}, {"deliveries_sd", k.deliveries_sd},
          {"unassigned_pct", k.unassigned_pct}, {"episodes", k.episodes}};
}

}  // namespace scalecomm::eval
