// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "scalecomm/env/warehouse.hpp"
#include "scalecomm/errors.hpp"
#include "scalecomm/numcore/rng.hpp"

namespace scalecomm::env {

struct Transition {
  int episode = 0;
  int t = 0;
  int agent = 0;
  std::vector<double> obs;
  std::vector<bool> mask;
  int action = 0;
  double reward = 0.0;
  bool done = false;
  int label = 0;
};

/// Insertion-ordered store of (episode, t, agent, observation, action, reward,
/// done, label) tuples with O(1) lookup of same-agent successors.
class TrajectoryBuffer {
 public:
  void push(Transition tr) {
    const auto key = pack(tr.episode, tr.t, tr.agent);
    if (auto it = last_t_.find(pack(tr.episode, 0, tr.agent)); it != last_t_.end()) {
      if (tr.t <= it->second) throw StructuralError("trajectory: t must increase within an episode");
      it->second = tr.t;
    } else {
      last_t_.emplace(pack(tr.episode, 0, tr.agent), tr.t);
    }
    index_.emplace(key, rows_.size());
    rows_.push_back(std::move(tr));
  }

  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  const Transition& operator[](std::size_t i) const { return rows_[i]; }
  const std::vector<Transition>& rows() const { return rows_; }
  int obs_dim() const { return rows_.empty() ? 0 : static_cast<int>(rows_.front().obs.size()); }

  /// Row index of the same agent k steps later in the same episode, or -1.
  long successor(std::size_t row, int k) const {
    const Transition& tr = rows_[row];
    auto it = index_.find(pack(tr.episode, tr.t + k, tr.agent));
    return it == index_.end() ? -1 : static_cast<long>(it->second);
  }

  /// Row index of another agent at the same (episode, t), chosen by `pick`
  /// among the peers; -1 when the agent is alone.
  long peer(std::size_t row, int num_agents, std::size_t pick) const {
    if (num_agents < 2) return -1;
    const Transition& tr = rows_[row];
    int other = static_cast<int>(pick % static_cast<std::size_t>(num_agents - 1));
    if (other >= tr.agent) ++other;
    auto it = index_.find(pack(tr.episode, tr.t, other));
    return it == index_.end() ? -1 : static_cast<long>(it->second);
  }

  friend bool operator==(const TrajectoryBuffer& a, const TrajectoryBuffer& b) {
    if (a.rows_.size() != b.rows_.size()) return false;
    for (std::size_t i = 0; i < a.rows_.size(); ++i) {
      const auto& x = a.rows_[i];
      const auto& y = b.rows_[i];
      if (x.episode != y.episode || x.t != y.t || x.agent != y.agent || x.obs != y.obs ||
          x.mask != y.mask || x.action != y.action || x.reward != y.reward || x.done != y.done ||
          x.label != y.label) {
        return false;
      }
    }
    return true;
  }

 private:
  static std::uint64_t pack(int episode, int t, int agent) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(episode)) << 40) ^
           (static_cast<std::uint64_t>(static_cast<std::uint32_t>(t)) << 12) ^
           static_cast<std::uint64_t>(static_cast<std::uint32_t>(agent));
  }

  std::vector<Transition> rows_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
  std::unordered_map<std::uint64_t, int> last_t_;
};

struct EpisodeKpis {
  double deliveries = 0.0;
  double unassigned_pct = 0.0;
};

/// Throughput KPIs of one finished episode from its per-step event log.
inline EpisodeKpis episode_kpis(const std::vector<StepEvents>& steps, int num_agents) {
  if (steps.empty() || num_agents < 1) return {0.0, 0.0};
  long deliveries = 0, idle = 0;
  for (const auto& ev : steps) {
    deliveries += ev.deliveries;
    idle += ev.idle;
  }
  const double agent_steps = static_cast<double>(num_agents) * static_cast<double>(steps.size());
  return {static_cast<double>(deliveries), 100.0 * static_cast<double>(idle) / agent_steps};
}

/// Episode seeds are derived from the run seed so that episode e is reproducible alone.
inline std::uint64_t episode_seed(std::uint64_t seed, int episode) {
  return num::derive_seed(seed, 0xE915ULL + static_cast<std::uint64_t>(episode));
}

/// Rolls out the nearest-task greedy policy for `episodes` episodes of
/// `steps` ticks and records every agent-step.
inline TrajectoryBuffer collect_heuristic_dataset(EnvConfig cfg, int episodes, int steps,
                                                  std::uint64_t seed) {
  if (episodes < 1 || steps < 1) throw ConfigError("collect: episodes and steps must be >= 1");
  cfg.episode_length = steps;
  Warehouse env(cfg);
  TrajectoryBuffer buf;
  for (int e = 0; e < episodes; ++e) {
    auto obs = env.reset(episode_seed(seed, e));
    while (!env.done()) {
      std::vector<int> actions;
      actions.reserve(obs.size());
      for (const auto& ob : obs) actions.push_back(greedy_action(ob));
      const int t = env.t();
      auto res = env.step(actions);
      for (std::size_t i = 0; i < obs.size(); ++i) {
        buf.push(Transition{e, t, static_cast<int>(i), obs[i].features, obs[i].mask, actions[i],
                            res.rewards[i], res.done, obs[i].label});
      }
      obs = std::move(res.observations);
    }
  }
  return buf;
}

// ---------------------------------------------------------------- NDJSON export

inline nlohmann::json to_json(const Transition& tr) {
  nlohmann::json j;
  j["episode"] = tr.episode;
  j["t"] = tr.t;
  j["agent"] = tr.agent;
  j["obs"] = tr.obs;
  std::vector<int> mask(tr.mask.begin(), tr.mask.end());
  j["mask"] = mask;
  j["action"] = tr.action;
  j["reward"] = tr.reward;
  j["done"] = tr.done;
  j["label"] = tr.label;
  return j;
}

inline void write_ndjson(std::ostream& os, const TrajectoryBuffer& buf) {
  for (const auto& tr : buf.rows()) os << to_json(tr).dump() << '\n';
}

inline TrajectoryBuffer read_ndjson(std::istream& is) {
  TrajectoryBuffer buf;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Transition tr;
      tr.episode = j.at("episode").get<int>();
      tr.t = j.at("t").get<int>();
      tr.agent = j.at("agent").get<int>();
      tr.obs = j.at("obs").get<std::vector<double>>();
      for (int m : j.at("mask").get<std::vector<int>>()) tr.mask.push_back(m != 0);
      tr.action = j.at("action").get<int>();
      tr.reward = j.at("reward").get<double>();
      tr.done = j.at("done").get<bool>();
      tr.label = j.at("label").get<int>();
      buf.push(std::move(tr));
    } catch (const nlohmann::json::exception& e) {
      throw LoadError("trajectory line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return buf;
}

inline void save_ndjson(const std::string& path, const TrajectoryBuffer& buf) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path);
  write_ndjson(os, buf);
  if (!os) throw ConfigError("write failed for " + path);
}

inline TrajectoryBuffer load_ndjson(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError("missing trajectory buffer " + path);
  return read_ndjson(is);
}

}  // namespace scalecomm::env
