// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scalecomm/ssl/objective.hpp"
#include "scalecomm/trainer/ppo.hpp"

namespace scalecomm::train {

struct IterationStats {
  int iteration = 0;
  long env_steps = 0;  // cumulative agent-steps after this iteration
  double lambda = 0.0;
  double mean_return = 0.0;
  double deliveries_per_ep = 0.0;
  double unassigned_pct = 0.0;
  int episodes = 0;
  double clip_fraction = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double aux_loss = 0.0;
  double total_loss = 0.0;
};

struct TrainReport {
  std::vector<ssl::SslBreakdown> ssl_epochs;  // mean over each epoch's steps
  std::vector<ssl::SslBreakdown> ssl_step_log;
  ssl::Diagnostics ssl_diagnostics;
  std::vector<IterationStats> iterations;
  std::vector<LossLogEntry> loss_log;
  std::vector<std::string> phase_log;  // "ssl_epoch" / "ppo_update", in execution order
  long ssl_steps = 0;
  long env_steps = 0;
  long ppo_updates = 0;
  double wall_seconds = 0.0;  // not serialized, so reports stay reproducible
};

inline nlohmann::json breakdown_json(const ssl::SslBreakdown& b) {
  return {{"L_X", b.x},    {"L_KNN", b.knn}, {"L_CPC", b.cpc}, {"L_Proto", b.proto}, {"L_pred", b.pred},
          {"L_ts", b.ts},  {"L_hz", b.hz},   {"L_CKA", b.cka}, {"L_inv", b.inv},     {"total", b.total}};
}

inline nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json j;
  j["ssl_steps"] = r.ssl_steps;
  j["env_steps"] = r.env_steps;
  j["ppo_updates"] = r.ppo_updates;
  auto& epochs = j["ssl_epochs"] = nlohmann::json::array();
  for (const auto& b : r.ssl_epochs) epochs.push_back(breakdown_json(b));
  const auto& d = r.ssl_diagnostics;
  j["ssl_warnings"] = {{"empty_queue", d.empty_queue},
                       {"missing_cpc_pairs", d.missing_cpc_pairs},
                       {"missing_temporal_pairs", d.missing_temporal_pairs},
                       {"missing_peers", d.missing_peers},
                       {"message_guard", d.message_guard}};
  auto& its = j["iterations"] = nlohmann::json::array();
  for (const auto& s : r.iterations) {
    its.push_back({{"iteration", s.iteration},
                   {"env_steps", s.env_steps},
                   {"lambda", s.lambda},
                   {"mean_return", s.mean_return},
                   {"deliveries_per_ep", s.deliveries_per_ep},
                   {"unassigned_pct", s.unassigned_pct},
                   {"episodes", s.episodes},
                   {"clip_fraction", s.clip_fraction},
                   {"policy_loss", s.policy_loss},
                   {"value_loss", s.value_loss},
                   {"entropy", s.entropy},
                   {"aux_loss", s.aux_loss},
                   {"total_loss", s.total_loss}});
  }
  j["phase_log"] = r.phase_log;
  return j;
}

inline void write_ssl_csv(std::ostream& os, const TrainReport& r) {
  os << "epoch" << std::string(ssl::SslBreakdown::csv_header()).substr(4) << '\n';
  for (std::size_t e = 0; e < r.ssl_epochs.size(); ++e) r.ssl_epochs[e].write_csv(os, static_cast<long>(e + 1));
}

inline void write_ssl_steps_csv(std::ostream& os, const TrainReport& r) {
  os << ssl::SslBreakdown::csv_header() << '\n';
  for (std::size_t s = 0; s < r.ssl_step_log.size(); ++s) r.ssl_step_log[s].write_csv(os, static_cast<long>(s + 1));
}

inline void write_ppo_csv(std::ostream& os, const TrainReport& r) {
  os << "iteration,env_steps,lambda,mean_return,deliveries_per_ep,unassigned_pct,episodes,"
        "clip_fraction,policy_loss,value_loss,entropy,aux_loss,total_loss\n";
  os << std::setprecision(17);
  for (const auto& s : r.iterations) {
    os << s.iteration << ',' << s.env_steps << ',' << s.lambda << ',' << s.mean_return << ','
       << s.deliveries_per_ep << ',' << s.unassigned_pct << ',' << s.episodes << ',' << s.clip_fraction
       << ',' << s.policy_loss << ',' << s.value_loss << ',' << s.entropy << ',' << s.aux_loss << ','
       << s.total_loss << '\n';
  }
}

inline void write_loss_log_csv(std::ostream& os, const TrainReport& r) {
  os << "step,L_PPO,lambda,L_aux,total\n" << std::setprecision(17);
  for (const auto& e : r.loss_log) {
    os << e.step << ',' << e.ppo << ',' << e.lambda << ',' << e.aux << ',' << e.total << '\n';
  }
}

}  // namespace scalecomm::train
