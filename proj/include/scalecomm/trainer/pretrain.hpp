// SPDX-License-Identifier: Apache-2.0
//
// Phase I: self-supervised pretraining over the heuristic replay buffer.

#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <sstream>

#include "scalecomm/numcore/optimizer.hpp"
#include "scalecomm/ssl/objective.hpp"
#include "scalecomm/trainer/report.hpp"

namespace scalecomm::train {

struct PretrainConfig {
  ssl::SslWeights weights;
  ssl::Ablations ablations;
  ssl::AugmentationConfig augment;
  int epochs = 30;
  int batch_size = 256;
  double lr = 1e-3;

  void validate() const {
    weights.validate();
    augment.validate();
    if (epochs < 0) throw ConfigError("pretrain: epochs must be >= 0");
    if (batch_size < 2) throw ConfigError("pretrain: batch_size must be >= 2");
    if (!(lr > 0.0)) throw ConfigError("pretrain: lr must be positive");
  }
};

inline int agents_in(const env::TrajectoryBuffer& buf) {
  int n = 0;
  for (const auto& tr : buf.rows()) n = std::max(n, tr.agent + 1);
  return n;
}

using EpochCallback = std::function<void(int epoch, const ssl::SslBreakdown&)>;

/// Per step: sample minibatch, encode the EMA view, EMA update, L_SSL,
/// optimizer step, prototype renormalisation, enqueue detached EMA latents.
/// The last partial minibatch of each epoch is dropped.
inline void pretrain_ssl(const env::TrajectoryBuffer& buf, enc::ParamSet& params, enc::EmaTarget& target,
                         ssl::MemoryQueue& queue, const PretrainConfig& cfg, num::Rng& rng,
                         TrainReport& report, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (buf.empty()) throw ConfigError("pretrain: replay buffer is empty");
  if (buf.obs_dim() != params[enc::names::kEncW1].value().rows()) {
    throw ConfigError("pretrain: buffer observation width does not match the encoder");
  }
  const auto started = std::chrono::steady_clock::now();
  const int num_agents = agents_in(buf);
  num::Optimizer opt({num::OptimizerKind::adam, cfg.lr});
  std::vector<num::Parameter*> all = params.select([](const std::string&) { return true; });
  ssl::CodeCenter center;
  std::vector<std::size_t> order(buf.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t B = std::min(order.size(), static_cast<std::size_t>(cfg.batch_size));
  const std::size_t steps = order.size() / B;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    ssl::SslBreakdown sum;
    for (std::size_t s = 0; s < steps; ++s) {
      std::span<const std::size_t> anchors(order.data() + s * B, B);
      const ssl::SslBatch batch =
          ssl::make_batch(buf, anchors, num_agents, cfg.weights.cpc_horizon, cfg.augment, rng);
      const ssl::TargetOutputs tgt = ssl::compute_targets(target.params, batch, queue);
      enc::ema_update(params, target);

      params.zero_grad();
      num::Graph g;
      const enc::ModelView v = enc::bind(g, params);
      ssl::SslLoss loss = ssl::total_ssl_loss(g, v, batch, tgt, cfg.weights, cfg.ablations,
                                              report.ssl_diagnostics, &center);
      if (!std::isfinite(loss.parts.total)) {
        std::ostringstream os;
        os << "pretrain: non-finite loss at epoch " << epoch + 1 << " step " << s << " (X=" << loss.parts.x
           << " KNN=" << loss.parts.knn << " CPC=" << loss.parts.cpc << " Proto=" << loss.parts.proto
           << " pred=" << loss.parts.pred << " ts=" << loss.parts.ts << " hz=" << loss.parts.hz
           << " CKA=" << loss.parts.cka << ")";
        throw NumericalError(os.str());
      }
      g.backward(loss.total);
      opt.step(all);
      enc::normalize_prototypes(params);
      queue.push(tgt.latent);
      sum += loss.parts;
      report.ssl_step_log.push_back(loss.parts);
      ++report.ssl_steps;
    }
    const ssl::SslBreakdown mean = steps > 0 ? sum.scaled(1.0 / static_cast<double>(steps)) : sum;
    report.ssl_epochs.push_back(mean);
    report.phase_log.emplace_back("ssl_epoch");
    if (on_epoch) on_epoch(epoch + 1, mean);
  }
  report.wall_seconds +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
}

}  // namespace scalecomm::train
