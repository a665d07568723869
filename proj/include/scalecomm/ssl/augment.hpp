// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "scalecomm/env/warehouse.hpp"
#include "scalecomm/errors.hpp"
#include "scalecomm/numcore/rng.hpp"

namespace scalecomm::ssl {

struct AugmentationConfig {
  double mask_prob = 0.2;    // per candidate row
  double jitter_std = 0.02;  // Gaussian noise on task features
  double dropout = 0.1;      // on self features

  void validate() const {
    if (!(mask_prob >= 0.0 && mask_prob <= 1.0)) throw ConfigError("augment: mask_prob must be in [0,1]");
    if (!(dropout >= 0.0 && dropout <= 1.0)) throw ConfigError("augment: dropout must be in [0,1]");
    if (!(jitter_std >= 0.0)) throw ConfigError("augment: jitter_std must be non-negative");
  }

  /// The weaker view fed to the EMA branch: half the mask rate, no dropout.
  AugmentationConfig weak() const { return {mask_prob * 0.5, jitter_std, 0.0}; }
};

/// Augmented copy of one observation. Candidate rows are zeroed independently
/// with `mask_prob`; surviving valid rows get Gaussian jitter; self features
/// go through inverted dropout. Padded rows stay zero.
inline std::vector<double> augment(std::span<const double> obs, const std::vector<bool>& valid,
                                   const AugmentationConfig& cfg, num::Rng& rng) {
  cfg.validate();
  std::vector<double> out(obs.begin(), obs.end());
  const std::size_t K = valid.size();
  if (out.size() != env::kSelfFeatures + env::kTaskFeatures * K) {
    throw StructuralError("augment: observation width does not match mask");
  }
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t off = env::kSelfFeatures + env::kTaskFeatures * k;
    const bool drop_row = cfg.mask_prob > 0.0 && rng.bernoulli(cfg.mask_prob);
    if (drop_row) {
      for (int f = 0; f < env::kTaskFeatures; ++f) out[off + f] = 0.0;
    } else if (valid[k] && cfg.jitter_std > 0.0) {
      for (int f = 0; f < env::kTaskFeatures; ++f) out[off + f] += rng.normal(0.0, cfg.jitter_std);
    }
  }
  if (cfg.dropout > 0.0) {
    const double keep_scale = cfg.dropout < 1.0 ? 1.0 / (1.0 - cfg.dropout) : 0.0;
    for (int f = 0; f < env::kSelfFeatures; ++f) {
      out[static_cast<std::size_t>(f)] = rng.bernoulli(cfg.dropout) ? 0.0 : out[static_cast<std::size_t>(f)] * keep_scale;
    }
  }
  return out;
}

}  // namespace scalecomm::ssl
