// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>

#include "scalecomm/errors.hpp"

namespace scalecomm::train {

/// Linear ramp of the auxiliary weight from lambda_min to lambda_max over ramp_steps.
struct CurriculumSchedule {
  double lambda_min = 0.0;
  double lambda_max = 0.1;
  long ramp_steps = 1;

  void validate() const {
    if (!(lambda_min >= 0.0) || !(lambda_max >= 0.0)) {
      throw ConfigError("curriculum: lambda bounds must be non-negative");
    }
    if (lambda_max < lambda_min) throw ConfigError("curriculum: lambda_max must be >= lambda_min");
    if (ramp_steps < 1) throw ConfigError("curriculum: ramp_steps must be >= 1");
  }
};

inline double curriculum_lambda(long t, const CurriculumSchedule& s) {
  if (t <= 0) return s.lambda_min;
  if (t >= s.ramp_steps) return s.lambda_max;
  const double frac = static_cast<double>(t) / static_cast<double>(s.ramp_steps);
  return std::min(s.lambda_max, s.lambda_min + (s.lambda_max - s.lambda_min) * frac);
}

}  // namespace scalecomm::train
