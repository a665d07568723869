// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "scalecomm/numcore/graph.hpp"

namespace scalecomm::num {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First-order optimizer over a fixed list of parameters.
///
/// A parameter whose gradient is absent or identically zero is skipped for
/// that step (its moments are not advanced), so a zero-gradient step never
/// moves anything.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
    if (!(cfg_.lr > 0.0)) throw DomainError("optimizer: learning rate must be positive");
  }

  const OptimizerConfig& config() const { return cfg_; }
  std::uint64_t step_count() const { return steps_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  void step(const std::vector<Parameter*>& params) {
    ++steps_;
    for (Parameter* p : params) {
      if (!p->has_grad()) continue;
      const Matrix& g = p->grad();
      require_same_shape(p->value().mat(), g, ("optimizer step for " + p->name()).c_str());
      if (g.isZero(0.0)) continue;
      if (cfg_.kind == OptimizerKind::sgd) {
        p->value().mat() -= cfg_.lr * g;
        continue;
      }
      auto& st = state_[p->name()];
      if (st.m.size() == 0) {
        st.m = Matrix::Zero(g.rows(), g.cols());
        st.v = Matrix::Zero(g.rows(), g.cols());
      }
      require_same_shape(st.m, g, ("optimizer moments for " + p->name()).c_str());
      ++st.t;
      st.m = cfg_.beta1 * st.m + (1.0 - cfg_.beta1) * g;
      st.v = cfg_.beta2 * st.v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
      const double step = cfg_.lr / bc1;
      p->value().mat().array() -=
          step * st.m.array() / ((st.v.array() / bc2).sqrt() + cfg_.eps);
    }
  }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
    std::uint64_t t = 0;
  };

  OptimizerConfig cfg_;
  std::uint64_t steps_ = 0;
  std::unordered_map<std::string, Moments> state_;
};

}  // namespace scalecomm::num
