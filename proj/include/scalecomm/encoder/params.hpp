// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "scalecomm/env/warehouse.hpp"
#include "scalecomm/numcore/graph.hpp"
#include "scalecomm/numcore/rng.hpp"

namespace scalecomm::enc {

using num::Matrix;
using num::Parameter;
using num::Tensor;

/// Ordered, copyable collection of named parameters.
class ParamSet {
 public:
  Parameter& add(std::string name, Tensor value) {
    if (find(name)) throw StructuralError("duplicate parameter " + name);
    params_.emplace_back(std::move(name), std::move(value));
    return params_.back();
  }

  Parameter* find(std::string_view name) {
    for (auto& p : params_) {
      if (p.name() == name) return &p;
    }
    return nullptr;
  }
  const Parameter* find(std::string_view name) const {
    for (const auto& p : params_) {
      if (p.name() == name) return &p;
    }
    return nullptr;
  }

  Parameter& operator[](std::string_view name) {
    if (auto* p = find(name)) return *p;
    throw StructuralError("unknown parameter " + std::string(name));
  }
  const Parameter& operator[](std::string_view name) const {
    if (const auto* p = find(name)) return *p;
    throw StructuralError("unknown parameter " + std::string(name));
  }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  std::vector<Parameter*> select(const std::function<bool(const std::string&)>& keep) {
    std::vector<Parameter*> out;
    for (auto& p : params_) {
      if (keep(p.name())) out.push_back(&p);
    }
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  bool all_finite() const {
    return std::all_of(params_.begin(), params_.end(),
                       [](const Parameter& p) { return p.value().all_finite(); });
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      if (a.params_[i].name() != b.params_[i].name() ||
          !(a.params_[i].value() == b.params_[i].value())) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Parameter> params_;
};

/// Layer widths of the representation stack and its heads.
struct ModelConfig {
  int obs_dim = env::kSelfFeatures + env::kTaskFeatures * 4;
  int num_candidates = 4;
  int hidden_dim = 256;
  int latent_dim = 192;
  int message_dim = 64;
  int attention_dim = 32;
  int num_prototypes = 16;
  double policy_init_scale = 0.01;

  void validate() const {
    if (obs_dim != env::kSelfFeatures + env::kTaskFeatures * num_candidates) {
      throw ConfigError("encoder: obs_dim must equal 3 + 5K");
    }
    if (hidden_dim < 1 || latent_dim < 1 || message_dim < 1 || attention_dim < 1) {
      throw ConfigError("encoder: layer widths must be positive");
    }
    if (num_prototypes < 2) throw ConfigError("encoder: need at least 2 prototypes");
  }
};

// Parameter names. Weights are stored input-major (in × out) so a batch of
// row vectors X maps as X·W.
namespace names {
inline constexpr const char* kEncW1 = "enc.w1";
inline constexpr const char* kEncB1 = "enc.b1";
inline constexpr const char* kEncW2 = "enc.w2";
inline constexpr const char* kEncB2 = "enc.b2";
inline constexpr const char* kMsgW = "msg.w";
inline constexpr const char* kCmpW = "cmp.w";
inline constexpr const char* kPredW = "pred.w";
inline constexpr const char* kPredB = "pred.b";
inline constexpr const char* kHzW = "hz.w";
inline constexpr const char* kProto = "proto";
inline constexpr const char* kAttQ = "att.wq";
inline constexpr const char* kAttK = "att.wk";
inline constexpr const char* kAttV = "att.wv";
inline constexpr const char* kBiasW = "bias.w";
inline constexpr const char* kPiW = "pi.w";
inline constexpr const char* kPiB = "pi.b";
inline constexpr const char* kVW = "v.w";
inline constexpr const char* kVB = "v.b";
}  // namespace names

/// Parameters of f_θ and the message projection: the part frozen in
/// frozen-encoder fine-tuning.
inline bool is_encoder_param(const std::string& name) {
  return name.rfind("enc.", 0) == 0 || name == names::kMsgW;
}

namespace detail {

inline Tensor uniform(num::Rng& rng, int rows, int cols, double bound) {
  Tensor t(rows, cols);
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

inline Tensor zeros(int rows, int cols) { return Tensor(rows, cols); }

}  // namespace detail

/// Shapes of every parameter, with zero values.
inline ParamSet zero_params(const ModelConfig& c) {
  c.validate();
  const int K = c.num_candidates, d = c.obs_dim, h = c.hidden_dim, z = c.latent_dim,
            m = c.message_dim, a = c.attention_dim, tf = env::kTaskFeatures;
  ParamSet ps;
  ps.add(names::kEncW1, detail::zeros(d, h));
  ps.add(names::kEncB1, detail::zeros(1, h));
  ps.add(names::kEncW2, detail::zeros(h, z));
  ps.add(names::kEncB2, detail::zeros(1, z));
  ps.add(names::kMsgW, detail::zeros(z, m));
  ps.add(names::kCmpW, detail::zeros(z, m));
  ps.add(names::kPredW, detail::zeros(m, z));
  ps.add(names::kPredB, detail::zeros(1, z));
  ps.add(names::kHzW, detail::zeros(h, z));
  ps.add(names::kProto, detail::zeros(c.num_prototypes, m));
  ps.add(names::kAttQ, detail::zeros(z, a));
  ps.add(names::kAttK, detail::zeros(tf, a));
  ps.add(names::kAttV, detail::zeros(tf, z));
  ps.add(names::kBiasW, detail::zeros(z, tf));
  ps.add(names::kPiW, detail::zeros(2 * z, K + 1));
  ps.add(names::kPiB, detail::zeros(1, K + 1));
  ps.add(names::kVW, detail::zeros(2 * z, 1));
  ps.add(names::kVB, detail::zeros(1, 1));
  return ps;
}

/// Re-normalizes every prototype row to unit length.
inline void normalize_prototypes(ParamSet& ps) {
  Matrix& p = ps[names::kProto].value().mat();
  for (num::Index i = 0; i < p.rows(); ++i) {
    const double n = p.row(i).norm();
    if (n > 0.0) p.row(i) /= n;
  }
}

/// Fan-in scaled uniform initialization. Layers followed by a rectifier use
/// the He bound sqrt(6/fan_in); linear layers use sqrt(3/fan_in). The task
/// bias scorer starts at zero, the policy head is scaled down, prototypes are
/// random unit vectors.
inline ParamSet init_params(const ModelConfig& c, num::Rng& rng) {
  ParamSet ps = zero_params(c);
  auto he = [](int fan_in) { return std::sqrt(6.0 / fan_in); };
  auto lin = [](int fan_in) { return std::sqrt(3.0 / fan_in); };
  const int K = c.num_candidates, d = c.obs_dim, h = c.hidden_dim, z = c.latent_dim,
            m = c.message_dim, a = c.attention_dim, tf = env::kTaskFeatures;
  ps[names::kEncW1].value() = detail::uniform(rng, d, h, he(d));
  ps[names::kEncW2].value() = detail::uniform(rng, h, z, lin(h));
  ps[names::kMsgW].value() = detail::uniform(rng, z, m, lin(z));
  ps[names::kCmpW].value() = detail::uniform(rng, z, m, lin(z));
  ps[names::kPredW].value() = detail::uniform(rng, m, z, lin(m));
  ps[names::kHzW].value() = detail::uniform(rng, h, z, lin(h));
  Tensor proto(c.num_prototypes, m);
  for (double& v : proto.values()) v = rng.normal();
  ps[names::kProto].value() = proto;
  normalize_prototypes(ps);
  ps[names::kAttQ].value() = detail::uniform(rng, z, a, lin(z));
  ps[names::kAttK].value() = detail::uniform(rng, tf, a, lin(tf));
  ps[names::kAttV].value() = detail::uniform(rng, tf, z, lin(tf));
  Tensor pi = detail::uniform(rng, 2 * z, K + 1, lin(2 * z));
  pi.mat() *= c.policy_init_scale;
  ps[names::kPiW].value() = pi;
  ps[names::kVW].value() = detail::uniform(rng, 2 * z, 1, lin(2 * z));
  return ps;
}

}  // namespace scalecomm::enc
