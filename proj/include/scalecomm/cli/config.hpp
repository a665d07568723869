// SPDX-License-Identifier: Apache-2.0
//
// RunConfig: one INI file drives every command. Unknown sections or keys are
// rejected by name; serialisation is canonical so parse → write → parse is
// the identity.

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "scalecomm/encoder/params.hpp"
#include "scalecomm/eval/evaluate.hpp"
#include "scalecomm/trainer/finetune.hpp"
#include "scalecomm/trainer/pretrain.hpp"

namespace scalecomm::cli {

enum class InitMode { pretrained, random };

struct RunConfig {
  std::uint64_t seed = 1;
  env::EnvConfig env;
  int dataset_episodes = 40;
  int dataset_steps = 200;
  enc::ModelConfig model;
  double ema_momentum = 0.996;
  train::PretrainConfig pretrain;
  train::FinetuneConfig finetune;
  InitMode init = InitMode::pretrained;
  eval::EvalConfig eval;

  /// Derived widths and shared SSL settings pushed into the sub-configs.
  void sync() {
    model.num_candidates = env.num_candidates;
    model.obs_dim = env.obs_dim();
    finetune.weights = pretrain.weights;
    finetune.ablations = pretrain.ablations;
  }

  void validate() const {
    env.validate();
    model.validate();
    pretrain.validate();
    finetune.validate();
    eval.validate();
    if (dataset_episodes < 1 || dataset_steps < 1) throw ConfigError("env: dataset_episodes and dataset_steps must be >= 1");
    if (!(ema_momentum >= 0.0 && ema_momentum < 1.0)) throw ConfigError("encoder: momentum must lie in [0, 1)");
    if (finetune.queue_capacity < 1) throw ConfigError("ssl: queue must be >= 1");
  }
};

inline std::string ablation_name(const ssl::Ablations& a) {
  return a.no_contrast || a.no_proto || a.no_curriculum ? a.label() : "none";
}

inline ssl::Ablations parse_ablation(const std::string& v) {
  ssl::Ablations a;
  if (v == "none" || v == "full") return a;
  if (v == "no_contrast") a.no_contrast = true;
  else if (v == "no_proto") a.no_proto = true;
  else if (v == "no_curriculum") a.no_curriculum = true;
  else throw ConfigError("ssl.ablate: unknown ablation '" + v + "' (none|no_contrast|no_proto|no_curriculum)");
  return a;
}

namespace detail {

inline std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}
template <class T>
std::string fmt_int(T v) {
  return std::to_string(v);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError(key + ": cannot parse '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

/// One key binding: how to write it and how to read it back.
struct Field {
  std::string section, key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define SC_DBL(sec, name, expr)                                                          \
  Field{sec, name, [](const RunConfig& c) { return fmt(c.expr); },                        \
        [](RunConfig& c, const std::string& v) { c.expr = parse_number<double>(std::string(sec) + "." + name, v); }}
#define SC_INT(sec, name, type, expr)                                                    \
  Field{sec, name, [](const RunConfig& c) { return fmt_int(c.expr); },                    \
        [](RunConfig& c, const std::string& v) { c.expr = parse_number<type>(std::string(sec) + "." + name, v); }}
#define SC_BOOL(sec, name, expr)                                                         \
  Field{sec, name, [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& v) { c.expr = parse_bool(std::string(sec) + "." + name, v); }}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      SC_INT("run", "seed", std::uint64_t, seed),

      SC_INT("env", "width", int, env.width),
      SC_INT("env", "height", int, env.height),
      SC_INT("env", "agents", int, env.num_agents),
      SC_INT("env", "candidates", int, env.num_candidates),
      SC_INT("env", "tasks", int, env.num_tasks),
      SC_INT("env", "episode_length", int, env.episode_length),
      SC_DBL("env", "r_assign", env.rewards.r_assign),
      SC_DBL("env", "r_pick", env.rewards.r_pick),
      SC_DBL("env", "r_drop", env.rewards.r_drop),
      SC_DBL("env", "r_unassigned", env.rewards.r_unassigned),
      SC_INT("env", "dataset_episodes", int, dataset_episodes),
      SC_INT("env", "dataset_steps", int, dataset_steps),

      SC_INT("encoder", "hidden", int, model.hidden_dim),
      SC_INT("encoder", "latent", int, model.latent_dim),
      SC_INT("encoder", "message", int, model.message_dim),
      SC_INT("encoder", "attention", int, model.attention_dim),
      SC_DBL("encoder", "momentum", ema_momentum),
      SC_DBL("encoder", "policy_init_scale", model.policy_init_scale),

      SC_DBL("ssl", "alpha", pretrain.weights.alpha),
      SC_DBL("ssl", "beta", pretrain.weights.beta),
      SC_DBL("ssl", "gamma_cpc", pretrain.weights.gamma_cpc),
      SC_DBL("ssl", "delta", pretrain.weights.delta),
      SC_DBL("ssl", "eta", pretrain.weights.eta),
      SC_DBL("ssl", "lambda1", pretrain.weights.lambda1),
      SC_DBL("ssl", "lambda2", pretrain.weights.lambda2),
      SC_DBL("ssl", "lambda3", pretrain.weights.lambda3),
      SC_DBL("ssl", "lambda4", pretrain.weights.lambda4),
      SC_DBL("ssl", "tau", pretrain.weights.tau),
      SC_INT("ssl", "horizon", int, pretrain.weights.cpc_horizon),
      SC_INT("ssl", "queue", long, finetune.queue_capacity),
      SC_INT("ssl", "prototypes", int, model.num_prototypes),
      SC_DBL("ssl", "mask_prob", pretrain.augment.mask_prob),
      SC_DBL("ssl", "jitter_std", pretrain.augment.jitter_std),
      SC_DBL("ssl", "dropout", pretrain.augment.dropout),
      Field{"ssl", "ablate", [](const RunConfig& c) { return ablation_name(c.pretrain.ablations); },
            [](RunConfig& c, const std::string& v) { c.pretrain.ablations = parse_ablation(v); }},

      SC_INT("trainer", "ssl_epochs", int, pretrain.epochs),
      SC_INT("trainer", "ssl_batch_size", int, pretrain.batch_size),
      SC_DBL("trainer", "ssl_lr", pretrain.lr),
      SC_INT("trainer", "iterations", int, finetune.iterations),
      SC_DBL("trainer", "clip", finetune.ppo.clip),
      SC_DBL("trainer", "gamma", finetune.ppo.gamma),
      SC_DBL("trainer", "gae_lambda", finetune.ppo.gae_lambda),
      SC_INT("trainer", "ppo_epochs", int, finetune.ppo.epochs),
      SC_INT("trainer", "steps_per_iteration", long, finetune.ppo.steps_per_iteration),
      SC_INT("trainer", "minibatch", long, finetune.ppo.minibatch),
      SC_DBL("trainer", "entropy_coef", finetune.ppo.entropy_coef),
      SC_DBL("trainer", "value_coef", finetune.ppo.value_coef),
      SC_DBL("trainer", "lr", finetune.ppo.lr),
      SC_BOOL("trainer", "task_bias", finetune.ppo.bias.enabled),
      SC_DBL("trainer", "bias_beta", finetune.ppo.bias.beta),
      Field{"trainer", "encoder_mode",
            [](const RunConfig& c) {
              return std::string(c.finetune.ppo.encoder_mode == train::EncoderMode::frozen ? "frozen" : "finetune");
            },
            [](RunConfig& c, const std::string& v) {
              if (v == "frozen") c.finetune.ppo.encoder_mode = train::EncoderMode::frozen;
              else if (v == "finetune") c.finetune.ppo.encoder_mode = train::EncoderMode::finetune;
              else throw ConfigError("trainer.encoder_mode: expected frozen or finetune, got '" + v + "'");
            }},
      SC_INT("trainer", "num_envs", int, finetune.ppo.num_envs),
      SC_DBL("trainer", "lambda_min", finetune.schedule.lambda_min),
      SC_DBL("trainer", "lambda_max", finetune.schedule.lambda_max),
      SC_INT("trainer", "ramp_steps", long, finetune.schedule.ramp_steps),
      Field{"trainer", "init",
            [](const RunConfig& c) { return std::string(c.init == InitMode::random ? "random" : "pretrained"); },
            [](RunConfig& c, const std::string& v) {
              if (v == "pretrained") c.init = InitMode::pretrained;
              else if (v == "random") c.init = InitMode::random;
              else throw ConfigError("trainer.init: expected pretrained or random, got '" + v + "'");
            }},

      SC_INT("eval", "episodes", int, eval.episodes),
      SC_INT("eval", "steps", int, eval.steps),
      SC_INT("eval", "kpi_episodes", int, eval.kpi_episodes),
      SC_INT("eval", "probe_epochs", int, eval.probe.max_epochs),
      SC_DBL("eval", "probe_tolerance", eval.probe.tolerance),
      SC_DBL("eval", "probe_lr", eval.probe.lr),
  };
  return f;
}

#undef SC_DBL
#undef SC_INT
#undef SC_BOOL

}  // namespace detail

inline RunConfig default_config() {
  RunConfig c;
  c.sync();
  return c;
}

inline RunConfig parse_config(std::istream& is) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  std::map<std::string, const detail::Field*> index;
  for (const auto& f : detail::fields()) index[f.section + "." + f.key] = &f;
  RunConfig c = default_config();
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' outside any section");
    for (const auto& [key, value] : body) {
      const std::string name = section + "." + key;
      auto it = index.find(name);
      if (it == index.end()) throw ConfigError("config: unknown key '" + name + "'");
      it->second->set(c, value.data());
    }
  }
  c.sync();
  c.validate();
  return c;
}

inline RunConfig parse_config_string(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_config(in);
}

/// Canonical INI text: every key, fixed order, shortest round-trip numbers.
inline std::string serialize_config(const RunConfig& c) {
  std::ostringstream os;
  std::string current;
  for (const auto& f : detail::fields()) {
    if (f.section != current) {
      if (!current.empty()) os << '\n';
      os << '[' << f.section << "]\n";
      current = f.section;
    }
    os << f.key << " = " << f.get(c) << '\n';
  }
  return os.str();
}

inline std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a(serialize_config(c))); }

}  // namespace scalecomm::cli
