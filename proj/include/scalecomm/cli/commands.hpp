// SPDX-License-Identifier: Apache-2.0
//
// The pipeline commands. Each writes its artifacts under `out` plus a
// manifest, and returns early when the manifest shows identical inputs.

#pragma once

#include <array>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "scalecomm/cli/manifest.hpp"
#include "scalecomm/encoder/checkpoint.hpp"

namespace scalecomm::cli {

inline constexpr const char* kBufferFile = "buffer.ndjson";
inline constexpr const char* kPretrainCkpt = "pretrain.ckpt.json";
inline constexpr const char* kFinetuneCkpt = "finetune.ckpt.json";

/// Exit codes of the command-line tool.
enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kMissingArtifact = 3, kIncompatible = 4 };

struct CommandOptions {
  fs::path out = "runs";
  std::optional<fs::path> buffer;      // default: out/buffer.ndjson
  std::optional<fs::path> checkpoint;  // default depends on the command
  bool force = false;                  // ignore an up-to-date manifest
  std::ostream* log = &std::cout;
};

namespace detail {

inline std::ostream& log(const CommandOptions& o) { return *o.log; }

inline std::string model_label(const RunConfig& c) {
  if (c.pretrain.ablations.no_contrast) return "w/o Contrastive Alignment";
  if (c.pretrain.ablations.no_proto) return "w/o Prototype Distillation";
  if (c.pretrain.ablations.no_curriculum) return "w/o Curriculum Scheduling";
  return c.init == InitMode::random ? "PPO (random init)" : "SCALE-COMM";
}

inline std::uint64_t stream(const RunConfig& c, std::uint64_t tag) { return num::derive_seed(c.seed, tag); }

/// Parameter init is shared between the pretrained and random-init paths so
/// paired runs start from the same heads.
inline enc::ParamSet initial_params(const RunConfig& c) {
  num::Rng rng(stream(c, 0x1417ULL));
  return enc::init_params(c.model, rng);
}

inline bool skip(const CommandOptions& o, const std::string& cmd, const RunConfig& c,
                 const std::map<std::string, std::string>& inputs) {
  if (o.force || !up_to_date(o.out, cmd, config_hash(c), c.seed, inputs)) return false;
  log(o) << cmd << ": up to date (" << manifest_path(o.out, cmd).string() << ")\n";
  return true;
}

inline RunManifest begin(const std::string& cmd, const RunConfig& c,
                         const std::map<std::string, std::string>& inputs = {}) {
  RunManifest m;
  m.command = cmd;
  m.config_hash = config_hash(c);
  m.seed = c.seed;
  m.inputs = inputs;
  m.started_at = utc_now();
  return m;
}

}  // namespace detail

inline void cmd_collect(const RunConfig& c, const CommandOptions& o) {
  c.validate();
  if (detail::skip(o, "collect", c, {})) return;
  RunManifest m = detail::begin("collect", c);
  const auto buf = env::collect_heuristic_dataset(c.env, c.dataset_episodes, c.dataset_steps,
                                                  detail::stream(c, 0xC0EC7ULL));
  const fs::path path = o.out / kBufferFile;
  fs::create_directories(o.out);
  env::save_ndjson(path.string(), buf);
  detail::log(o) << "collect: " << buf.size() << " transitions (" << c.dataset_episodes << " episodes x "
                 << c.dataset_steps << " steps x " << c.env.num_agents << " agents) -> " << path.string() << "\n";
  m.artifacts["buffer"] = kBufferFile;
  m.finished_at = utc_now();
  save_manifest(o.out, m);
}

inline train::TrainReport cmd_pretrain(const RunConfig& c, const CommandOptions& o) {
  c.validate();
  const fs::path buffer = o.buffer.value_or(o.out / kBufferFile);
  if (!fs::exists(buffer)) throw MissingArtifactError("pretrain: replay buffer '" + buffer.string() + "' not found; run collect first");
  const std::map<std::string, std::string> inputs{{buffer.generic_string(), file_hash(buffer)}};
  if (detail::skip(o, "pretrain", c, inputs)) return {};
  RunManifest m = detail::begin("pretrain", c, inputs);

  const auto buf = env::load_ndjson(buffer.string());
  if (buf.obs_dim() != c.model.obs_dim) {
    throw LoadError("pretrain: buffer observation width " + std::to_string(buf.obs_dim()) +
                    " does not match the configured encoder input " + std::to_string(c.model.obs_dim));
  }
  enc::Checkpoint ck;
  ck.online = detail::initial_params(c);
  ck.target = enc::EmaTarget{ck.online, c.ema_momentum};
  ssl::MemoryQueue queue(c.finetune.queue_capacity, c.model.latent_dim);
  num::Rng rng(detail::stream(c, 0x55100ULL));
  train::TrainReport report;
  train::pretrain_ssl(buf, ck.online, ck.target, queue, c.pretrain, rng, report,
                      [&](int epoch, const ssl::SslBreakdown& b) {
                        detail::log(o) << "pretrain: epoch " << epoch << "/" << c.pretrain.epochs
                                       << " L_SSL=" << b.total << "\n" << std::flush;
                      });
  ck.phase = "pretrain";
  enc::save_checkpoint((o.out / kPretrainCkpt).string(), ck);
  std::ostringstream epochs, steps;
  train::write_ssl_csv(epochs, report);
  train::write_ssl_steps_csv(steps, report);
  write_file(o.out / "ssl_epochs.csv", epochs.str());
  write_file(o.out / "ssl_steps.csv", steps.str());
  write_file(o.out / "pretrain_report.json", train::to_json(report).dump(2) + "\n");
  m.artifacts = {{"checkpoint", kPretrainCkpt},
                 {"ssl_epochs", "ssl_epochs.csv"},
                 {"ssl_steps", "ssl_steps.csv"},
                 {"report", "pretrain_report.json"}};
  m.finished_at = utc_now();
  save_manifest(o.out, m);
  return report;
}

inline train::TrainReport cmd_finetune(const RunConfig& c, const CommandOptions& o) {
  c.validate();
  std::map<std::string, std::string> inputs;
  enc::Checkpoint ck;
  std::optional<fs::path> source;
  if (c.init == InitMode::pretrained) {
    source = o.checkpoint.value_or(o.out / kPretrainCkpt);
    if (!fs::exists(*source)) {
      throw MissingArtifactError("finetune: checkpoint '" + source->string() + "' not found; run pretrain first");
    }
    inputs[source->generic_string()] = file_hash(*source);
  }
  if (detail::skip(o, "finetune", c, inputs)) return {};
  RunManifest m = detail::begin("finetune", c, inputs);
  if (source) {
    ck = enc::load_checkpoint(source->string(), c.model);
    if (ck.phase != "pretrain" && ck.phase != "finetune") {
      throw LoadError("finetune: checkpoint phase '" + ck.phase + "' has not completed pretraining");
    }
  } else {
    ck.online = detail::initial_params(c);
    ck.target = enc::EmaTarget{ck.online, c.ema_momentum};
    ck.phase = "init";
  }
  train::TrainReport report;
  train::finetune(c.env, ck, c.finetune, detail::stream(c, 0xF1E7ULL), report, [&](const train::IterationStats& s) {
    detail::log(o) << "finetune: iteration " << s.iteration << "/" << c.finetune.iterations
                   << " deliveries/ep=" << s.deliveries_per_ep << " unassigned%=" << s.unassigned_pct
                   << " clip=" << s.clip_fraction << " lambda=" << s.lambda << "\n" << std::flush;
  });
  enc::save_checkpoint((o.out / kFinetuneCkpt).string(), ck);
  std::ostringstream its, losses;
  train::write_ppo_csv(its, report);
  train::write_loss_log_csv(losses, report);
  write_file(o.out / "ppo_iterations.csv", its.str());
  write_file(o.out / "ppo_loss_log.csv", losses.str());
  write_file(o.out / "finetune_report.json", train::to_json(report).dump(2) + "\n");
  m.artifacts = {{"checkpoint", kFinetuneCkpt},
                 {"iterations", "ppo_iterations.csv"},
                 {"loss_log", "ppo_loss_log.csv"},
                 {"report", "finetune_report.json"}};
  m.finished_at = utc_now();
  save_manifest(o.out, m);
  return report;
}

inline eval::Evaluation cmd_evaluate(const RunConfig& c, const CommandOptions& o) {
  c.validate();
  fs::path ckpt;
  if (o.checkpoint) {
    ckpt = *o.checkpoint;
  } else {
    ckpt = fs::exists(o.out / kFinetuneCkpt) ? o.out / kFinetuneCkpt : o.out / kPretrainCkpt;
  }
  if (!fs::exists(ckpt)) throw MissingArtifactError("evaluate: checkpoint '" + ckpt.string() + "' not found");
  const std::map<std::string, std::string> inputs{{ckpt.generic_string(), file_hash(ckpt)}};
  const enc::Checkpoint ck = enc::load_checkpoint(ckpt.string(), c.model);
  const eval::Evaluation ev = eval::evaluate(ck.online, c.env, c.eval, c.pretrain.weights.cpc_horizon,
                                             detail::stream(c, 0xE7A1ULL), c.finetune.ppo.bias);
  if (detail::skip(o, "evaluate", c, inputs)) return ev;
  RunManifest m = detail::begin("evaluate", c, inputs);
  const eval::KpiSummary heuristic =
      eval::heuristic_kpis(c.env, c.eval.kpi_episodes, num::derive_seed(detail::stream(c, 0xE7A1ULL), 0xB0A7ULL));
  const std::string label = detail::model_label(c);

  nlohmann::json j;
  j["model"] = label;
  j["checkpoint_phase"] = ck.phase;
  j["metrics"] = eval::to_json(ev.metrics);
  j["kpis"] = eval::to_json(ev.kpis);
  j["heuristic_kpis"] = eval::to_json(heuristic);
  write_file(o.out / "metrics.json", j.dump(2) + "\n");
  std::ostringstream t1, t2;
  t1 << eval::MetricsReport::csv_header() << '\n';
  ev.metrics.write_csv_row(t1, label);
  t2 << eval::KpiSummary::csv_header() << '\n';
  ev.kpis.write_csv_row(t2, label);
  heuristic.write_csv_row(t2, "Nearest-task heuristic");
  write_file(o.out / "metrics.csv", t1.str());
  write_file(o.out / "kpis.csv", t2.str());
  detail::log(o) << "evaluate: " << label << " R@1=" << ev.metrics.r_at_1 << " Temp@1=" << ev.metrics.temp_at_1
                 << " ProtoNMI=" << ev.metrics.proto_nmi << " ProbeAcc=" << ev.metrics.probe_acc
                 << " CKA=" << ev.metrics.cka_mz << " deliveries/ep=" << ev.kpis.deliveries_mean << "\n";
  m.artifacts = {{"metrics_json", "metrics.json"}, {"metrics_csv", "metrics.csv"}, {"kpis_csv", "kpis.csv"}};
  m.finished_at = utc_now();
  save_manifest(o.out, m);
  return ev;
}

/// Full model plus the three single-ablation variants on one seed, each run
/// through pretrain → finetune → evaluate on a shared buffer.
inline void cmd_ablation_grid(const RunConfig& base, const CommandOptions& o) {
  base.validate();
  cmd_collect(base, o);
  const fs::path buffer = o.out / kBufferFile;
  const std::array<const char*, 4> variants = {"none", "no_contrast", "no_proto", "no_curriculum"};
  std::ostringstream t1, t2;
  t1 << eval::MetricsReport::csv_header() << '\n';
  t2 << eval::KpiSummary::csv_header() << '\n';
  for (const char* v : variants) {
    RunConfig c = base;
    c.init = InitMode::pretrained;
    c.pretrain.ablations = parse_ablation(v);
    c.sync();
    CommandOptions sub = o;
    sub.out = o.out / (std::string(v) == "none" ? "full" : v);
    sub.buffer = buffer;
    sub.checkpoint.reset();
    detail::log(o) << "ablation-grid: variant " << detail::model_label(c) << "\n";
    cmd_pretrain(c, sub);
    cmd_finetune(c, sub);
    const eval::Evaluation ev = cmd_evaluate(c, sub);
    ev.metrics.write_csv_row(t1, detail::model_label(c));
    ev.kpis.write_csv_row(t2, detail::model_label(c));
  }
  RunManifest m = detail::begin("ablation-grid", base);
  write_file(o.out / "ablation_metrics.csv", t1.str());
  write_file(o.out / "ablation_kpis.csv", t2.str());
  m.artifacts = {{"metrics_table", "ablation_metrics.csv"}, {"kpi_table", "ablation_kpis.csv"}};
  m.finished_at = utc_now();
  save_manifest(o.out, m);
  detail::log(o) << "ablation-grid: tables in " << (o.out / "ablation_metrics.csv").string() << "\n";
}

/// Maps the error taxonomy onto exit codes.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kConfigError;
  if (dynamic_cast<const MissingArtifactError*>(&e)) return kMissingArtifact;
  if (dynamic_cast<const LoadError*>(&e)) return kIncompatible;
  return kFailure;
}

}  // namespace scalecomm::cli
