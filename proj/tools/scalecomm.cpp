// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "scalecomm/cli/commands.hpp"

namespace sc = scalecomm;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string ablate;
  std::string init;
  std::string buffer;
  std::string checkpoint;
  bool force = false;
  bool print_config = false;
};

sc::cli::RunConfig resolve(const Flags& f) {
  sc::cli::RunConfig c = f.config.empty() ? sc::cli::default_config() : sc::cli::load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (!f.ablate.empty()) c.pretrain.ablations = sc::cli::parse_ablation(f.ablate);
  if (f.init == "random") c.init = sc::cli::InitMode::random;
  else if (f.init == "pretrained") c.init = sc::cli::InitMode::pretrained;
  else if (!f.init.empty()) throw sc::ConfigError("--init must be pretrained or random");
  c.sync();
  c.validate();
  return c;
}

sc::cli::CommandOptions options(const Flags& f) {
  sc::cli::CommandOptions o;
  if (!f.out.empty()) {
    o.out = f.out;
  } else if (const char* env = std::getenv("SCALECOMM_OUT"); env && *env) {
    o.out = env;
  }
  if (!f.buffer.empty()) o.buffer = f.buffer;
  if (!f.checkpoint.empty()) o.checkpoint = f.checkpoint;
  o.force = f.force;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent warehouse messaging: SSL pretraining and PPO fine-tuning"};
  app.set_version_flag("--version", sc::cli::version_string());
  app.require_subcommand(1);
  Flags f;
  app.add_option("--config", f.config, "INI config file (defaults when omitted)");
  app.add_option("--seed", f.seed, "Override the run seed");
  app.add_option("--out", f.out, "Output directory (env SCALECOMM_OUT, else ./runs)");
  app.add_option("--ablate", f.ablate, "Ablation variant")
      ->check(CLI::IsMember({"none", "no_contrast", "no_proto", "no_curriculum"}));
  app.add_flag("--force", f.force, "Rerun even when the manifest is up to date");
  app.add_flag("--print-config", f.print_config, "Print the resolved config before running");

  auto* collect = app.add_subcommand("collect", "Record the heuristic replay buffer");
  auto* pretrain = app.add_subcommand("pretrain", "Self-supervised pretraining on the replay buffer");
  pretrain->add_option("--buffer", f.buffer, "Replay buffer (default <out>/buffer.ndjson)");
  auto* finetune = app.add_subcommand("finetune", "PPO fine-tuning with the auxiliary curriculum");
  finetune->add_option("--checkpoint", f.checkpoint, "Starting checkpoint (default <out>/pretrain.ckpt.json)");
  finetune->add_option("--init", f.init, "pretrained | random")
      ->check(CLI::IsMember({"pretrained", "random"}));
  auto* evaluate = app.add_subcommand("evaluate", "Representation metrics and delivery KPIs");
  evaluate->add_option("--checkpoint", f.checkpoint, "Checkpoint (default finetune, else pretrain)");
  auto* grid = app.add_subcommand("ablation-grid", "Full model and the three single ablations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : sc::cli::kConfigError;
  }

  try {
    const sc::cli::RunConfig c = resolve(f);
    const sc::cli::CommandOptions o = options(f);
    if (f.print_config) std::cout << sc::cli::serialize_config(c);
    if (*collect) sc::cli::cmd_collect(c, o);
    else if (*pretrain) sc::cli::cmd_pretrain(c, o);
    else if (*finetune) sc::cli::cmd_finetune(c, o);
    else if (*evaluate) sc::cli::cmd_evaluate(c, o);
    else if (*grid) sc::cli::cmd_ablation_grid(c, o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return sc::cli::exit_code_for(e);
  }
  return sc::cli::kOk;
}
