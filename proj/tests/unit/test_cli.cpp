// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "scalecomm/cli/commands.hpp"

using namespace scalecomm;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"([env]
episode_length = 40
dataset_episodes = 2
dataset_steps = 40
[encoder]
hidden = 16
latent = 8
message = 6
attention = 4
[ssl]
queue = 256
prototypes = 4
[trainer]
ssl_epochs = 2
ssl_batch_size = 64
iterations = 1
steps_per_iteration = 256
minibatch = 128
ppo_epochs = 1
num_envs = 2
[eval]
episodes = 1
steps = 60
kpi_episodes = 2
probe_epochs = 50
)";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("scalecomm_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

cli::CommandOptions opts(const fs::path& out, std::ostream& log) {
  cli::CommandOptions o;
  o.out = out.string();
  o.log = &log;
  return o;
}

void run_all(const cli::RunConfig& c, const cli::CommandOptions& o) {
  cli::cmd_collect(c, o);
  cli::cmd_pretrain(c, o);
  cli::cmd_finetune(c, o);
  cli::cmd_evaluate(c, o);
}

}  // namespace

TEST(Config, SerializeParseIsIdentity) {
  const cli::RunConfig a = cli::parse_config_string(kTiny);
  const std::string text = cli::serialize_config(a);
  const cli::RunConfig b = cli::parse_config_string(text);
  EXPECT_EQ(cli::serialize_config(b), text);
  EXPECT_EQ(cli::config_hash(a), cli::config_hash(b));
  EXPECT_EQ(a.model.hidden_dim, 16);
  EXPECT_EQ(a.model.obs_dim, a.env.obs_dim());
  EXPECT_EQ(cli::serialize_config(cli::parse_config_string(cli::serialize_config(cli::default_config()))),
            cli::serialize_config(cli::default_config()));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(cli::parse_config_string("[env]\nbogus = 1\n"), ConfigError);
  EXPECT_THROW(cli::parse_config_string("[env]\nwidth = abc\n"), ConfigError);
  EXPECT_THROW(cli::parse_config_string("[ssl]\ntau = 0\n"), ConfigError);
  EXPECT_THROW(cli::parse_config_string("[ssl]\nablate = sideways\n"), ConfigError);
  EXPECT_THROW(cli::parse_config_string("[trainer]\ninit = maybe\n"), ConfigError);
  EXPECT_NO_THROW(cli::parse_config_string("[ssl]\nablate = no_proto\n"));
}

TEST(Config, AblationReachesBothPhases) {
  const auto c = cli::parse_config_string("[ssl]\nablate = no_contrast\n");
  EXPECT_TRUE(c.pretrain.ablations.no_contrast);
  EXPECT_TRUE(c.finetune.ablations.no_contrast);
}

TEST(ExitCodes, MapErrorKinds) {
  EXPECT_EQ(cli::exit_code_for(ConfigError("x")), cli::kConfigError);
  EXPECT_EQ(cli::exit_code_for(MissingArtifactError("x")), cli::kMissingArtifact);
  EXPECT_EQ(cli::exit_code_for(LoadError("x")), cli::kIncompatible);
  EXPECT_EQ(cli::exit_code_for(std::runtime_error("x")), cli::kFailure);
}

TEST(Commands, MissingInputsAreReported) {
  TempDir d("missing");
  std::ostringstream log;
  const auto c = cli::parse_config_string(kTiny);
  EXPECT_THROW(cli::cmd_pretrain(c, opts(d.path, log)), MissingArtifactError);
  EXPECT_THROW(cli::cmd_finetune(c, opts(d.path, log)), MissingArtifactError);
  EXPECT_THROW(cli::cmd_evaluate(c, opts(d.path, log)), MissingArtifactError);
}

TEST(Commands, PipelineIsDeterministicAndSkipsWhenUpToDate) {
  TempDir a("pipe_a"), b("pipe_b");
  std::ostringstream log;
  const auto c = cli::parse_config_string(kTiny);
  run_all(c, opts(a.path, log));
  run_all(c, opts(b.path, log));
  int compared = 0;
  for (const auto& e : fs::directory_iterator(a.path)) {
    const std::string name = e.path().filename().string();
    if (name.find(".manifest.json") != std::string::npos) continue;
    EXPECT_EQ(slurp(e.path()), slurp(b.path / name)) << name;
    ++compared;
  }
  EXPECT_GE(compared, 12);
  for (const char* f : {"buffer.ndjson", "pretrain.ckpt.json", "finetune.ckpt.json", "metrics.csv", "kpis.csv",
                        "ssl_epochs.csv", "ppo_loss_log.csv", "collect.manifest.json"}) {
    EXPECT_TRUE(fs::exists(a.path / f)) << f;
  }
  std::ostringstream again;
  run_all(c, opts(a.path, again));
  EXPECT_NE(again.str().find("up to date"), std::string::npos);

  // A different seed changes the outputs.
  cli::RunConfig other = c;
  other.seed = 2;
  TempDir s("pipe_seed");
  cli::cmd_collect(other, opts(s.path, log));
  EXPECT_NE(slurp(s.path / "buffer.ndjson"), slurp(a.path / "buffer.ndjson"));
}

TEST(Commands, IncompatibleCheckpointIsRejected) {
  TempDir d("incompat");
  std::ostringstream log;
  const auto c = cli::parse_config_string(kTiny);
  cli::cmd_collect(c, opts(d.path, log));
  cli::cmd_pretrain(c, opts(d.path, log));
  std::string text(kTiny);
  text.replace(text.find("latent = 8"), 10, "latent = 9");
  const auto other = cli::parse_config_string(text);
  EXPECT_THROW(cli::cmd_finetune(other, opts(d.path, log)), LoadError);
}

TEST(Commands, RandomInitSkipsPretrainCheckpoint) {
  TempDir d("random");
  std::ostringstream log;
  auto c = cli::parse_config_string(kTiny);
  c.init = cli::InitMode::random;
  EXPECT_NO_THROW(cli::cmd_finetune(c, opts(d.path, log)));
  EXPECT_TRUE(fs::exists(d.path / cli::kFinetuneCkpt));
}
