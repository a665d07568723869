// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "scalecomm/cli/config.hpp"

#ifndef SCALECOMM_VERSION
#define SCALECOMM_VERSION "0.0.0"
#endif
#ifndef SCALECOMM_GIT_DESCRIBE
#define SCALECOMM_GIT_DESCRIBE "unknown"
#endif

namespace scalecomm::cli {

namespace fs = std::filesystem;

inline std::string version_string() {
  return std::string("scalecomm ") + SCALECOMM_VERSION + " (" + SCALECOMM_GIT_DESCRIBE + ")";
}

inline std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot read '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const fs::path& p, const std::string& text) {
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw ConfigError("write failed for '" + p.string() + "'");
}

inline std::string file_hash(const fs::path& p) { return hex64(fnv1a(read_file(p))); }

/// Record of one command invocation: what it read, what it wrote, under which config.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;     // path → content hash
  std::map<std::string, std::string> artifacts;  // role → file name relative to the manifest
  std::string version = version_string();
  std::string started_at;
  std::string finished_at;

  nlohmann::json to_json() const {
    return {{"command", command},     {"config_hash", config_hash}, {"seed", seed},
            {"inputs", inputs},       {"artifacts", artifacts},     {"version", version},
            {"started_at", started_at}, {"finished_at", finished_at}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    m.version = j.at("version").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    return m;
  }
};

inline fs::path manifest_path(const fs::path& out, const std::string& command) {
  return out / (command + ".manifest.json");
}

inline void save_manifest(const fs::path& out, const RunManifest& m) {
  write_file(manifest_path(out, m.command), m.to_json().dump(2) + "\n");
}

/// True when a previous run with the same config, seed and input contents
/// left every listed artifact in place.
inline bool up_to_date(const fs::path& out, const std::string& command, const std::string& hash,
                       std::uint64_t seed, const std::map<std::string, std::string>& inputs) {
  const fs::path p = manifest_path(out, command);
  if (!fs::exists(p)) return false;
  try {
    const RunManifest m = RunManifest::from_json(nlohmann::json::parse(read_file(p)));
    if (m.config_hash != hash || m.seed != seed || m.inputs != inputs) return false;
    for (const auto& [role, file] : m.artifacts) {
      if (!fs::exists(out / file)) return false;
    }
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace scalecomm::cli
