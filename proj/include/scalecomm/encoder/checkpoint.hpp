// SPDX-License-Identifier: Apache-2.0
//
// Versioned JSON checkpoint: named tensors with explicit shape headers for the
// online parameters and the EMA target.

#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "scalecomm/encoder/model.hpp"

namespace scalecomm::enc {

inline constexpr const char* kCheckpointFormat = "scalecomm-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ParamSet online;
  EmaTarget target;
  std::string phase;  // "init", "pretrain", "finetune"
};

namespace detail {

inline nlohmann::json params_to_json(const ParamSet& ps) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : ps.all()) {
    const auto& v = p.value();
    nlohmann::json t;
    t["name"] = p.name();
    t["shape"] = {v.rows(), v.cols()};
    t["data"] = std::vector<double>(v.values().begin(), v.values().end());
    arr.push_back(std::move(t));
  }
  return arr;
}

inline void params_from_json(const nlohmann::json& arr, ParamSet& expected, const char* section) {
  if (!arr.is_array() || arr.size() != expected.size()) {
    throw LoadError(std::string("checkpoint ") + section + ": expected " +
                    std::to_string(expected.size()) + " tensors");
  }
  for (const auto& t : arr) {
    const auto name = t.at("name").get<std::string>();
    Parameter* p = expected.find(name);
    if (!p) throw LoadError(std::string("checkpoint ") + section + ": unexpected tensor " + name);
    const auto shape = t.at("shape").get<std::vector<long>>();
    if (shape.size() != 2 || shape[0] != p->value().rows() || shape[1] != p->value().cols()) {
      throw LoadError(std::string("checkpoint ") + section + ": shape mismatch for " + name +
                      ", expected " + num::shape_str(p->value().rows(), p->value().cols()));
    }
    const auto data = t.at("data").get<std::vector<double>>();
    if (static_cast<long>(data.size()) != shape[0] * shape[1]) {
      throw LoadError(std::string("checkpoint ") + section + ": data length mismatch for " + name);
    }
    std::copy(data.begin(), data.end(), p->value().values().begin());
  }
}

}  // namespace detail

inline std::string checkpoint_to_string(const Checkpoint& ck) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["phase"] = ck.phase;
  j["momentum"] = ck.target.momentum;
  j["online"] = detail::params_to_json(ck.online);
  j["ema"] = detail::params_to_json(ck.target.params);
  return j.dump();
}

/// Parses a checkpoint and validates every tensor against the shapes of `cfg`.
inline Checkpoint checkpoint_from_string(const std::string& text, const ModelConfig& cfg) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint: not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw LoadError("checkpoint: wrong format tag");
    if (j.at("version").get<int>() != kCheckpointVersion) throw LoadError("checkpoint: unsupported version");
    Checkpoint ck;
    ck.phase = j.at("phase").get<std::string>();
    ck.online = zero_params(cfg);
    ck.target.params = zero_params(cfg);
    ck.target.momentum = j.at("momentum").get<double>();
    detail::params_from_json(j.at("online"), ck.online, "online");
    detail::params_from_json(j.at("ema"), ck.target.params, "ema");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("checkpoint: malformed: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const auto dir = std::filesystem::path(path).parent_path();
  std::error_code ec;
  if (!dir.empty()) std::filesystem::create_directories(dir, ec);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write checkpoint " + path);
  os << checkpoint_to_string(ck);
  if (!os) throw ConfigError("write failed for checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path, const ModelConfig& cfg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifactError("missing checkpoint " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return checkpoint_from_string(ss.str(), cfg);
}

}  // namespace scalecomm::enc
