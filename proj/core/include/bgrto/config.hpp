#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "bgrto/env.hpp"
#include "bgrto/models.hpp"
#include "bgrto/schedules.hpp"

namespace bgrto::config {

struct PretrainConfig {
  /// Source-convention scenes with oracle prompts.
  std::size_t scenes = 256;
  std::size_t epochs = 40;
  double lr = 3e-3;
  std::size_t batch = 8;
  std::uint64_t seed = 1;
  bool operator==(const PretrainConfig&) const = default;
};

struct WarmupConfig {
  /// Scripted demonstrations on target scenes.
  std::size_t demos = 32768;
  double noise = 0.05;
  std::size_t epochs = 3;
  double lr = 2e-3;
  std::size_t batch = 16;
  std::uint64_t seed = 1;
  std::size_t probe_scenes = 16;
  double min_validity = 0.5;
  bool operator==(const WarmupConfig&) const = default;
};

struct EvalConfig {
  /// Held-out target scenes for the eval command.
  std::size_t scenes = 256;
  std::uint64_t seed = 2;
  bool operator==(const EvalConfig&) const = default;
};

/// Artifact names, relative to the workdir unless absolute.
struct Paths {
  std::string workdir;
  std::string tool0 = "tool0.ckpt";
  std::string policy0 = "policy0.ckpt";
  std::string buffer = "buffer.jsonl";
  /// Root of the per-run directories {mode}/{seed}/.
  std::string runs = "runs";
  bool operator==(const Paths&) const = default;
};

struct RunConfig {
  schedules::TrainConfig train;
  env::EnvConfig env;
  models::ModelConfig model;
  PretrainConfig pretrain;
  WarmupConfig warmup;
  EvalConfig eval;
  Paths paths;

  /// Throws ConfigError listing every violated constraint.
  void validate() const;
  /// Digest of the env and model sections: checkpoints and buffers made
  /// under one hash are interchangeable.
  std::string compat_hash() const;
  bool operator==(const RunConfig&) const = default;
};

/// Full document with every field; parse(to_json(c)) == c.
nlohmann::json to_json(const RunConfig& c);

/// Applies defaults for absent keys. Unknown keys, type mismatches and
/// constraint violations are collected and thrown as one ConfigError.
RunConfig from_json(const nlohmann::json& doc);

RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_text(std::string_view text);

/// Sets a dotted key ("bto.beta=0.02") in `doc`. The value is read as JSON
/// when it parses, otherwise as a string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

/// Parses `path` (or an empty document when the path is empty), applies the
/// overrides in order, then validates.
RunConfig load_with_overrides(const std::filesystem::path& path, std::span<const std::string> overrides);

}  // namespace bgrto::config
