#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bgrto/env.hpp"
#include "bgrto/metrics.hpp"
#include "bgrto/models.hpp"
#include "bgrto/objectives.hpp"
#include "bgrto/optim.hpp"
#include "bgrto/rollout.hpp"

namespace bgrto::schedules {

enum class Mode : std::uint8_t { kGrpo, kGrto, kBGrto, kBGrpo, kReverseSeq, kGrtoNoFilter };
std::string_view to_string(Mode m) noexcept;
Mode parse_mode(std::string_view s);
bool is_bootstrapped(Mode m) noexcept;

struct BtoConfig {
  std::string buffer_path;
  /// Temperature of the exp(R / beta) weights.
  double beta = 0.01;
  std::size_t epochs = 3;
  double lr_tool = 1e-2;
  /// Keep buffer-time rewards (under the starting tool) instead of rescoring.
  bool frozen_rewards = false;
  /// Scenes in the replay buffer and passes over them.
  std::size_t buffer_scenes = 32;
  std::size_t buffer_passes = 1;
  /// Seed of the buffer's scene list and rollout streams.
  std::uint64_t buffer_seed = 7;
  /// Rollouts per stored group; 0 means the training group size.
  std::size_t group_size = 0;
  bool operator==(const BtoConfig&) const = default;
};

struct ValidationConfig {
  std::size_t scenes = 64;
  std::uint64_t seed = 1000;
  /// Only "mean_giou_ciou" is defined.
  std::string metric = "mean_giou_ciou";
  bool operator==(const ValidationConfig&) const = default;
};

struct ReverseSeqConfig {
  std::size_t epochs = 10;
  double lr_tool = 1e-3;
  bool operator==(const ReverseSeqConfig&) const = default;
};

struct TrainConfig {
  Mode mode = Mode::kGrpo;
  double lr_policy = 3e-4;
  double lr_tool = 1e-3;
  /// Multiplier on lr_tool for the joint stage of b_grto.
  double second_stage_tool_lr_scale = 1.0;
  double beta_kl = 0.01;
  double eps_clip = 0.2;
  std::size_t group_size = 8;
  std::size_t scenes_per_epoch = 32;
  std::size_t epochs = 30;
  std::size_t groups_per_step = 1;
  double grad_clip_norm = 1.0;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  /// Normalizing length of the policy objective; 0 means the grammar length.
  std::size_t max_length = 0;
  env::Domain domain = env::Domain::kTarget;
  objectives::RewardWeights reward_weights;
  double mask_threshold = 0.5;
  BtoConfig bto;
  ValidationConfig validation;
  ReverseSeqConfig reverse_seq;
  /// Checks on-policy ratios and gradient separation every step.
  bool check_invariants = true;
  /// Writes measured step times into the metrics log (breaks byte-identical reruns).
  bool record_wall_ms = false;

  /// Throws ConfigError listing every violated constraint.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct CheckpointRecord {
  std::string stage;
  std::size_t epoch = 0;
  double metric = 0.0;
  std::string path;
};

/// Maximum metric, ties to the earliest record. Throws UsageError when empty.
CheckpointRecord select_best_checkpoint(std::span<const CheckpointRecord> records);

struct StepStats {
  double policy_obj = 0.0;
  double tool_loss = 0.0;
  double kl = 0.0;
  double grad_norm_policy = 0.0;
  double grad_norm_tool = 0.0;
  /// Largest |ratio - 1| over every token (on-policy check).
  double max_ratio_deviation = 0.0;
  metrics::EvalReport samples;
};

/// One scene with its sampled group.
struct SceneGroup {
  env::GridScene scene;
  rollout::Group group;
};

objectives::RewardOptions reward_options(const TrainConfig& config, bool filter_enabled = true);
std::size_t max_length(const TrainConfig& config, const models::Shapes& shapes);

/// One clipped ascent step on the GRPO objective averaged over `batch`
/// (groups already scored). The tool is not touched.
StepStats train_step_grpo(std::span<const SceneGroup> batch, models::PolicyParams& policy,
                          optim::OptimizerState& policy_opt, const models::Shapes& shapes,
                          const TrainConfig& config);

/// Joint step: the policy follows the GRPO term with rewards under the tool
/// as it was before the step, and the tool descends the ratio-weighted
/// valid-only segmentation loss. Rewards and advantages are written into the
/// groups. Separate optimizers and clipping per network.
StepStats train_step_grto(std::span<SceneGroup> batch, models::PolicyParams& policy, models::ToolParams& tool,
                          optim::OptimizerState& policy_opt, optim::OptimizerState& tool_opt,
                          const models::Shapes& shapes, const TrainConfig& config, bool filter_enabled = true);

/// Per-epoch hook: (stage, epoch, policy, tool, metric) -> checkpoint path.
using CheckpointFn = std::function<std::string(const std::string&, std::size_t, const models::PolicyParams&,
                                               const models::ToolParams&, double)>;

struct StageResult {
  models::PolicyParams policy;
  models::ToolParams tool;
  std::vector<CheckpointRecord> records;
  std::vector<metrics::EvalReport> validation;
  CheckpointRecord selected;
  double wall_ms = 0.0;
  /// Wall time of each training epoch including its validation pass.
  std::vector<double> epoch_wall_ms;
};

struct RunContext {
  models::Shapes shapes;
  models::PolicyParams reference;
  models::ToolParams tool0;
  std::vector<env::GridScene> validation_scenes;
  /// Required by the bootstrapped modes.
  const rollout::ReplayBuffer* buffer = nullptr;
  metrics::CsvSink* sink = nullptr;
  CheckpointFn checkpoint;
};

/// BTO stage over a static buffer. Epoch 0 (the starting tool) is a
/// candidate, so the returned tool never validates below the start.
StageResult run_bto_stage(const rollout::ReplayBuffer& buffer, const RunContext& ctx, const TrainConfig& config,
                          std::vector<metrics::MetricsRow>* rows = nullptr);

struct RunResult {
  models::PolicyParams policy;
  models::ToolParams tool;
  /// Stages in execution order (for example "bto" then "grto").
  std::vector<std::pair<std::string, StageResult>> stages;
  CheckpointRecord selected;
  std::vector<metrics::MetricsRow> rows;

  const StageResult* stage(std::string_view name) const;
};

/// Executes the configured mode from the warm-started reference policy and
/// pretrained tool in `ctx`.
RunResult run_mode(const RunContext& ctx, const TrainConfig& config);

/// Scene seeds used by the training stream, validation and buffer.
std::uint64_t train_scene_seed(std::uint64_t run_seed, std::uint64_t epoch, std::uint64_t index);
std::vector<env::GridScene> validation_scenes(const TrainConfig& config, const env::EnvConfig& env_config);
std::vector<std::uint64_t> buffer_scene_seeds(std::uint64_t seed, std::size_t count);

}  // namespace bgrto::schedules
