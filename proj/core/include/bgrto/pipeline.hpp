#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bgrto/checkpoint.hpp"
#include "bgrto/config.hpp"
#include "bgrto/env.hpp"
#include "bgrto/metrics.hpp"
#include "bgrto/models.hpp"
#include "bgrto/rollout.hpp"

namespace bgrto::pipeline {

models::Shapes shapes_for(const config::RunConfig& cfg);

/// Source-convention scenes paired with oracle prompts.
std::vector<models::SupervisedExample> pretrain_dataset(const config::RunConfig& cfg);

/// omega_0: the tool fit to the source convention.
models::ToolParams pretrain_tool(const config::RunConfig& cfg);

/// Noisy scripted demonstrations on target scenes.
std::vector<models::Demonstration> warmup_demonstrations(const config::RunConfig& cfg);

/// theta_0: the policy warm-started on demonstrations.
models::PolicyParams warmup_policy(const config::RunConfig& cfg, std::vector<double>* loss_log = nullptr);

/// Reference-policy groups for the bootstrapped modes.
rollout::ReplayBuffer build_buffer(const config::RunConfig& cfg, const models::PolicyParams& reference,
                                   const models::ToolParams& tool0, const std::string& policy_ckpt);

/// Held-out target scenes used by the eval command.
std::vector<env::GridScene> eval_scenes(const config::RunConfig& cfg);

struct CeilingReport {
  /// Mean IoU of the tool given oracle prompts.
  double mean_iou = 0.0;
  /// Mean analytic erosion ceiling of the same scenes.
  double mean_ceiling = 0.0;
  std::size_t scenes = 0;
};

CeilingReport ceiling_check(const models::ToolParams& tool, const models::Shapes& shapes,
                            std::span<const env::GridScene> scenes, const objectives::RewardOptions& options = {});

struct CheckpointInfo {
  std::string kind;
  std::string mode;
  std::string stage;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  std::optional<double> metric;
};

checkpoint::Checkpoint make_checkpoint(const config::RunConfig& cfg, const CheckpointInfo& info,
                                       const models::PolicyParams* policy, const models::ToolParams* tool);

/// JSON object with giou, ciou, mean_reward, validity_rate and scenes.
nlohmann::json report_json(const metrics::EvalReport& report);

}  // namespace bgrto::pipeline
