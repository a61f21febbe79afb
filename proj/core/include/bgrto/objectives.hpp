#pragma once

#include <optional>
#include <span>
#include <vector>

#include "bgrto/autodiff.hpp"
#include "bgrto/env.hpp"
#include "bgrto/models.hpp"

namespace bgrto::objectives {

struct RewardWeights {
  double iou = 0.9;
  double format = 0.1;
  bool operator==(const RewardWeights&) const = default;
};

struct RewardBreakdown {
  double r_iou = 0.0;
  double r_format = 0.0;
  double total = 0.0;
  /// Cell counts behind r_iou; an invalid prompt predicts nothing, so its
  /// union is the truth's size.
  std::size_t intersection = 0;
  std::size_t union_ = 0;
  bool operator==(const RewardBreakdown&) const = default;
};

struct RewardOptions {
  bool filter_enabled = true;
  double threshold = 0.5;
  RewardWeights weights;
};

struct Overlap {
  std::size_t intersection = 0;
  std::size_t union_ = 0;
};

Overlap mask_overlap(const env::Mask& a, const env::Mask& b);

/// |a ∩ b| / |a ∪ b|; 1 when both are empty.
double mask_iou(const env::Mask& a, const env::Mask& b);

/// Cells outside the union of `boxes` become background.
env::Mask spatial_filter(const env::Mask& mask, std::span<const env::Rect> boxes);

/// Foreground where sigmoid(logit) > threshold.
env::Mask binarize(const Tensor& logits, int width, int height, double threshold);

/// Scores an already-evaluated tool output. `prompt` absent means the rollout
/// did not parse.
RewardBreakdown reward_from_logits(const env::GridScene& scene, const std::optional<env::ToolPrompt>& prompt,
                                   const Tensor* logits, const RewardOptions& options);

RewardBreakdown compute_reward(const env::GridScene& scene, const std::optional<env::ToolPrompt>& prompt,
                               const models::ToolParams& tool, const models::Shapes& shapes,
                               const RewardOptions& options);

/// BCE (from logits) + soft IoU against a binary mask.
ad::Var seg_loss(ad::Var logits, const env::Mask& gt);

struct AdvantageSet {
  std::vector<double> rewards;
  double mean = 0.0;
  /// Population standard deviation.
  double std = 0.0;
  std::vector<double> advantages;
  bool degenerate = false;
};

inline constexpr double kDegenerateStd = 1e-8;

AdvantageSet compute_advantages(std::span<const double> rewards);

/// Per-token k3 estimator exp(ref - cur) - (ref - cur) - 1, summed and
/// divided by `max_length`.
double kl_estimate(std::span<const double> current, std::span<const double> reference,
                   std::size_t max_length);

/// Tape form over a group: `current[t]` and `reference[t]` have dims [G];
/// returns the per-rollout estimate, dims [G].
ad::Var kl_estimate(ad::Tape& tape, std::span<const ad::Var> current, std::span<const Tensor> reference,
                    std::size_t max_length);

struct GrpoInputs {
  /// Per step, dims [G], differentiable w.r.t. the policy.
  std::span<const ad::Var> current;
  /// Per step, dims [G], recorded at sampling time.
  std::span<const Tensor> old;
  /// Per step, dims [G], under the reference policy.
  std::span<const Tensor> reference;
  std::span<const double> advantages;
  double beta = 0.01;
  double eps_clip = 0.2;
  std::size_t max_length = 0;
};

struct GrpoTerms {
  ad::Var objective;
  ad::Var surrogate;
  /// Group-mean KL estimate.
  ad::Var kl;
};

/// (1/G) sum_i (1/L) sum_t min(r A_i, clip(r, 1-eps, 1+eps) A_i) - beta * mean_i KL_i.
GrpoTerms grpo_objective(ad::Tape& tape, const GrpoInputs& in);

/// Per-rollout product of token ratios prod_t pi/pi_old, detached; dims [G].
ad::Var detached_sequence_ratios(ad::Tape& tape, std::span<const ad::Var> current, std::span<const Tensor> old);

/// (1/|valid|) sum_{i valid} ratio_i * loss_i; zero constant when nothing is valid.
/// `losses[i]` is empty for invalid rollouts.
ad::Var grto_tool_term(ad::Tape& tape, ad::Var sequence_ratios, std::span<const std::optional<ad::Var>> losses);

struct BtoWeights {
  std::vector<double> weights;
  double beta = 0.0;
};

/// Self-normalized exp(R_i / beta) over the group.
BtoWeights bto_weights(std::span<const double> rewards, double beta);

/// -(1/G) sum_{i valid} w_i * loss_i. Invalid rollouts keep their weight mass
/// but contribute no loss.
ad::Var bto_objective(ad::Tape& tape, const BtoWeights& weights, std::span<const std::optional<ad::Var>> losses);

}  // namespace bgrto::objectives
