#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bgrto/autodiff.hpp"
#include "bgrto/env.hpp"
#include "bgrto/rng.hpp"
#include "bgrto/tensor.hpp"

namespace bgrto::models {

struct ModelConfig {
  std::size_t policy_hidden = 128;
  std::size_t tool_hidden = 32;
  std::size_t concept_dim = 8;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

using PolicyParams = NamedParams;
using ToolParams = NamedParams;

/// Everything the networks need to know about the environment's shapes.
struct Shapes {
  env::EnvConfig env;
  env::ActionGrammar grammar;
  ModelConfig model;

  Shapes(const env::EnvConfig& env_config, const ModelConfig& model_config);

  std::size_t observation_size() const noexcept;
  /// Step one-hot followed by one block per step holding that step's token.
  std::size_t prefix_size() const noexcept;
  std::size_t prefix_offset(std::size_t step) const;
  std::size_t tool_feature_size() const noexcept;
};

// ---------------------------------------------------------------- policy

PolicyParams policy_init(std::uint64_t seed, const Shapes& shapes);

/// Tape handles for a bound policy.
struct PolicyVars {
  ad::Var l1_obs_w, l1_prefix_w, l1_b, l2_w, l2_b;
  std::vector<ad::Var> head_w, head_b;
};

/// Registers the policy tensors as leaves (names are prefixed "policy/").
PolicyVars bind_policy(ad::Tape& tape, const PolicyParams& params, const Shapes& shapes);

/// Per-step log-probabilities of a batch of full token sequences for one
/// scene. Result[t] has dims [batch]; entry i is log pi(tokens_i[t] | obs, tokens_i[<t]).
std::vector<ad::Var> policy_logprobs_tape(ad::Tape& tape, const PolicyVars& vars, const Shapes& shapes,
                                          const env::GridScene& scene,
                                          std::span<const env::TokenSeq> sequences);

/// Same as policy_logprobs_tape with one scene per sequence (scenes are
/// compared by address; repeated scenes share one observation row).
std::vector<ad::Var> policy_logprobs_multi_tape(ad::Tape& tape, const PolicyVars& vars, const Shapes& shapes,
                                                std::span<const env::GridScene* const> scenes,
                                                std::span<const env::TokenSeq> sequences);

/// Plain-value convenience over one sequence.
std::vector<double> policy_logprobs(const PolicyParams& params, const Shapes& shapes,
                                    const env::GridScene& scene, const env::TokenSeq& tokens);

struct SampledSequence {
  env::TokenSeq tokens;
  /// Log-probabilities under the sampling distribution.
  std::vector<double> logprobs;
};

/// G ancestral samples; rollout i draws from `rng.split(i)`.
std::vector<SampledSequence> policy_sample(const PolicyParams& params, const Shapes& shapes,
                                           const env::GridScene& scene, std::size_t group_size,
                                           double temperature, const Rng& rng);

/// Argmax decoding (lowest token index on ties).
SampledSequence policy_greedy(const PolicyParams& params, const Shapes& shapes,
                              const env::GridScene& scene);

/// Full per-step distribution for one prefix, for enumeration.
std::vector<double> policy_step_logprobs(const PolicyParams& params, const Shapes& shapes,
                                         const env::GridScene& scene, const env::TokenSeq& prefix);

// ---------------------------------------------------------------- tool

ToolParams tool_init(std::uint64_t seed, const Shapes& shapes);

struct ToolVars {
  ad::Var embed, l1_feat_w, l1_embed_w, l1_b, l2_w, l2_b, out_w, out_b;
};

ToolVars bind_tool(ad::Tape& tape, const ToolParams& params);

/// Per-cell features [H*W, F]: color one-hot, 3x3 mean-pooled occupancy,
/// global mean occupancy, inside-box indicator.
Tensor tool_features(const env::GridScene& scene, const env::ToolPrompt& prompt, const Shapes& shapes);

/// Mask logits with dims [H, W].
ad::Var tool_forward_tape(ad::Tape& tape, const ToolVars& vars, const Shapes& shapes,
                          const env::GridScene& scene, const env::ToolPrompt& prompt);

Tensor tool_forward(const ToolParams& params, const Shapes& shapes, const env::GridScene& scene,
                    const env::ToolPrompt& prompt);

// ---------------------------------------------------------------- supervised warm starts

struct SupervisedExample {
  env::GridScene scene;
  env::ToolPrompt prompt;
};

struct PretrainOptions {
  std::size_t epochs = 40;
  double lr = 3e-3;
  std::size_t batch = 8;
  std::uint64_t seed = 0;
};

/// Adam on the segmentation loss against each scene's source-convention mask.
ToolParams pretrain_tool(ToolParams params, const Shapes& shapes,
                         std::span<const SupervisedExample> dataset, const PretrainOptions& options);

struct Demonstration {
  env::GridScene scene;
  env::TokenSeq tokens;
};

struct WarmupOptions {
  std::size_t epochs = 3;
  double lr = 2e-3;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
  /// Minimum post-warmup validity rate at temperature 1.
  double min_validity = 0.5;
  /// Scenes used for the validity probe.
  std::vector<env::GridScene> probe_scenes;
  /// Per-epoch mean negative log-likelihood is appended here when non-null.
  std::vector<double>* loss_log = nullptr;
};

/// Maximizes mean per-token log-likelihood of the demonstrations. Throws
/// TrainingError if the validity probe falls below `min_validity`.
PolicyParams warmup_policy(PolicyParams params, const Shapes& shapes,
                           std::span<const Demonstration> demos, const WarmupOptions& options);

/// Fraction of temperature-1 samples that parse.
double sample_validity_rate(const PolicyParams& params, const Shapes& shapes,
                            std::span<const env::GridScene> scenes, std::size_t samples_per_scene,
                            std::uint64_t seed);

}  // namespace bgrto::models
