#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bgrto/env.hpp"
#include "bgrto/models.hpp"
#include "bgrto/objectives.hpp"
#include "bgrto/rng.hpp"

namespace bgrto::rollout {

struct Rollout {
  env::TokenSeq tokens;
  /// Per token, under the sampling parameters.
  std::vector<double> logprobs_old;
  /// Per token, under the reference policy.
  std::vector<double> logprobs_ref;
  bool valid = false;
  std::optional<env::ToolPrompt> prompt;
  objectives::RewardBreakdown reward;
};

struct Group {
  std::uint64_t scene_seed = 0;
  env::Domain domain = env::Domain::kTarget;
  std::vector<Rollout> rollouts;
  std::optional<objectives::AdvantageSet> advantages;
  std::optional<objectives::BtoWeights> bto;

  std::vector<double> rewards() const;
  std::size_t valid_count() const;
};

/// Log-probabilities of several sequences for one scene, one row per sequence.
std::vector<std::vector<double>> batch_logprobs(const models::PolicyParams& params, const models::Shapes& shapes,
                                                const env::GridScene& scene,
                                                std::span<const env::TokenSeq> sequences);

/// Samples G sequences (rollout i from `rng.split(i)`), records sampling and
/// reference log-probabilities, and parses prompts. Rewards are left zero.
Group sample_rollouts(const models::PolicyParams& policy, const models::PolicyParams& reference,
                      const models::Shapes& shapes, const env::GridScene& scene, std::size_t group_size,
                      double temperature, const Rng& rng);

/// Fills rewards from per-rollout tool logits (null for invalid rollouts) and
/// recomputes advantages.
void score_group(Group& group, const env::GridScene& scene, std::span<const Tensor* const> logits,
                 const objectives::RewardOptions& options);

/// Evaluates the tool on every valid rollout (identical prompts share one
/// forward pass) and scores the group.
void score_group(Group& group, const env::GridScene& scene, const models::ToolParams& tool,
                 const models::Shapes& shapes, const objectives::RewardOptions& options);

/// sample_rollouts followed by score_group. Requires G >= 2.
Group sample_group(const models::PolicyParams& policy, const models::PolicyParams& reference,
                   const models::ToolParams& tool, const models::Shapes& shapes, const env::GridScene& scene,
                   std::size_t group_size, const Rng& rng, const objectives::RewardOptions& options,
                   double temperature = 1.0);

// ---------------------------------------------------------------- replay buffer

inline constexpr int kBufferVersion = 1;

struct BufferHeader {
  int version = kBufferVersion;
  std::string policy_ckpt;
  std::string env_hash;
  std::size_t group_size = 0;
  std::uint64_t seed = 0;
  /// Number of group lines that follow; detects truncation at a line boundary.
  std::size_t groups = 0;
  bool operator==(const BufferHeader&) const = default;
};

struct ReplayBuffer {
  BufferHeader header;
  std::vector<Group> groups;
};

/// True when headers and every stored field (seeds, domains, tokens, both
/// log-probability lists, validity) are bitwise identical.
bool same_content(const ReplayBuffer& a, const ReplayBuffer& b);

struct BufferOptions {
  std::size_t group_size = 8;
  /// Passes over the scene list; each pass draws fresh rollouts.
  std::size_t passes = 1;
  std::uint64_t seed = 0;
  env::Domain domain = env::Domain::kTarget;
  std::string policy_ckpt;
  objectives::RewardOptions reward;
};

/// Groups from the reference policy over `scene_seeds`. Group k (in pass-major
/// order) draws from Rng::keyed(seed, "rollout", {k}). Writes the buffer to
/// `path` unless it is empty.
ReplayBuffer build_replay_buffer(const models::PolicyParams& reference, const models::ToolParams& tool,
                                 const models::Shapes& shapes, std::span<const std::uint64_t> scene_seeds,
                                 const BufferOptions& options, const std::filesystem::path& path = {});

/// Atomic write (temporary file then rename). Throws IoError on failure.
void save_buffer(const ReplayBuffer& buffer, const std::filesystem::path& path);

/// Parses and validates a buffer. Prompts are re-parsed with the grammar of
/// `env_config` and must agree with the stored validity flags. Throws
/// FormatError on version or env hash mismatch, malformed or truncated input.
ReplayBuffer load_buffer(const std::filesystem::path& path, const env::EnvConfig& env_config);

}  // namespace bgrto::rollout
