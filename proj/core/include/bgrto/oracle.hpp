#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bgrto/env.hpp"
#include "bgrto/models.hpp"
#include "bgrto/objectives.hpp"
#include "bgrto/rng.hpp"

namespace bgrto::oracle {

/// Largest sequence space the oracle agrees to enumerate.
inline constexpr std::size_t kEnumerationGuard = 100000;

/// Every grammar sequence with its probability under the reference policy
/// and its reward under the tool.
struct EnumeratedSpace {
  std::vector<env::TokenSeq> sequences;
  std::vector<std::optional<env::ToolPrompt>> prompts;
  std::vector<double> probabilities;
  std::vector<double> rewards;

  std::size_t size() const noexcept { return sequences.size(); }
};

/// Exhaustive enumeration with per-step softmax products. Throws UsageError
/// when the grammar has more than kEnumerationGuard sequences.
EnumeratedSpace enumerate_space(const models::PolicyParams& policy, const models::ToolParams& tool,
                                const models::Shapes& shapes, const env::GridScene& scene,
                                const objectives::RewardOptions& options = {});

/// Space from explicit probabilities and rewards (no tokens or prompts).
EnumeratedSpace make_space(std::vector<double> probabilities, std::vector<double> rewards);

/// sum_o p0(o) exp(R(o) / beta).
double exact_partition(const EnumeratedSpace& space, double beta);
/// log of exact_partition, computed with max shift.
double exact_log_partition(const EnumeratedSpace& space, double beta);

/// p0(o) exp(R(o) / beta) / Z.
std::vector<double> exact_posterior(const EnumeratedSpace& space, double beta);

/// sum q R - beta sum q ln(q / p0) with 0 ln 0 = 0. Throws DomainError when
/// q puts mass where p0 has none, UsageError when q is not a distribution.
double exact_klrl(const EnumeratedSpace& space, std::span<const double> q, double beta);

/// Posterior expectation of a per-sequence quantity.
double posterior_mean(const EnumeratedSpace& space, std::span<const double> values, double beta);

/// -sum_o p*(o) grad L_seg(o) over valid sequences; keys are the tool's names.
NamedParams exact_bto_gradient(const EnumeratedSpace& space, const models::ToolParams& tool,
                               const models::Shapes& shapes, const env::GridScene& scene, double beta);

struct OptimalityReport {
  std::size_t trials = 0;
  std::size_t passes = 0;
  double posterior_value = 0.0;
  /// Largest J(q) - J(posterior) observed (non-positive when every trial passes).
  double worst_gap = 0.0;
  bool pass() const noexcept { return trials > 0 && passes == trials; }
};

inline constexpr double kOptimalityTolerance = 1e-12;

/// J at the posterior against `trials` Dirichlet draws centered on it.
OptimalityReport posterior_optimality_check(const EnumeratedSpace& space, double beta, std::size_t trials,
                                            const Rng& rng, double concentration = 50.0);

// ---------------------------------------------------------------- micro instances

env::EnvConfig micro_env_config();
models::ModelConfig micro_model_config();

struct MicroInstance {
  models::Shapes shapes;
  env::GridScene scene;
  models::PolicyParams policy;
  models::ToolParams tool;
};

/// Random scene, policy and tool keyed by `seed`. Initial weights are
/// scaled up so rewards and probabilities vary across the space.
MicroInstance make_micro_instance(std::uint64_t seed);

// ---------------------------------------------------------------- Monte Carlo side

struct McGradient {
  NamedParams mean;
  NamedParams std_error;
  std::size_t groups = 0;
};

/// Average over `groups` groups of G draws from p0 of grad(-G * J_BTO), i.e.
/// the per-group self-normalized estimate of -E_{p*}[grad L_seg].
McGradient monte_carlo_bto_gradient(const EnumeratedSpace& space, const models::ToolParams& tool,
                                    const models::Shapes& shapes, const env::GridScene& scene, double beta,
                                    std::size_t groups, std::size_t group_size, const Rng& rng);

/// Index drawn from the enumerated reference distribution.
std::size_t sample_index(const EnumeratedSpace& space, Rng& rng);

// ---------------------------------------------------------------- reports

struct CheckResult {
  std::string check_name;
  bool pass = false;
  double value = 0.0;
  double reference = 0.0;
  double tolerance = 0.0;
};

std::string to_json_line(const CheckResult& r);

struct SuiteOptions {
  std::uint64_t seed = 0;
  std::size_t identity_instances = 50;
  std::size_t optimality_instances = 10;
  std::size_t optimality_trials = 100;
  std::size_t mc_groups = 10000;
  std::size_t mc_group_size = 8;
  double beta = 0.5;
  /// Beta for the bto gradient study; large enough that finite-group
  /// self-normalization bias stays below the Monte Carlo resolution.
  double mc_beta = 2.0;
  bool include_monte_carlo = true;
};

/// Eq-13-style identity, optimality, weight consistency and estimator
/// consistency checks over random micro instances.
std::vector<CheckResult> run_suite(const SuiteOptions& options);

/// Identity |J(posterior) - beta ln Z| on one instance.
CheckResult identity_check(const EnumeratedSpace& space, double beta, const std::string& name);

inline constexpr double kAbsoluteFloor = 1e-8;

struct GradientComparison {
  std::size_t coordinates = 0;
  /// Coordinates outside 3 standard errors (and above kAbsoluteFloor).
  std::size_t outside_3se = 0;
  /// Largest relative error over coordinates with |exact| > 1e-4.
  double max_relative_error = 0.0;
  double max_z = 0.0;
};

GradientComparison compare_gradients(const NamedParams& exact, const McGradient& mc,
                                     double magnitude_floor = 1e-4);

}  // namespace bgrto::oracle
