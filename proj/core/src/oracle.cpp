#include "bgrto/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "bgrto/autodiff.hpp"
#include "bgrto/errors.hpp"
#include "bgrto/optim.hpp"

namespace bgrto::oracle {

namespace {

void require_beta(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw UsageError("oracle: beta must be positive and finite");
}

void enumerate_prefix(const models::PolicyParams& policy, const models::Shapes& shapes,
                      const env::GridScene& scene, env::TokenSeq& prefix, double logp, EnumeratedSpace& out,
                      std::vector<double>& logps) {
  if (prefix.size() == shapes.grammar.length()) {
    out.sequences.push_back(prefix);
    logps.push_back(logp);
    return;
  }
  const auto step = models::policy_step_logprobs(policy, shapes, scene, prefix);
  for (std::size_t v = 0; v < step.size(); ++v) {
    prefix.push_back(v);
    enumerate_prefix(policy, shapes, scene, prefix, logp + step[v], out, logps);
    prefix.pop_back();
  }
}

double max_reward(const EnumeratedSpace& space) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t o = 0; o < space.size(); ++o) {
    if (space.probabilities[o] > 0.0) m = std::max(m, space.rewards[o]);
  }
  return m;
}

std::vector<double> posterior_unnormalized(const EnumeratedSpace& space, double beta, double& total) {
  const double m = max_reward(space);
  std::vector<double> w(space.size(), 0.0);
  total = 0.0;
  for (std::size_t o = 0; o < space.size(); ++o) {
    if (space.probabilities[o] <= 0.0) continue;
    w[o] = space.probabilities[o] * std::exp((space.rewards[o] - m) / beta);
    total += w[o];
  }
  return w;
}

ad::Var sequence_loss(ad::Tape& tape, const models::ToolVars& vars, const models::Shapes& shapes,
                      const env::GridScene& scene, const env::ToolPrompt& prompt) {
  return objectives::seg_loss(models::tool_forward_tape(tape, vars, shapes, scene, prompt), scene.official_gt());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

EnumeratedSpace enumerate_space(const models::PolicyParams& policy, const models::ToolParams& tool,
                                const models::Shapes& shapes, const env::GridScene& scene,
                                const objectives::RewardOptions& options) {
  const std::size_t count = shapes.grammar.sequence_count();
  if (count > kEnumerationGuard) {
    throw UsageError("enumerate_space: " + std::to_string(count) + " sequences exceeds the guard of " +
                     std::to_string(kEnumerationGuard));
  }
  EnumeratedSpace space;
  std::vector<double> logps;
  env::TokenSeq prefix;
  enumerate_prefix(policy, shapes, scene, prefix, 0.0, space, logps);
  for (std::size_t o = 0; o < space.size(); ++o) {
    space.probabilities.push_back(std::exp(logps[o]));
    space.prompts.push_back(env::parse_action_tokens(space.sequences[o], shapes.grammar));
    space.rewards.push_back(objectives::compute_reward(scene, space.prompts[o], tool, shapes, options).total);
  }
  return space;
}

EnumeratedSpace make_space(std::vector<double> probabilities, std::vector<double> rewards) {
  if (probabilities.size() != rewards.size() || probabilities.empty()) {
    throw UsageError("make_space: probabilities and rewards must be non-empty and of equal length");
  }
  EnumeratedSpace space;
  space.sequences.resize(probabilities.size());
  space.prompts.resize(probabilities.size());
  space.probabilities = std::move(probabilities);
  space.rewards = std::move(rewards);
  return space;
}

double exact_log_partition(const EnumeratedSpace& space, double beta) {
  require_beta(beta);
  double total = 0.0;
  posterior_unnormalized(space, beta, total);
  return max_reward(space) / beta + std::log(total);
}

double exact_partition(const EnumeratedSpace& space, double beta) {
  return std::exp(exact_log_partition(space, beta));
}

std::vector<double> exact_posterior(const EnumeratedSpace& space, double beta) {
  require_beta(beta);
  double total = 0.0;
  auto w = posterior_unnormalized(space, beta, total);
  for (double& v : w) v /= total;
  return w;
}

double exact_klrl(const EnumeratedSpace& space, std::span<const double> q, double beta) {
  require_beta(beta);
  if (q.size() != space.size()) throw UsageError("exact_klrl: distribution length does not match the space");
  double mass = 0.0;
  for (double v : q) {
    if (!(v >= 0.0)) throw UsageError("exact_klrl: negative or NaN probability");
    mass += v;
  }
  if (std::abs(mass - 1.0) > 1e-9) throw UsageError("exact_klrl: distribution does not sum to 1");
  double reward = 0.0;
  double kl = 0.0;
  for (std::size_t o = 0; o < q.size(); ++o) {
    if (q[o] == 0.0) continue;
    if (space.probabilities[o] <= 0.0) {
      throw DomainError("exact_klrl: support of q exceeds the reference support (infinite KL)");
    }
    reward += q[o] * space.rewards[o];
    kl += q[o] * (std::log(q[o]) - std::log(space.probabilities[o]));
  }
  return reward - beta * kl;
}

double posterior_mean(const EnumeratedSpace& space, std::span<const double> values, double beta) {
  if (values.size() != space.size()) throw UsageError("posterior_mean: one value per sequence required");
  const auto post = exact_posterior(space, beta);
  double s = 0.0;
  for (std::size_t o = 0; o < values.size(); ++o) s += post[o] * values[o];
  return s;
}

NamedParams exact_bto_gradient(const EnumeratedSpace& space, const models::ToolParams& tool,
                               const models::Shapes& shapes, const env::GridScene& scene, double beta) {
  const auto post = exact_posterior(space, beta);
  NamedParams grad = zeros_like(tool);
  for (std::size_t o = 0; o < space.size(); ++o) {
    if (!space.prompts[o] || post[o] == 0.0) continue;
    ad::Tape tape;
    const models::ToolVars vars = models::bind_tool(tape, tool);
    const NamedParams g = optim::select(tape.backward(sequence_loss(tape, vars, shapes, scene, *space.prompts[o])), tool);
    for (auto& [name, t] : grad) {
      const Tensor& gi = g.at(name);
      for (std::size_t k = 0; k < t.size(); ++k) t[k] -= post[o] * gi[k];
    }
  }
  return grad;
}

OptimalityReport posterior_optimality_check(const EnumeratedSpace& space, double beta, std::size_t trials,
                                            const Rng& rng, double concentration) {
  if (trials == 0) throw UsageError("posterior_optimality_check: trials must be >= 1");
  const auto post = exact_posterior(space, beta);
  OptimalityReport report;
  report.trials = trials;
  report.posterior_value = exact_klrl(space, post, beta);
  report.worst_gap = -std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(space.size());
  for (std::size_t k = 0; k < trials; ++k) {
    Rng r = rng.split(k);
    std::vector<double> q(space.size(), 0.0);
    double total = 0.0;
    for (std::size_t o = 0; o < space.size(); ++o) {
      if (space.probabilities[o] <= 0.0) continue;
      std::gamma_distribution<double> gamma(std::max(concentration * n * post[o], 1e-3), 1.0);
      q[o] = gamma(r);
      total += q[o];
    }
    if (!(total > 0.0)) {
      q = post;
    } else {
      for (double& v : q) v /= total;
    }
    const double gap = exact_klrl(space, q, beta) - report.posterior_value;
    report.worst_gap = std::max(report.worst_gap, gap);
    report.passes += gap <= kOptimalityTolerance ? 1 : 0;
  }
  return report;
}

// ---------------------------------------------------------------- micro instances

env::EnvConfig micro_env_config() {
  env::EnvConfig c;
  c.width = 8;
  c.height = 8;
  c.min_objects = 1;
  c.max_objects = 2;
  c.num_colors = 4;
  c.min_side = 3;
  c.max_side = 4;
  c.area_threshold = 12;
  c.grammar = env::GrammarKind::kMicro;
  return c;
}

models::ModelConfig micro_model_config() {
  models::ModelConfig m;
  m.policy_hidden = 8;
  m.tool_hidden = 6;
  m.concept_dim = 3;
  return m;
}

MicroInstance make_micro_instance(std::uint64_t seed) {
  models::Shapes shapes(micro_env_config(), micro_model_config());
  const env::GridScene scene =
      env::generate_scene(Rng::keyed(seed, "micro_scene").next_u64(), env::Domain::kTarget, shapes.env);
  auto policy = models::policy_init(seed, shapes);
  auto tool = models::tool_init(seed, shapes);
  Rng rng = Rng::keyed(seed, "micro_jitter");
  std::normal_distribution<double> normal(0.0, 0.25);
  for (auto* params : {&policy, &tool}) {
    const double gain = params == &tool ? 1.5 : 1.0;
    for (auto& [name, t] : *params) {
      const bool bias = name.ends_with("_b") || name.find("/b") != std::string::npos;
      for (double& v : t.values()) v = bias ? normal(rng) : gain * v;
    }
  }
  // Positive output bias: the decoder starts mostly foreground, so the box
  // filter alone separates the rewards of different boxes.
  tool.at("tool/out_b")[0] += 1.0;
  return {shapes, scene, std::move(policy), std::move(tool)};
}

// ---------------------------------------------------------------- Monte Carlo side

std::size_t sample_index(const EnumeratedSpace& space, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t o = 0; o < space.size(); ++o) {
    if (space.probabilities[o] <= 0.0) continue;
    acc += space.probabilities[o];
    last = o;
    if (u < acc) return o;
  }
  return last;
}

McGradient monte_carlo_bto_gradient(const EnumeratedSpace& space, const models::ToolParams& tool,
                                    const models::Shapes& shapes, const env::GridScene& scene, double beta,
                                    std::size_t groups, std::size_t group_size, const Rng& rng) {
  if (groups < 2 || group_size < 1) throw UsageError("monte_carlo_bto_gradient: need >= 2 groups");
  NamedParams sum = zeros_like(tool);
  NamedParams sumsq = zeros_like(tool);
  const double g_size = static_cast<double>(group_size);
  for (std::size_t g = 0; g < groups; ++g) {
    Rng r = rng.split(g);
    std::vector<std::size_t> draws(group_size);
    std::vector<double> rewards(group_size);
    for (std::size_t i = 0; i < group_size; ++i) {
      draws[i] = sample_index(space, r);
      rewards[i] = space.rewards[draws[i]];
    }
    const auto weights = objectives::bto_weights(rewards, beta);

    ad::Tape tape;
    const models::ToolVars vars = models::bind_tool(tape, tool);
    std::vector<std::optional<ad::Var>> losses(group_size);
    std::vector<std::pair<std::size_t, ad::Var>> cache;
    for (std::size_t i = 0; i < group_size; ++i) {
      const auto& prompt = space.prompts[draws[i]];
      if (!prompt) continue;
      auto it = std::find_if(cache.begin(), cache.end(), [&](const auto& c) { return c.first == draws[i]; });
      if (it == cache.end()) {
        cache.emplace_back(draws[i], sequence_loss(tape, vars, shapes, scene, *prompt));
        it = cache.end() - 1;
      }
      losses[i] = it->second;
    }
    const ad::Var objective = objectives::bto_objective(tape, weights, losses);
    const NamedParams grad = optim::select(tape.backward(objective), tool);
    for (auto& [name, s] : sum) {
      const Tensor& gi = grad.at(name);
      Tensor& sq = sumsq.at(name);
      for (std::size_t k = 0; k < s.size(); ++k) {
        const double v = g_size * gi[k];
        s[k] += v;
        sq[k] += v * v;
      }
    }
  }
  McGradient out;
  out.groups = groups;
  out.mean = sum;
  out.std_error = sumsq;
  const double n = static_cast<double>(groups);
  for (auto& [name, m] : out.mean) {
    Tensor& se = out.std_error.at(name);
    for (std::size_t k = 0; k < m.size(); ++k) {
      const double mean = m[k] / n;
      const double var = std::max(0.0, (se[k] - n * mean * mean) / (n - 1.0));
      m[k] = mean;
      se[k] = std::sqrt(var / n);
    }
  }
  return out;
}

GradientComparison compare_gradients(const NamedParams& exact, const McGradient& mc, double magnitude_floor) {
  GradientComparison c;
  for (const auto& [name, e] : exact) {
    const Tensor& m = mc.mean.at(name);
    const Tensor& se = mc.std_error.at(name);
    for (std::size_t k = 0; k < e.size(); ++k) {
      ++c.coordinates;
      const double diff = std::abs(m[k] - e[k]);
      // Differences below the absolute floor count as agreement (coordinates
      // fed only by sequences too rare to be drawn).
      double z = 0.0;
      if (diff > kAbsoluteFloor) z = se[k] > 0.0 ? diff / se[k] : std::numeric_limits<double>::infinity();
      c.max_z = std::max(c.max_z, z);
      c.outside_3se += z > 3.0 ? 1 : 0;
      if (std::abs(e[k]) > magnitude_floor) c.max_relative_error = std::max(c.max_relative_error, diff / std::abs(e[k]));
    }
  }
  return c;
}

// ---------------------------------------------------------------- reports

std::string to_json_line(const CheckResult& r) {
  const auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return fmt(v);
  };
  return nlohmann::json{{"check_name", r.check_name},
                        {"pass", r.pass},
                        {"value", num(r.value)},
                        {"reference", num(r.reference)},
                        {"tolerance", num(r.tolerance)}}
      .dump();
}

CheckResult identity_check(const EnumeratedSpace& space, double beta, const std::string& name) {
  const auto post = exact_posterior(space, beta);
  CheckResult r;
  r.check_name = name;
  r.value = exact_klrl(space, post, beta);
  r.reference = beta * exact_log_partition(space, beta);
  r.tolerance = 1e-10;
  r.pass = std::abs(r.value - r.reference) <= r.tolerance;
  return r;
}

std::vector<CheckResult> run_suite(const SuiteOptions& options) {
  std::vector<CheckResult> out;

  // Normalization and the J(posterior) = beta ln Z identity.
  double worst_norm = 0.0;
  double worst_identity = 0.0;
  std::vector<EnumeratedSpace> spaces;
  std::vector<MicroInstance> instances;
  const std::size_t n_inst = std::max(options.identity_instances, options.optimality_instances);
  for (std::size_t k = 0; k < n_inst; ++k) {
    instances.push_back(make_micro_instance(mix64(options.seed + k)));
    const auto& in = instances.back();
    spaces.push_back(enumerate_space(in.policy, in.tool, in.shapes, in.scene));
  }
  for (std::size_t k = 0; k < options.identity_instances; ++k) {
    double mass = 0.0;
    for (double p : spaces[k].probabilities) mass += p;
    worst_norm = std::max(worst_norm, std::abs(mass - 1.0));
    const auto r = identity_check(spaces[k], options.beta, "identity");
    worst_identity = std::max(worst_identity, std::abs(r.value - r.reference));
  }
  out.push_back({"enumeration_normalization", worst_norm <= 1e-12, worst_norm, 0.0, 1e-12});
  out.push_back({"klrl_posterior_equals_beta_log_partition", worst_identity <= 1e-10, worst_identity, 0.0, 1e-10});

  // Optimality of the posterior on the simplex.
  std::size_t trials = 0;
  std::size_t passes = 0;
  double worst_gap = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < options.optimality_instances; ++k) {
    const auto rep = posterior_optimality_check(spaces[k], options.beta, options.optimality_trials,
                                                Rng::keyed(options.seed, "optimality", {k}));
    trials += rep.trials;
    passes += rep.passes;
    worst_gap = std::max(worst_gap, rep.worst_gap);
  }
  out.push_back({"posterior_optimality", passes == trials, worst_gap, 0.0, kOptimalityTolerance});

  // Monotonicity of Z in each reward.
  {
    const auto& s = spaces.front();
    const double z0 = exact_partition(s, options.beta);
    bool ok = true;
    for (std::size_t o = 0; o < s.size(); ++o) {
      EnumeratedSpace bumped = s;
      bumped.rewards[o] += 0.05;
      ok = ok && exact_partition(bumped, options.beta) >= z0;
    }
    out.push_back({"partition_monotone_in_rewards", ok, z0, z0, 0.0});
  }

  // Self-normalized weights over one large group approach posterior expectations.
  {
    const auto& s = spaces.front();
    Rng r = Rng::keyed(options.seed, "weight_consistency");
    std::vector<double> rewards(4096);
    for (double& v : rewards) v = s.rewards[sample_index(s, r)];
    const auto w = objectives::bto_weights(rewards, options.beta);
    double weighted = 0.0;
    for (std::size_t i = 0; i < rewards.size(); ++i) weighted += w.weights[i] * rewards[i];
    const double exact = posterior_mean(s, s.rewards, options.beta);
    const double rel = std::abs(weighted - exact) / std::abs(exact);
    out.push_back({"bto_weights_match_posterior_mean_reward", rel <= 0.01, weighted, exact, 0.01});
  }

  if (options.include_monte_carlo) {
    const auto& in = instances.front();
    const auto& s = spaces.front();
    const auto exact = exact_bto_gradient(s, in.tool, in.shapes, in.scene, options.mc_beta);
    const auto mc = monte_carlo_bto_gradient(s, in.tool, in.shapes, in.scene, options.mc_beta, options.mc_groups,
                                             options.mc_group_size, Rng::keyed(options.seed, "bto_mc"));
    const auto cmp = compare_gradients(exact, mc);
    out.push_back({"bto_gradient_within_3_standard_errors", cmp.outside_3se == 0, cmp.max_z, 0.0, 3.0});
    out.push_back({"bto_gradient_relative_error", cmp.max_relative_error <= 0.02, cmp.max_relative_error, 0.0, 0.02});
  }
  return out;
}

}  // namespace bgrto::oracle
