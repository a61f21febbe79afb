// Acceptance harness: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bgrto/checkpoint.hpp"
#include "bgrto/config.hpp"
#include "bgrto/errors.hpp"
#include "bgrto/io.hpp"
#include "bgrto/oracle.hpp"
#include "bgrto/pipeline.hpp"
#include "bgrto/schedules.hpp"
#include "test_support.hpp"

using namespace bgrto;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string g6(double v) { return fmt("%.6g", v); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  /// Runtime budget in seconds; 0 means none.
  double budget;
  std::function<Verdict()> run;
};

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------- 1: gradients

struct GradientTally {
  double worst = 0.0;
  std::string where;
  std::size_t checks = 0;
  std::size_t failures = 0;

  void add(const ad::FiniteDiffReport& r, const std::string& what) {
    ++checks;
    if (!r.passed) ++failures;
    if (r.max_rel_error > worst || where.empty()) {
      worst = std::max(worst, r.max_rel_error);
      where = what + ":" + r.worst_param;
    }
  }
};

constexpr double kFdStep = 1e-5;
constexpr double kFdTolerance = 1e-5;

std::vector<std::optional<ad::Var>> seg_losses(ad::Tape& tape, const models::ToolVars& vars,
                                               const oracle::MicroInstance& in,
                                               const std::vector<std::optional<env::ToolPrompt>>& prompts) {
  std::vector<std::optional<ad::Var>> out;
  for (const auto& p : prompts) {
    if (!p) {
      out.emplace_back();
      continue;
    }
    out.emplace_back(objectives::seg_loss(models::tool_forward_tape(tape, vars, in.shapes, in.scene, *p),
                                          in.scene.official_gt()));
  }
  return out;
}

Verdict criterion_gradients() {
  GradientTally tally;
  for (std::uint64_t k = 0; k < 20; ++k) {
    const auto in = oracle::make_micro_instance(mix64(1000 + k));
    const auto& s = in.shapes;
    const auto samples = models::policy_sample(in.policy, s, in.scene, 4, 1.0, Rng::keyed(k, "fd_sample"));
    std::vector<env::TokenSeq> seqs;
    std::vector<std::optional<env::ToolPrompt>> prompts;
    for (const auto& x : samples) {
      seqs.push_back(x.tokens);
      prompts.push_back(env::parse_action_tokens(x.tokens, s.grammar));
    }
    const std::string tag = "instance " + std::to_string(k);

    {  // Segmentation loss of the tool under the oracle prompt.
      ad::Tape tape;
      const auto vars = models::bind_tool(tape, in.tool);
      const auto loss = objectives::seg_loss(
          models::tool_forward_tape(tape, vars, s, in.scene, env::oracle_prompt(in.scene)), in.scene.official_gt());
      tally.add(ad::finite_diff_check(tape, loss, kFdStep, kFdTolerance), tag + " seg_loss");
    }
    {  // Summed policy log-probability of sampled sequences.
      ad::Tape tape;
      const auto vars = models::bind_policy(tape, in.policy, s);
      const auto steps = models::policy_logprobs_tape(tape, vars, s, in.scene, seqs);
      ad::Var total = ad::sum(steps[0]);
      for (std::size_t t = 1; t < steps.size(); ++t) total = total + ad::sum(steps[t]);
      tally.add(ad::finite_diff_check(tape, total, kFdStep, kFdTolerance), tag + " policy_logprob");
    }
    {  // Ratio-weighted tool term with off-policy ratios (ratios are detached,
       // so only tool coordinates are differentiated).
      ad::Tape tape;
      const auto pvars = models::bind_policy(tape, in.policy, s);
      const auto tvars = models::bind_tool(tape, in.tool);
      const auto steps = models::policy_logprobs_tape(tape, pvars, s, in.scene, seqs);
      Rng jitter = Rng::keyed(k, "fd_old");
      std::vector<Tensor> old;
      for (const auto& v : steps) {
        Tensor o = v.value();
        for (auto& x : o.values()) x += 0.2 * (jitter.uniform() - 0.5);
        old.push_back(o);
      }
      const auto ratios = objectives::detached_sequence_ratios(tape, steps, old);
      auto losses = seg_losses(tape, tvars, in, prompts);
      if (std::none_of(losses.begin(), losses.end(), [](const auto& l) { return l.has_value(); })) {
        losses.front() = objectives::seg_loss(
            models::tool_forward_tape(tape, tvars, s, in.scene, env::oracle_prompt(in.scene)), in.scene.official_gt());
      }
      const auto term = objectives::grto_tool_term(tape, ratios, losses);
      std::vector<std::string> names;
      for (const auto& [name, t] : in.tool) names.push_back(name);
      tally.add(ad::finite_diff_check(tape, term, kFdStep, kFdTolerance, names), tag + " grto_tool_term");
    }
    {  // Self-normalized BTO objective.
      const auto space = oracle::enumerate_space(in.policy, in.tool, s, in.scene);
      ad::Tape tape;
      const auto vars = models::bind_tool(tape, in.tool);
      std::vector<double> rewards;
      std::vector<std::optional<env::ToolPrompt>> ps;
      Rng pick = Rng::keyed(k, "fd_bto");
      for (std::size_t i = 0; i < 8; ++i) {
        const auto idx = oracle::sample_index(space, pick);
        rewards.push_back(space.rewards[idx]);
        ps.push_back(space.prompts[idx]);
      }
      const auto j = objectives::bto_objective(tape, objectives::bto_weights(rewards, 0.5), seg_losses(tape, vars, in, ps));
      tally.add(ad::finite_diff_check(tape, j, kFdStep, kFdTolerance), tag + " bto_objective");
    }
  }
  return {tally.failures == 0 && tally.checks == 80,
          std::to_string(tally.checks - tally.failures) + "/" + std::to_string(tally.checks) +
              " checks pass; worst rel err " + g6(tally.worst) + " (" + tally.where + "), tol 1e-05"};
}

// ---------------------------------------------------------------- 2, 3: advantages and weights

std::vector<double> random_rewards(Rng& rng, std::size_t g) {
  std::vector<double> r(g);
  for (auto& v : r) v = rng.uniform();
  return r;
}

Verdict criterion_advantages() {
  Rng rng = Rng::keyed(2, "advantage_suite");
  double worst_mean = 0.0;
  double worst_std = 0.0;
  double worst_affine = 0.0;
  bool degenerate_ok = true;
  for (std::size_t trial = 0; trial < 2000; ++trial) {
    const std::size_t g = 2 + rng.uniform_index(31);
    const auto r = random_rewards(rng, g);
    const auto a = objectives::compute_advantages(r);
    if (a.degenerate) continue;
    const double mean = std::accumulate(a.advantages.begin(), a.advantages.end(), 0.0) / static_cast<double>(g);
    double var = 0.0;
    for (double x : a.advantages) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(g));
    worst_mean = std::max(worst_mean, std::abs(mean));
    worst_std = std::max(worst_std, std::abs(sd - 1.0));

    const double scale = std::exp(4.0 * rng.uniform() - 2.0);
    const double shift = 10.0 * rng.uniform() - 5.0;
    std::vector<double> t(r);
    for (auto& x : t) x = scale * x + shift;
    const auto b = objectives::compute_advantages(t);
    for (std::size_t i = 0; i < g; ++i) worst_affine = std::max(worst_affine, std::abs(a.advantages[i] - b.advantages[i]));

    const std::vector<double> flat(g, r.front());
    const auto d = objectives::compute_advantages(flat);
    degenerate_ok = degenerate_ok && d.degenerate &&
                    std::all_of(d.advantages.begin(), d.advantages.end(), [](double x) { return x == 0.0; });
  }
  const bool pass = worst_mean <= 1e-12 && worst_std <= 1e-9 && worst_affine <= 1e-9 && degenerate_ok;
  return {pass, "max |mean| " + g6(worst_mean) + " (<=1e-12), max |std-1| " + g6(worst_std) +
                    " (<=1e-9), affine drift " + g6(worst_affine) + " (<=1e-9), degenerate groups zero: " +
                    (degenerate_ok ? "yes" : "no")};
}

Verdict criterion_weights() {
  Rng rng = Rng::keyed(3, "weight_suite");
  double worst_sum = 0.0;
  double worst_uniform = 0.0;
  double worst_argmax = 1.0;
  double worst_hot = 0.0;
  for (std::size_t trial = 0; trial < 2000; ++trial) {
    const std::size_t g = 2 + rng.uniform_index(31);
    auto r = random_rewards(rng, g);
    const double beta = std::exp(10.0 * rng.uniform() - 7.0);
    const auto w = objectives::bto_weights(r, beta).weights;
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0));

    const std::vector<double> flat(g, r.front());
    for (double x : objectives::bto_weights(flat, beta).weights) {
      worst_uniform = std::max(worst_uniform, std::abs(x - 1.0 / static_cast<double>(g)));
    }

    // Enforce a gap of at least 0.1 between the best reward and the rest.
    const auto best = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    for (std::size_t i = 0; i < g; ++i) {
      if (i != best) r[i] = std::min(r[i], r[best] - 0.1);
    }
    worst_argmax = std::min(worst_argmax, objectives::bto_weights(r, 1e-4).weights[best]);
    for (double x : objectives::bto_weights(r, 1e6).weights) {
      worst_hot = std::max(worst_hot, std::abs(x - 1.0 / static_cast<double>(g)));
    }
  }
  const bool pass = worst_sum <= 1e-12 && worst_uniform <= 1e-12 && worst_argmax >= 1.0 - 1e-10 && worst_hot < 1e-6;
  return {pass, "max |sum-1| " + g6(worst_sum) + " (<=1e-12), equal-reward deviation " + g6(worst_uniform) +
                    ", min argmax mass at beta=1e-4 " + fmt("%.12f", worst_argmax) + " (>=1-1e-10), max deviation at beta=1e6 " +
                    g6(worst_hot) + " (<1e-6)"};
}

// ---------------------------------------------------------------- 4, 5, 6: oracle

Verdict criterion_identity() {
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 50; ++k) {
    const auto in = oracle::make_micro_instance(mix64(k));
    const auto space = oracle::enumerate_space(in.policy, in.tool, in.shapes, in.scene);
    for (double beta : {0.05, 0.5, 5.0}) {
      const auto r = oracle::identity_check(space, beta, "identity");
      worst = std::max(worst, std::abs(r.value - r.reference));
    }
  }
  return {worst <= 1e-10, "50 instances x beta {0.05, 0.5, 5}: max |J(p*) - beta ln Z| " + g6(worst) + " (<=1e-10)"};
}

Verdict criterion_optimality() {
  std::size_t trials = 0;
  std::size_t passes = 0;
  double worst_gap = -std::numeric_limits<double>::infinity();
  for (std::uint64_t k = 0; k < 10; ++k) {
    const auto in = oracle::make_micro_instance(mix64(k));
    const auto space = oracle::enumerate_space(in.policy, in.tool, in.shapes, in.scene);
    const auto rep = oracle::posterior_optimality_check(space, 0.5, 100, Rng::keyed(0, "optimality", {k}));
    trials += rep.trials;
    passes += rep.passes;
    worst_gap = std::max(worst_gap, rep.worst_gap);
  }
  return {trials == 1000 && passes == trials,
          std::to_string(passes) + "/" + std::to_string(trials) + " perturbed distributions stay below J(p*); worst gap " +
              g6(worst_gap) + " (<=1e-12)"};
}

Verdict criterion_estimator() {
  const oracle::SuiteOptions o;
  const auto in = oracle::make_micro_instance(mix64(o.seed));
  const auto space = oracle::enumerate_space(in.policy, in.tool, in.shapes, in.scene);
  const auto exact = oracle::exact_bto_gradient(space, in.tool, in.shapes, in.scene, o.mc_beta);
  const auto mc = oracle::monte_carlo_bto_gradient(space, in.tool, in.shapes, in.scene, o.mc_beta, 10000, 8,
                                                   Rng::keyed(o.seed, "bto_mc"));
  const auto cmp = oracle::compare_gradients(exact, mc);
  return {cmp.outside_3se == 0 && cmp.max_relative_error <= 0.02,
          "10000 groups of G=8, beta " + g6(o.mc_beta) + ": " + std::to_string(cmp.outside_3se) + "/" +
              std::to_string(cmp.coordinates) + " coordinates outside 3 SE (max z " + g6(cmp.max_z) +
              "), max rel err " + g6(cmp.max_relative_error) + " on |exact|>1e-4 (<=0.02)"};
}

// ---------------------------------------------------------------- 7: GRPO mechanics

Verdict criterion_grpo() {
  const models::Shapes shapes{env::EnvConfig{}, models::ModelConfig{}};
  const auto reference = models::policy_init(1, shapes);
  const auto tool0 = models::tool_init(1, shapes);
  schedules::TrainConfig cfg;
  cfg.check_invariants = false;

  // On-policy ratios across policy-only and joint steps.
  double worst_ratio = 0.0;
  double worst_kl_at_ref = 0.0;
  double min_kl = std::numeric_limits<double>::infinity();
  auto policy = reference;
  auto tool = tool0;
  auto popt = optim::make_optimizer(policy);
  auto topt = optim::make_optimizer(tool);
  const auto opts = schedules::reward_options(cfg);
  for (std::uint64_t step = 0; step < 30; ++step) {
    const auto scene = env::generate_scene(schedules::train_scene_seed(7, 0, step), env::Domain::kTarget, shapes.env);
    const Rng rng = Rng::keyed(7, "rollout", {step});
    std::vector<schedules::SceneGroup> batch;
    if (step % 2 == 0) {
      batch.push_back({scene, rollout::sample_group(policy, reference, tool, shapes, scene, 8, rng, opts)});
      const auto st = schedules::train_step_grpo(batch, policy, popt, shapes, cfg);
      worst_ratio = std::max(worst_ratio, st.max_ratio_deviation);
    } else {
      batch.push_back({scene, rollout::sample_rollouts(policy, reference, shapes, scene, 8, 1.0, rng)});
      const auto st = schedules::train_step_grto(batch, policy, tool, popt, topt, shapes, cfg);
      worst_ratio = std::max(worst_ratio, st.max_ratio_deviation);
    }
    if (step == 0) {
      // First group was sampled at theta == theta_0: the KL term vanishes.
      for (const auto& r : batch.front().group.rollouts) {
        worst_kl_at_ref = std::max(worst_kl_at_ref, std::abs(objectives::kl_estimate(r.logprobs_old, r.logprobs_ref, 7)));
      }
    }
    for (const auto& r : batch.front().group.rollouts) {
      min_kl = std::min(min_kl, objectives::kl_estimate(r.logprobs_old, r.logprobs_ref, 7));
    }
  }

  // Tape-level KL at theta == theta_0 has zero value and zero gradient.
  const auto scene = env::generate_scene(11, env::Domain::kTarget, shapes.env);
  const auto samples = models::policy_sample(reference, shapes, scene, 8, 1.0, Rng(3));
  std::vector<env::TokenSeq> seqs;
  for (const auto& x : samples) seqs.push_back(x.tokens);
  {
    ad::Tape tape;
    const auto vars = models::bind_policy(tape, reference, shapes);
    const auto steps = models::policy_logprobs_tape(tape, vars, shapes, scene, seqs);
    std::vector<Tensor> ref;
    for (const auto& v : steps) ref.push_back(v.value());
    const auto kl = ad::sum(objectives::kl_estimate(tape, steps, ref, 7));
    worst_kl_at_ref = std::max(worst_kl_at_ref, std::abs(kl.item()));
    worst_kl_at_ref = std::max(worst_kl_at_ref, global_norm(tape.backward(kl)));
  }

  // Random KL inputs stay non-negative.
  Rng rng = Rng::keyed(7, "kl_suite");
  for (std::size_t trial = 0; trial < 10000; ++trial) {
    const std::vector<double> cur{-5.0 * rng.uniform(), -5.0 * rng.uniform()};
    const std::vector<double> ref{-5.0 * rng.uniform(), -5.0 * rng.uniform()};
    min_kl = std::min(min_kl, objectives::kl_estimate(cur, ref, 7));
  }

  // Clip-branch tokens: zero analytic gradient and no response to perturbation.
  const double eps = cfg.eps_clip;
  std::size_t clipped = 0;
  std::size_t clip_violations = 0;
  std::size_t live_zero = 0;
  for (std::size_t trial = 0; trial < 200; ++trial) {
    const std::size_t g = 4;
    const std::size_t len = 3;
    std::vector<Tensor> cur_v;
    std::vector<Tensor> old;
    std::vector<Tensor> ref;
    std::vector<std::vector<int>> region(len, std::vector<int>(g, 0));
    std::vector<double> adv(g);
    for (auto& a : adv) a = rng.bernoulli(0.5) ? 0.5 + rng.uniform() : -0.5 - rng.uniform();
    for (std::size_t t = 0; t < len; ++t) {
      Tensor c({g});
      Tensor o({g});
      for (std::size_t i = 0; i < g; ++i) {
        c[i] = -0.5 - 2.0 * rng.uniform();
        const double u = rng.uniform();
        // Ratio inside (1 - eps, 1 + eps) or past the clip edge on the advantage's side.
        const double ratio = u < 0.5 ? 1.0 + eps * (1.6 * rng.uniform() - 0.8)
                                     : (adv[i] > 0 ? 1.0 + eps * (1.5 + rng.uniform()) : 1.0 - eps * (1.5 + 0.5 * rng.uniform()));
        region[t][i] = u < 0.5 ? 0 : 1;
        o[i] = c[i] - std::log(ratio);
      }
      cur_v.push_back(c);
      old.push_back(o);
      ref.push_back(o);
    }
    auto objective = [&](const std::vector<Tensor>& cv, NamedParams* grads) {
      ad::Tape tape;
      std::vector<ad::Var> cur;
      for (std::size_t t = 0; t < len; ++t) cur.push_back(tape.param("lp" + std::to_string(t), cv[t]));
      objectives::GrpoInputs in{cur, old, ref, adv, 0.0, eps, len};
      const auto terms = objectives::grpo_objective(tape, in);
      if (grads) *grads = tape.backward(terms.surrogate);
      return terms.surrogate.item();
    };
    NamedParams grads;
    const double base = objective(cur_v, &grads);
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t i = 0; i < g; ++i) {
        const double gi = grads.at("lp" + std::to_string(t))[i];
        if (region[t][i] == 1) {
          ++clipped;
          auto bumped = cur_v;
          bumped[t][i] += 1e-4;
          const double moved = objective(bumped, nullptr) - base;
          if (gi != 0.0 || moved != 0.0) ++clip_violations;
        } else if (gi == 0.0) {
          ++live_zero;
        }
      }
    }
  }

  const bool pass = worst_ratio <= 1e-12 && min_kl >= 0.0 && worst_kl_at_ref == 0.0 && clip_violations == 0 &&
                    live_zero == 0 && clipped > 0;
  return {pass, "max |ratio-1| over 30 on-policy steps " + g6(worst_ratio) + " (<=1e-12); " + std::to_string(clipped) +
                    " clipped tokens, " + std::to_string(clip_violations) + " with nonzero gradient or response; min KL " +
                    g6(min_kl) + " (>=0), KL value+grad at theta_0 " + g6(worst_kl_at_ref) + " (=0)"};
}

// ---------------------------------------------------------------- 8-11: desk-scale runs

struct Artifacts {
  config::RunConfig cfg;
  std::optional<models::Shapes> shapes;
  models::ToolParams tool0;
  models::PolicyParams policy0;
  std::vector<env::GridScene> test_scenes;
  double ceiling = 0.0;
  double pretrain_s = 0.0;
};

Artifacts& artifacts() {
  static Artifacts a;
  return a;
}

const Artifacts& pretrained() {
  auto& a = artifacts();
  if (!a.shapes) {
    const auto t0 = Clock::now();
    a.shapes.emplace(pipeline::shapes_for(a.cfg));
    a.tool0 = pipeline::pretrain_tool(a.cfg);
    a.test_scenes = pipeline::eval_scenes(a.cfg);
    a.pretrain_s = seconds_since(t0);
  }
  return a;
}

Verdict criterion_ceiling() {
  const auto& a = pretrained();
  const auto report = pipeline::ceiling_check(a.tool0, *a.shapes, a.test_scenes);
  artifacts().ceiling = report.mean_ceiling;
  const double gap = std::abs(report.mean_iou - report.mean_ceiling);
  return {gap <= 0.03, "oracle-prompt IoU " + fmt("%.4f", report.mean_iou) + " vs analytic ceiling " +
                           fmt("%.4f", report.mean_ceiling) + " over " + std::to_string(report.scenes) +
                           " target scenes; |gap| " + fmt("%.4f", gap) + " (<=0.03)"};
}

struct RunSummary {
  double test_giou = 0.0;
  double seconds = 0.0;
  /// Validation gIoU per epoch of the final stage, epoch 0 first.
  std::vector<double> val_giou;
  double bto_wall_ms = 0.0;
  std::vector<double> epoch_wall_ms;
};

struct Study {
  std::size_t seeds = 0;
  std::map<std::string, std::vector<RunSummary>> runs;
  double setup_s = 0.0;
  double max_run_s = 0.0;
  bool done = false;
};

Study& study() {
  static Study s;
  return s;
}

const std::vector<std::string> kModes = {"grpo", "grto", "b_grto", "b_grpo"};

const Study& run_study(std::size_t seeds) {
  auto& st = study();
  if (st.done) return st;
  const auto t0 = Clock::now();
  auto& a = artifacts();
  pretrained();
  if (a.ceiling == 0.0) {
    for (const auto& s : a.test_scenes) a.ceiling += env::erosion_ceiling(s.target().rect);
    a.ceiling /= static_cast<double>(a.test_scenes.size());
  }
  a.policy0 = pipeline::warmup_policy(a.cfg);
  const auto buffer = pipeline::build_buffer(a.cfg, a.policy0, a.tool0, "");
  st.setup_s = seconds_since(t0) + a.pretrain_s;
  std::printf("  setup: pretrain %.1fs, warmup + buffer %.1fs\n", a.pretrain_s, seconds_since(t0));

  schedules::RunContext ctx{*a.shapes, a.policy0, a.tool0, schedules::validation_scenes(a.cfg.train, a.cfg.env),
                            &buffer, nullptr, {}};
  const auto opts = schedules::reward_options(a.cfg.train);
  st.seeds = seeds;
  for (std::size_t seed = 0; seed < seeds; ++seed) {
    for (const auto& mode : kModes) {
      auto cfg = a.cfg.train;
      cfg.mode = schedules::parse_mode(mode);
      cfg.seed = seed;
      const auto r0 = Clock::now();
      const auto result = schedules::run_mode(ctx, cfg);
      RunSummary s;
      s.seconds = seconds_since(r0);
      s.test_giou = metrics::evaluate(result.policy, result.tool, *a.shapes, a.test_scenes, opts).giou;
      const auto& last = result.stages.back().second;
      for (const auto& v : last.validation) s.val_giou.push_back(v.giou);
      s.epoch_wall_ms = last.epoch_wall_ms;
      if (const auto* bto = result.stage("bto")) s.bto_wall_ms = bto->wall_ms;
      st.max_run_s = std::max(st.max_run_s, s.seconds);
      std::printf("  seed %zu %-7s test gIoU %.4f  selected %s epoch %zu  %.1fs\n", seed, mode.c_str(), s.test_giou,
                  result.selected.stage.c_str(), result.selected.epoch, s.seconds);
      std::fflush(stdout);
      st.runs[mode].push_back(std::move(s));
    }
  }
  st.done = true;
  return st;
}

double median_giou(const Study& st, const std::string& mode) {
  std::vector<double> v;
  for (const auto& r : st.runs.at(mode)) v.push_back(r.test_giou);
  return median(v);
}

std::size_t g_seeds = 5;

Verdict criterion_ordering() {
  const auto& st = run_study(g_seeds);
  const double grpo = median_giou(st, "grpo");
  const double grto = median_giou(st, "grto");
  const double bgrto = median_giou(st, "b_grto");
  const double ceiling = artifacts().ceiling;
  const int epochs = static_cast<int>(artifacts().cfg.train.epochs);
  const bool pass = st.seeds >= 5 && epochs >= 30 && bgrto >= grto && grto >= grpo && bgrto - grpo >= 0.05 &&
                    grpo <= ceiling + 0.02 && st.max_run_s <= 600.0;
  return {pass, "median test gIoU over " + std::to_string(st.seeds) + " seeds x " + std::to_string(epochs) +
                    " epochs: B-GRTO " + fmt("%.4f", bgrto) + " >= GRTO " + fmt("%.4f", grto) + " >= GRPO " +
                    fmt("%.4f", grpo) + "; B-GRTO - GRPO " + fmt("%+.4f", bgrto - grpo) + " (>=+0.05); GRPO <= ceiling " +
                    fmt("%.4f", ceiling) + " + 0.02; slowest run " + fmt("%.1f", st.max_run_s) + "s (<=600s)"};
}

Verdict criterion_bootstrap() {
  const auto& st = run_study(g_seeds);
  const double grpo = median_giou(st, "grpo");
  const double bgrpo = median_giou(st, "b_grpo");
  const double bgrto = median_giou(st, "b_grto");
  const bool pass = st.seeds >= 5 && bgrpo >= grpo + 0.02 && bgrto >= bgrpo;
  return {pass, "median test gIoU: B-GRPO " + fmt("%.4f", bgrpo) + " vs GRPO " + fmt("%.4f", grpo) + " (" +
                    fmt("%+.4f", bgrpo - grpo) + ", >=+0.02); B-GRTO " + fmt("%.4f", bgrto) + " >= B-GRPO"};
}

/// First epoch whose validation gIoU reaches `target`; series.size() when never.
std::size_t epochs_to_reach(const std::vector<double>& series, double target) {
  for (std::size_t e = 0; e < series.size(); ++e) {
    if (series[e] >= target) return e;
  }
  return series.size();
}

Verdict criterion_convergence() {
  const auto& st = run_study(g_seeds);
  std::size_t wins = 0;
  std::string per_seed;
  std::vector<double> bto_ms;
  std::vector<double> grto_epoch_ms;
  for (std::size_t seed = 0; seed < st.seeds; ++seed) {
    const auto& grto = st.runs.at("grto")[seed];
    const auto& bgrto = st.runs.at("b_grto")[seed];
    const double target = 0.9 * grto.val_giou.back();
    const auto eg = epochs_to_reach(grto.val_giou, target);
    const auto eb = epochs_to_reach(bgrto.val_giou, target);
    wins += eb < eg;
    per_seed += (per_seed.empty() ? "" : ", ") + std::to_string(eb) + " vs " + std::to_string(eg);
    bto_ms.push_back(bgrto.bto_wall_ms);
    grto_epoch_ms.insert(grto_epoch_ms.end(), grto.epoch_wall_ms.begin(), grto.epoch_wall_ms.end());
  }
  const double bto = median(bto_ms);
  const double epoch = median(grto_epoch_ms);
  const bool pass = st.seeds >= 5 && wins >= 3 && bto <= 2.0 * epoch;
  return {pass, "epochs to 90% of GRTO's final validation gIoU, B-GRTO second stage vs GRTO per seed [" + per_seed +
                    "]: B-GRTO faster in " + std::to_string(wins) + "/" + std::to_string(st.seeds) +
                    " (>=3); BTO stage " + fmt("%.0f", bto) + " ms vs 2 x GRTO epoch " + fmt("%.0f", 2.0 * epoch) + " ms"};
}

// ---------------------------------------------------------------- 12: determinism and persistence

Verdict criterion_persistence() {
  TempDir dir("acceptance");
  config::RunConfig cfg;
  cfg.train.epochs = 2;
  cfg.train.scenes_per_epoch = 8;
  cfg.train.validation.scenes = 8;
  cfg.train.mode = schedules::Mode::kGrto;
  const models::Shapes shapes = pipeline::shapes_for(cfg);
  const auto policy0 = models::policy_init(1, shapes);
  const auto tool0 = models::tool_init(1, shapes);

  std::vector<std::string> problems;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  };

  // Identical config and seed give a byte-identical metrics log.
  schedules::RunResult last;
  auto run = [&](const fs::path& csv) {
    metrics::CsvSink sink(csv);
    schedules::RunContext ctx{shapes, policy0, tool0, schedules::validation_scenes(cfg.train, cfg.env), nullptr, &sink, {}};
    last = schedules::run_mode(ctx, cfg.train);
    sink.flush();
    return io::read_file(csv);
  };
  const std::string a = run(dir / "a.csv");
  const std::string b = run(dir / "b.csv");
  expect(a == b && !a.empty(), "metrics CSV differs between identical runs");

  // Checkpoint round trip and rejection.
  const auto ck = pipeline::make_checkpoint(cfg, {"run", "grto", "grto", 2, 0, 0.5}, &last.policy, &last.tool);
  checkpoint::save_checkpoint(dir / "x.ckpt", ck);
  const auto back = checkpoint::load_checkpoint(dir / "x.ckpt", cfg.compat_hash());
  expect(checkpoint::bit_equal(ck, back), "checkpoint round trip is not bit-exact");
  const std::string bytes = io::read_file(dir / "x.ckpt");
  auto ckpt_rejects = [&](std::string corrupted, const std::string& what) {
    io::atomic_write(dir / "bad.ckpt", corrupted);
    try {
      checkpoint::load_checkpoint(dir / "bad.ckpt", cfg.compat_hash());
      problems.push_back("accepted checkpoint with " + what);
    } catch (const FormatError&) {
    }
  };
  std::string flipped = bytes;
  flipped[1] ^= 0x20;
  ckpt_rejects(flipped, "flipped magic");
  ckpt_rejects(bytes.substr(0, bytes.size() - 3), "truncated tail");
  std::string bad_version = bytes;
  bad_version[6] = 9;
  ckpt_rejects(bad_version, "wrong version");
  config::RunConfig other = cfg;
  other.model.tool_hidden += 1;
  try {
    checkpoint::load_checkpoint(dir / "x.ckpt", other.compat_hash());
    problems.push_back("accepted checkpoint with a foreign config hash");
  } catch (const FormatError&) {
  }

  // Buffer round trip and rejection.
  rollout::BufferOptions bo;
  bo.seed = 7;
  const auto buf = rollout::build_replay_buffer(policy0, tool0, shapes, schedules::buffer_scene_seeds(7, 8), bo,
                                                dir / "buffer.jsonl");
  const auto loaded = rollout::load_buffer(dir / "buffer.jsonl", cfg.env);
  expect(rollout::same_content(buf, loaded), "buffer round trip is not bit-exact");
  rollout::save_buffer(loaded, dir / "buffer2.jsonl");
  expect(io::read_file(dir / "buffer.jsonl") == io::read_file(dir / "buffer2.jsonl"), "buffer re-save differs");
  const std::string text = io::read_file(dir / "buffer.jsonl");
  auto buffer_rejects = [&](const std::string& corrupted, const std::string& what) {
    io::atomic_write(dir / "bad.jsonl", corrupted);
    try {
      rollout::load_buffer(dir / "bad.jsonl", cfg.env);
      problems.push_back("accepted buffer with " + what);
    } catch (const FormatError&) {
    }
  };
  buffer_rejects(text.substr(0, text.size() - 10), "truncated line");
  buffer_rejects(text.substr(0, text.rfind('\n', text.size() - 2) + 1), "missing group");
  std::string garbled = text;
  garbled[text.find("\"tokens\":[") + 10] = 'x';
  buffer_rejects(garbled, "garbled tokens");
  env::EnvConfig env2 = cfg.env;
  env2.max_side -= 1;
  try {
    rollout::load_buffer(dir / "buffer.jsonl", env2);
    problems.push_back("accepted buffer with a foreign env hash");
  } catch (const FormatError&) {
  }

  std::string detail = "identical reruns give byte-identical metrics CSV (" + std::to_string(a.size()) +
                       " bytes); checkpoint and buffer round trips bit-exact; 8 corruptions rejected";
  if (!problems.empty()) {
    detail = "problems:";
    for (const auto& p : problems) detail += " " + p + ";";
  }
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--seeds", g_seeds, "Seeds for the end-to-end study (criteria 9-11 need >= 5)");
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", 10, criterion_gradients},
      {2, "advantage suite", 1, criterion_advantages},
      {3, "BTO weight suite", 1, criterion_weights},
      {4, "oracle identity", 30, criterion_identity},
      {5, "posterior optimality", 30, criterion_optimality},
      {6, "BTO estimator consistency", 300, criterion_estimator},
      {7, "GRPO mechanics", 10, criterion_grpo},
      {8, "frozen-tool ceiling", 120, criterion_ceiling},
      {9, "end-to-end ordering", 0, criterion_ordering},
      {10, "bootstrapping value", 0, criterion_bootstrap},
      {11, "convergence", 0, criterion_convergence},
      {12, "determinism and persistence", 60, criterion_persistence},
  };

  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double s = seconds_since(t0);
    const bool in_budget = c.budget == 0 || s < c.budget;
    const bool pass = v.pass && in_budget;
    failures += !pass;
    std::string timing = fmt("%.2fs", s);
    if (c.budget > 0) timing += " < " + g6(c.budget) + "s" + (in_budget ? "" : " EXCEEDED");
    std::printf("criterion %2d [PRIMARY] %s  %s: %s [%s]\n", c.id, pass ? "PASS" : "FAIL", c.title.c_str(),
                v.detail.c_str(), timing.c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance: %d failing criteria\n", failures);
  return failures == 0 ? 0 : 1;
}
