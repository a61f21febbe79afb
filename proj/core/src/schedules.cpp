#include "bgrto/schedules.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "bgrto/errors.hpp"

namespace bgrto::schedules {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

constexpr std::array<std::string_view, 6> kModeNames = {"grpo",   "grto",        "b_grto",
                                                        "b_grpo", "reverse_seq", "grto_no_filter"};

// Step-major log-probabilities of a group: result[t] has one entry per rollout.
std::vector<Tensor> per_step(const rollout::Group& g, bool reference) {
  const std::size_t steps = g.rollouts.front().tokens.size();
  std::vector<Tensor> out;
  out.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor v({g.rollouts.size()}, 0.0);
    for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
      v[i] = reference ? g.rollouts[i].logprobs_ref[t] : g.rollouts[i].logprobs_old[t];
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<env::TokenSeq> sequences(const rollout::Group& g) {
  std::vector<env::TokenSeq> s;
  s.reserve(g.rollouts.size());
  for (const auto& r : g.rollouts) s.push_back(r.tokens);
  return s;
}

double ratio_deviation(std::span<const ad::Var> current, std::span<const Tensor> old) {
  double worst = 0.0;
  for (std::size_t t = 0; t < current.size(); ++t) {
    const Tensor& c = current[t].value();
    for (std::size_t i = 0; i < c.size(); ++i) worst = std::max(worst, std::abs(std::exp(c[i] - old[t][i]) - 1.0));
  }
  return worst;
}

void require_zero(const NamedParams& grads, const NamedParams& like, const char* what) {
  for (const auto& [name, _] : like) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    for (double v : it->second.values()) {
      if (v != 0.0) throw StateError(std::string(what) + " leaks gradient into '" + name + "'");
    }
  }
}

// Tool logits and segmentation losses for the valid rollouts of one group.
// Rollouts with identical prompts share one forward pass.
struct ToolEval {
  std::vector<ad::Var> logits;
  std::vector<std::optional<ad::Var>> losses;
  std::vector<const Tensor*> values;
};

ToolEval evaluate_tool(ad::Tape& tape, const models::ToolVars& vars, const models::Shapes& shapes,
                       const env::GridScene& scene, const rollout::Group& group) {
  ToolEval ev;
  std::vector<std::size_t> owner;
  std::vector<ad::Var> unique_loss;
  ev.losses.resize(group.rollouts.size());
  std::vector<std::size_t> slot(group.rollouts.size(), 0);
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const auto& r = group.rollouts[i];
    if (!r.valid) continue;
    std::size_t k = 0;
    while (k < owner.size() && *group.rollouts[owner[k]].prompt != *r.prompt) ++k;
    if (k == owner.size()) {
      ad::Var logits = models::tool_forward_tape(tape, vars, shapes, scene, *r.prompt);
      ev.logits.push_back(logits);
      unique_loss.push_back(objectives::seg_loss(logits, scene.official_gt()));
      owner.push_back(i);
    }
    slot[i] = k;
    ev.losses[i] = unique_loss[k];
  }
  ev.values.assign(group.rollouts.size(), nullptr);
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    if (group.rollouts[i].valid) ev.values[i] = &ev.logits[slot[i]].value();
  }
  return ev;
}

std::vector<std::size_t> shuffled(std::size_t n, Rng rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  return order;
}

metrics::EvalReport batch_samples(std::span<const SceneGroup> batch) {
  std::vector<objectives::RewardBreakdown> all;
  for (const auto& sg : batch) {
    for (const auto& r : sg.group.rollouts) all.push_back(r.reward);
  }
  return metrics::summarize(all);
}

std::string stage_label(Mode mode, const std::string& stage) {
  const std::string m(to_string(mode));
  return m == stage ? m : m + ":" + stage;
}

// Keeps the best record (max metric, earliest on ties) and its parameters.
struct Selector {
  std::vector<CheckpointRecord> records;
  std::vector<metrics::EvalReport> reports;
  models::PolicyParams best_policy;
  models::ToolParams best_tool;
  std::optional<CheckpointRecord> best;

  void offer(const RunContext& ctx, const std::string& stage, std::size_t epoch, double metric,
             const metrics::EvalReport& report, const models::PolicyParams& policy, const models::ToolParams& tool) {
    CheckpointRecord rec{stage, epoch, metric, ""};
    if (ctx.checkpoint) rec.path = ctx.checkpoint(stage, epoch, policy, tool, metric);
    records.push_back(rec);
    reports.push_back(report);
    if (!best || metric > best->metric) {
      best = rec;
      best_policy = policy;
      best_tool = tool;
    }
  }

  StageResult finish(double wall_ms, std::vector<double> epoch_ms) {
    StageResult r;
    r.policy = std::move(best_policy);
    r.tool = std::move(best_tool);
    r.records = std::move(records);
    r.validation = std::move(reports);
    r.selected = *best;
    r.wall_ms = wall_ms;
    r.epoch_wall_ms = std::move(epoch_ms);
    return r;
  }
};

struct StageSetup {
  std::string name;
  bool joint = false;
  bool filter = true;
  bool train_policy = true;
  double lr_tool = 0.0;
};

StageResult run_policy_stage(const StageSetup& setup, const RunContext& ctx, const TrainConfig& config,
                             models::PolicyParams policy, models::ToolParams tool,
                             std::vector<metrics::MetricsRow>* rows, std::uint64_t& step) {
  const auto t0 = Clock::now();
  const auto& shapes = ctx.shapes;
  const auto options = reward_options(config, setup.filter);
  const std::string label = stage_label(config.mode, setup.name);

  Selector sel;
  auto validate = [&](std::size_t epoch) {
    const auto report = metrics::evaluate(policy, tool, shapes, ctx.validation_scenes, options);
    sel.offer(ctx, setup.name, epoch, report.selection_metric(), report, policy, tool);
  };
  validate(0);

  optim::OptimizerState popt = optim::make_optimizer(policy);
  optim::OptimizerState topt = optim::make_optimizer(tool);
  std::vector<double> epoch_ms;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto e0 = Clock::now();
    for (std::size_t s = 0; s < config.scenes_per_epoch; s += config.groups_per_step) {
      const auto s0 = Clock::now();
      std::vector<SceneGroup> batch;
      for (std::size_t j = s; j < std::min(config.scenes_per_epoch, s + config.groups_per_step); ++j) {
        SceneGroup sg;
        sg.scene = env::generate_scene(train_scene_seed(config.seed, epoch, j), config.domain, shapes.env);
        sg.group = rollout::sample_rollouts(policy, ctx.reference, shapes, sg.scene, config.group_size,
                                            config.temperature, Rng::keyed(config.seed, "rollout", {epoch, j}));
        batch.push_back(std::move(sg));
      }
      StepStats stats;
      if (setup.joint) {
        stats = train_step_grto(batch, policy, tool, popt, topt, shapes,
                                [&] {
                                  TrainConfig c = config;
                                  c.lr_tool = setup.lr_tool;
                                  return c;
                                }(),
                                setup.filter);
      } else {
        for (auto& sg : batch) rollout::score_group(sg.group, sg.scene, tool, shapes, options);
        stats = train_step_grpo(batch, policy, popt, shapes, config);
      }
      ++step;
      const double wall = config.record_wall_ms ? ms_since(s0) : 0.0;
      auto row = metrics::emit_metrics_row(step, epoch, label, stats.samples, stats.policy_obj, stats.tool_loss,
                                           stats.kl, stats.grad_norm_policy, stats.grad_norm_tool, wall, config.seed,
                                           ctx.sink);
      if (rows) rows->push_back(std::move(row));
    }
    if (ctx.sink) ctx.sink->flush();
    validate(epoch);
    epoch_ms.push_back(ms_since(e0));
  }
  return sel.finish(ms_since(t0), std::move(epoch_ms));
}

// Tool fine-tuning on the greedy prompts of a fixed policy with the
// unweighted mean segmentation loss over valid prompts.
StageResult run_reverse_tool_stage(const RunContext& ctx, const TrainConfig& config, const models::PolicyParams& policy,
                                   models::ToolParams tool, std::vector<metrics::MetricsRow>* rows,
                                   std::uint64_t& step) {
  const auto t0 = Clock::now();
  const auto& shapes = ctx.shapes;
  const auto options = reward_options(config, true);
  const std::string label = stage_label(config.mode, "tool");
  const auto val_prompts = metrics::greedy_prompts(policy, shapes, ctx.validation_scenes);

  Selector sel;
  auto validate = [&](std::size_t epoch) {
    const auto report = metrics::evaluate_prompts(val_prompts, tool, shapes, ctx.validation_scenes, options);
    sel.offer(ctx, "tool", epoch, report.selection_metric(), report, policy, tool);
  };
  validate(0);

  optim::OptimizerState topt = optim::make_optimizer(tool);
  const std::size_t batch = std::max<std::size_t>(config.group_size, 1);
  std::vector<double> epoch_ms;
  for (std::size_t epoch = 1; epoch <= config.reverse_seq.epochs; ++epoch) {
    const auto e0 = Clock::now();
    for (std::size_t s = 0; s < config.scenes_per_epoch; s += batch) {
      const auto s0 = Clock::now();
      ad::Tape tape;
      const models::ToolVars vars = models::bind_tool(tape, tool);
      ad::Var total;
      std::size_t valid = 0;
      std::vector<objectives::RewardBreakdown> samples;
      for (std::size_t j = s; j < std::min(config.scenes_per_epoch, s + batch); ++j) {
        const auto scene = env::generate_scene(train_scene_seed(config.seed, epoch, j), config.domain, shapes.env);
        const auto prompt =
            env::parse_action_tokens(models::policy_greedy(policy, shapes, scene).tokens, shapes.grammar);
        if (!prompt) {
          samples.push_back({});
          continue;
        }
        ad::Var logits = models::tool_forward_tape(tape, vars, shapes, scene, *prompt);
        samples.push_back(objectives::reward_from_logits(scene, prompt, &logits.value(), options));
        ad::Var loss = objectives::seg_loss(logits, scene.official_gt());
        total = total.valid() ? total + loss : loss;
        ++valid;
      }
      double tool_loss = 0.0;
      double norm = 0.0;
      if (valid > 0) {
        total = ad::scale(total, 1.0 / static_cast<double>(valid));
        tool_loss = total.item();
        NamedParams grads = optim::select(tape.backward(total), tool);
        norm = optim::clip_global_norm(grads, config.grad_clip_norm);
        optim::adamw_step(tool, grads, topt, config.reverse_seq.lr_tool);
      }
      ++step;
      const double wall = config.record_wall_ms ? ms_since(s0) : 0.0;
      auto row = metrics::emit_metrics_row(step, epoch, label, metrics::summarize(samples), 0.0, tool_loss, 0.0, 0.0,
                                           norm, wall, config.seed, ctx.sink);
      if (rows) rows->push_back(std::move(row));
    }
    if (ctx.sink) ctx.sink->flush();
    validate(epoch);
    epoch_ms.push_back(ms_since(e0));
  }
  return sel.finish(ms_since(t0), std::move(epoch_ms));
}

StageResult run_bto_impl(const rollout::ReplayBuffer& buffer, const RunContext& ctx, const TrainConfig& config,
                         std::vector<metrics::MetricsRow>* rows, std::uint64_t& step) {
  const auto t0 = Clock::now();
  const auto& shapes = ctx.shapes;
  const std::string expected = shapes.env.hash();
  if (buffer.header.env_hash != expected) {
    throw FormatError("replay buffer env hash " + buffer.header.env_hash + " does not match config env hash " +
                      expected);
  }
  const auto options = reward_options(config, true);
  const std::string label = stage_label(config.mode, "bto");
  models::ToolParams tool = ctx.tool0;

  // Validation: greedy reference-policy prompts scored by mean reward.
  const auto val_prompts = metrics::greedy_prompts(ctx.reference, shapes, ctx.validation_scenes);
  Selector sel;
  auto validate = [&](std::size_t epoch) {
    const auto report = metrics::evaluate_prompts(val_prompts, tool, shapes, ctx.validation_scenes, options);
    sel.offer(ctx, "bto", epoch, report.mean_reward, report, ctx.reference, tool);
  };
  validate(0);

  std::vector<env::GridScene> scenes;
  scenes.reserve(buffer.groups.size());
  for (const auto& g : buffer.groups) scenes.push_back(env::generate_scene(g.scene_seed, g.domain, shapes.env));

  std::vector<std::vector<double>> frozen;
  if (config.bto.frozen_rewards) {
    for (std::size_t k = 0; k < buffer.groups.size(); ++k) {
      rollout::Group g = buffer.groups[k];
      rollout::score_group(g, scenes[k], ctx.tool0, shapes, options);
      frozen.push_back(g.rewards());
    }
  }

  optim::OptimizerState topt = optim::make_optimizer(tool);
  std::vector<double> epoch_ms;
  for (std::size_t epoch = 1; epoch <= config.bto.epochs; ++epoch) {
    const auto e0 = Clock::now();
    for (std::size_t k : shuffled(buffer.groups.size(), Rng::keyed(config.seed, "bto_order", {epoch}))) {
      const auto s0 = Clock::now();
      rollout::Group group = buffer.groups[k];
      ad::Tape tape;
      const models::ToolVars vars = models::bind_tool(tape, tool);
      const ToolEval ev = evaluate_tool(tape, vars, shapes, scenes[k], group);
      rollout::score_group(group, scenes[k], ev.values, options);
      const std::vector<double> rewards = config.bto.frozen_rewards ? frozen[k] : group.rewards();
      const auto weights = objectives::bto_weights(rewards, config.bto.beta);
      ad::Var objective = objectives::bto_objective(tape, weights, ev.losses);

      double weighted_loss = 0.0;
      for (std::size_t i = 0; i < ev.losses.size(); ++i) {
        if (ev.losses[i]) weighted_loss += weights.weights[i] * ev.losses[i]->item();
      }
      double norm = 0.0;
      if (!ev.logits.empty()) {
        NamedParams grads = optim::select(tape.backward(ad::scale(objective, -1.0)), tool);
        norm = optim::clip_global_norm(grads, config.grad_clip_norm);
        optim::adamw_step(tool, grads, topt, config.bto.lr_tool);
      }
      ++step;
      const double wall = config.record_wall_ms ? ms_since(s0) : 0.0;
      std::vector<objectives::RewardBreakdown> samples;
      for (const auto& r : group.rollouts) samples.push_back(r.reward);
      auto row = metrics::emit_metrics_row(step, epoch, label, metrics::summarize(samples), objective.item(),
                                           weighted_loss, 0.0, 0.0, norm, wall, config.seed, ctx.sink);
      if (rows) rows->push_back(std::move(row));
    }
    if (ctx.sink) ctx.sink->flush();
    validate(epoch);
    epoch_ms.push_back(ms_since(e0));
  }
  return sel.finish(ms_since(t0), std::move(epoch_ms));
}

}  // namespace

std::string_view to_string(Mode m) noexcept { return kModeNames[static_cast<std::size_t>(m)]; }

Mode parse_mode(std::string_view s) {
  for (std::size_t i = 0; i < kModeNames.size(); ++i) {
    if (kModeNames[i] == s) return static_cast<Mode>(i);
  }
  throw ConfigError("unknown mode '" + std::string(s) +
                    "' (expected grpo, grto, b_grto, b_grpo, reverse_seq or grto_no_filter)");
}

bool is_bootstrapped(Mode m) noexcept { return m == Mode::kBGrto || m == Mode::kBGrpo; }

void TrainConfig::validate() const {
  std::vector<std::string> errs;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) errs.push_back(msg);
  };
  need(lr_policy > 0.0, "lr_policy must be positive");
  need(lr_tool > 0.0, "lr_tool must be positive");
  need(second_stage_tool_lr_scale > 0.0, "second_stage_tool_lr_scale must be positive");
  need(beta_kl >= 0.0, "beta_kl must be >= 0");
  need(eps_clip > 0.0 && eps_clip < 1.0, "eps_clip must lie in (0, 1)");
  need(group_size >= 2, "group_size must be >= 2");
  need(scenes_per_epoch >= 1, "scenes_per_epoch must be >= 1");
  need(groups_per_step >= 1, "groups_per_step must be >= 1");
  need(grad_clip_norm > 0.0, "grad_clip_norm must be positive");
  need(temperature > 0.0, "temperature must be positive");
  need(mask_threshold > 0.0 && mask_threshold < 1.0, "mask_threshold must lie in (0, 1)");
  need(reward_weights.iou >= 0.0 && reward_weights.format >= 0.0, "reward weights must be >= 0");
  need(bto.beta > 0.0, "bto.beta must be positive");
  need(bto.lr_tool > 0.0, "bto.lr_tool must be positive");
  need(bto.buffer_scenes >= 1, "bto.buffer_scenes must be >= 1");
  need(bto.buffer_passes >= 1, "bto.buffer_passes must be >= 1");
  need(bto.group_size == 0 || bto.group_size >= 2, "bto.group_size must be 0 or >= 2");
  need(validation.scenes >= 1, "validation.scenes must be >= 1");
  need(validation.metric == "mean_giou_ciou", "validation.metric must be \"mean_giou_ciou\"");
  need(reverse_seq.lr_tool > 0.0, "reverse_seq.lr_tool must be positive");
  if (!errs.empty()) {
    std::string msg = "invalid train config:";
    for (const auto& e : errs) msg += " " + e + ";";
    throw ConfigError(msg);
  }
}

CheckpointRecord select_best_checkpoint(std::span<const CheckpointRecord> records) {
  if (records.empty()) throw UsageError("select_best_checkpoint: no records");
  const CheckpointRecord* best = &records.front();
  for (const auto& r : records) {
    if (r.metric > best->metric) best = &r;
  }
  return *best;
}

objectives::RewardOptions reward_options(const TrainConfig& config, bool filter_enabled) {
  objectives::RewardOptions o;
  o.filter_enabled = filter_enabled;
  o.threshold = config.mask_threshold;
  o.weights = config.reward_weights;
  return o;
}

std::size_t max_length(const TrainConfig& config, const models::Shapes& shapes) {
  return config.max_length == 0 ? shapes.grammar.length() : config.max_length;
}

StepStats train_step_grpo(std::span<const SceneGroup> batch, models::PolicyParams& policy,
                          optim::OptimizerState& policy_opt, const models::Shapes& shapes,
                          const TrainConfig& config) {
  if (batch.empty()) throw UsageError("train_step_grpo: empty batch");
  ad::Tape tape;
  const models::PolicyVars vars = models::bind_policy(tape, policy, shapes);
  const std::size_t length = max_length(config, shapes);
  StepStats stats;

  ad::Var objective;
  ad::Var kl;
  for (const auto& sg : batch) {
    if (!sg.group.advantages) throw UsageError("train_step_grpo: group has no advantages");
    const auto seqs = sequences(sg.group);
    const auto current = models::policy_logprobs_tape(tape, vars, shapes, sg.scene, seqs);
    const auto old = per_step(sg.group, false);
    const auto ref = per_step(sg.group, true);
    stats.max_ratio_deviation = std::max(stats.max_ratio_deviation, ratio_deviation(current, old));
    objectives::GrpoInputs in{current, old, ref, sg.group.advantages->advantages, config.beta_kl, config.eps_clip,
                              length};
    const auto terms = objectives::grpo_objective(tape, in);
    objective = objective.valid() ? objective + terms.objective : terms.objective;
    kl = kl.valid() ? kl + terms.kl : terms.kl;
  }
  if (config.check_invariants && stats.max_ratio_deviation > 1e-12) {
    throw StateError("on-policy ratio deviates from 1 by " + std::to_string(stats.max_ratio_deviation));
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  objective = ad::scale(objective, inv);
  stats.policy_obj = objective.item();
  stats.kl = kl.item() * inv;

  NamedParams grads = optim::select(tape.backward(ad::scale(objective, -1.0)), policy);
  stats.grad_norm_policy = optim::clip_global_norm(grads, config.grad_clip_norm);
  optim::adamw_step(policy, grads, policy_opt, config.lr_policy);
  stats.samples = batch_samples(batch);
  return stats;
}

StepStats train_step_grto(std::span<SceneGroup> batch, models::PolicyParams& policy, models::ToolParams& tool,
                          optim::OptimizerState& policy_opt, optim::OptimizerState& tool_opt,
                          const models::Shapes& shapes, const TrainConfig& config, bool filter_enabled) {
  if (batch.empty()) throw UsageError("train_step_grto: empty batch");
  ad::Tape tape;
  const models::PolicyVars pvars = models::bind_policy(tape, policy, shapes);
  const models::ToolVars tvars = models::bind_tool(tape, tool);
  const std::size_t length = max_length(config, shapes);
  const auto options = reward_options(config, filter_enabled);
  StepStats stats;

  ad::Var objective;
  ad::Var kl;
  ad::Var tool_term;
  for (auto& sg : batch) {
    const ToolEval ev = evaluate_tool(tape, tvars, shapes, sg.scene, sg.group);
    rollout::score_group(sg.group, sg.scene, ev.values, options);

    const auto seqs = sequences(sg.group);
    const auto current = models::policy_logprobs_tape(tape, pvars, shapes, sg.scene, seqs);
    const auto old = per_step(sg.group, false);
    const auto ref = per_step(sg.group, true);
    stats.max_ratio_deviation = std::max(stats.max_ratio_deviation, ratio_deviation(current, old));
    objectives::GrpoInputs in{current, old, ref, sg.group.advantages->advantages, config.beta_kl, config.eps_clip,
                              length};
    const auto terms = objectives::grpo_objective(tape, in);
    objective = objective.valid() ? objective + terms.objective : terms.objective;
    kl = kl.valid() ? kl + terms.kl : terms.kl;

    ad::Var ratios = objectives::detached_sequence_ratios(tape, current, old);
    ad::Var term = objectives::grto_tool_term(tape, ratios, ev.losses);
    tool_term = tool_term.valid() ? tool_term + term : term;
  }
  if (config.check_invariants && stats.max_ratio_deviation > 1e-12) {
    throw StateError("on-policy ratio deviates from 1 by " + std::to_string(stats.max_ratio_deviation));
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  objective = ad::scale(objective, inv);
  tool_term = ad::scale(tool_term, inv);
  stats.policy_obj = objective.item();
  stats.kl = kl.item() * inv;
  stats.tool_loss = tool_term.item();

  const NamedParams policy_side = tape.backward(ad::scale(objective, -1.0));
  const NamedParams tool_side = tape.backward(tool_term);
  if (config.check_invariants) {
    require_zero(policy_side, tool, "policy objective");
    require_zero(tool_side, policy, "tool objective");
  }
  NamedParams pgrads = optim::select(policy_side, policy);
  NamedParams tgrads = optim::select(tool_side, tool);
  stats.grad_norm_policy = optim::clip_global_norm(pgrads, config.grad_clip_norm);
  stats.grad_norm_tool = optim::clip_global_norm(tgrads, config.grad_clip_norm);
  optim::adamw_step(policy, pgrads, policy_opt, config.lr_policy);
  optim::adamw_step(tool, tgrads, tool_opt, config.lr_tool);
  stats.samples = batch_samples(batch);
  return stats;
}

StageResult run_bto_stage(const rollout::ReplayBuffer& buffer, const RunContext& ctx, const TrainConfig& config,
                          std::vector<metrics::MetricsRow>* rows) {
  std::uint64_t step = 0;
  return run_bto_impl(buffer, ctx, config, rows, step);
}

const StageResult* RunResult::stage(std::string_view name) const {
  for (const auto& [n, s] : stages) {
    if (n == name) return &s;
  }
  return nullptr;
}

RunResult run_mode(const RunContext& ctx, const TrainConfig& config) {
  config.validate();
  if (ctx.validation_scenes.empty()) throw UsageError("run_mode: no validation scenes");
  RunResult out;
  std::uint64_t step = 0;
  auto* rows = &out.rows;

  auto policy_stage = [&](const StageSetup& setup, const models::ToolParams& tool) {
    return run_policy_stage(setup, ctx, config, ctx.reference, tool, rows, step);
  };
  auto bto_stage = [&] {
    if (ctx.buffer == nullptr) {
      throw PrerequisiteError("mode " + std::string(to_string(config.mode)) +
                              " needs a replay buffer; run build-buffer first");
    }
    return run_bto_impl(*ctx.buffer, ctx, config, rows, step);
  };

  switch (config.mode) {
    case Mode::kGrpo:
      out.stages.emplace_back("grpo", policy_stage({"grpo", false, true, true, 0.0}, ctx.tool0));
      break;
    case Mode::kGrto:
      out.stages.emplace_back("grto", policy_stage({"grto", true, true, true, config.lr_tool}, ctx.tool0));
      break;
    case Mode::kGrtoNoFilter:
      out.stages.emplace_back("grto_no_filter",
                              policy_stage({"grto_no_filter", true, false, true, config.lr_tool}, ctx.tool0));
      break;
    case Mode::kBGrto: {
      StageResult bto = bto_stage();
      models::ToolParams boot = bto.tool;
      out.stages.emplace_back("bto", std::move(bto));
      out.stages.emplace_back(
          "grto",
          policy_stage({"grto", true, true, true, config.lr_tool * config.second_stage_tool_lr_scale}, boot));
      break;
    }
    case Mode::kBGrpo: {
      StageResult bto = bto_stage();
      models::ToolParams boot = bto.tool;
      out.stages.emplace_back("bto", std::move(bto));
      out.stages.emplace_back("grpo", policy_stage({"grpo", false, true, true, 0.0}, boot));
      break;
    }
    case Mode::kReverseSeq: {
      StageResult grpo = policy_stage({"grpo", false, true, true, 0.0}, ctx.tool0);
      models::PolicyParams best = grpo.policy;
      out.stages.emplace_back("grpo", std::move(grpo));
      out.stages.emplace_back("tool", run_reverse_tool_stage(ctx, config, best, ctx.tool0, rows, step));
      break;
    }
  }
  const StageResult& last = out.stages.back().second;
  out.policy = last.policy;
  out.tool = last.tool;
  out.selected = last.selected;
  return out;
}

std::uint64_t train_scene_seed(std::uint64_t run_seed, std::uint64_t epoch, std::uint64_t index) {
  return Rng::keyed(run_seed, "train_scene", {epoch, index}).next_u64();
}

std::vector<env::GridScene> validation_scenes(const TrainConfig& config, const env::EnvConfig& env_config) {
  std::vector<env::GridScene> out;
  out.reserve(config.validation.scenes);
  for (std::size_t k = 0; k < config.validation.scenes; ++k) {
    const std::uint64_t seed = Rng::keyed(config.validation.seed, "validation_scene", {k}).next_u64();
    out.push_back(env::generate_scene(seed, config.domain, env_config));
  }
  return out;
}

std::vector<std::uint64_t> buffer_scene_seeds(std::uint64_t seed, std::size_t count) {
  std::vector<std::uint64_t> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(Rng::keyed(seed, "buffer_scene", {k}).next_u64());
  return out;
}

}  // namespace bgrto::schedules
