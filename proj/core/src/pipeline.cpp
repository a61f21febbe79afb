#include "bgrto/pipeline.hpp"

#include "bgrto/errors.hpp"
#include "bgrto/objectives.hpp"
#include "bgrto/schedules.hpp"

namespace bgrto::pipeline {

models::Shapes shapes_for(const config::RunConfig& cfg) { return models::Shapes(cfg.env, cfg.model); }

std::vector<models::SupervisedExample> pretrain_dataset(const config::RunConfig& cfg) {
  std::vector<models::SupervisedExample> out;
  out.reserve(cfg.pretrain.scenes);
  for (std::size_t k = 0; k < cfg.pretrain.scenes; ++k) {
    const auto seed = Rng::keyed(cfg.pretrain.seed, "pretrain_scene", {k}).next_u64();
    auto scene = env::generate_scene(seed, env::Domain::kSource, cfg.env);
    auto prompt = env::oracle_prompt(scene);
    out.push_back({std::move(scene), std::move(prompt)});
  }
  return out;
}

models::ToolParams pretrain_tool(const config::RunConfig& cfg) {
  const auto shapes = shapes_for(cfg);
  const auto dataset = pretrain_dataset(cfg);
  models::PretrainOptions o;
  o.epochs = cfg.pretrain.epochs;
  o.lr = cfg.pretrain.lr;
  o.batch = cfg.pretrain.batch;
  o.seed = cfg.pretrain.seed;
  return models::pretrain_tool(models::tool_init(cfg.pretrain.seed, shapes), shapes, dataset, o);
}

std::vector<models::Demonstration> warmup_demonstrations(const config::RunConfig& cfg) {
  const auto shapes = shapes_for(cfg);
  std::vector<models::Demonstration> out;
  out.reserve(cfg.warmup.demos);
  Rng noise = Rng::keyed(cfg.warmup.seed, "demo");
  for (std::size_t k = 0; k < cfg.warmup.demos; ++k) {
    const auto seed = Rng::keyed(cfg.warmup.seed, "demo_scene", {k}).next_u64();
    auto scene = env::generate_scene(seed, cfg.train.domain, cfg.env);
    auto tokens = env::scripted_demonstration(scene, shapes.grammar, cfg.warmup.noise, noise);
    out.push_back({std::move(scene), std::move(tokens)});
  }
  return out;
}

models::PolicyParams warmup_policy(const config::RunConfig& cfg, std::vector<double>* loss_log) {
  const auto shapes = shapes_for(cfg);
  const auto demos = warmup_demonstrations(cfg);
  models::WarmupOptions o;
  o.epochs = cfg.warmup.epochs;
  o.lr = cfg.warmup.lr;
  o.batch = cfg.warmup.batch;
  o.seed = cfg.warmup.seed;
  o.min_validity = cfg.warmup.min_validity;
  o.loss_log = loss_log;
  for (std::size_t k = 0; k < cfg.warmup.probe_scenes; ++k) {
    const auto seed = Rng::keyed(cfg.warmup.seed, "probe_scene", {k}).next_u64();
    o.probe_scenes.push_back(env::generate_scene(seed, cfg.train.domain, cfg.env));
  }
  return models::warmup_policy(models::policy_init(cfg.warmup.seed, shapes), shapes, demos, o);
}

rollout::ReplayBuffer build_buffer(const config::RunConfig& cfg, const models::PolicyParams& reference,
                                   const models::ToolParams& tool0, const std::string& policy_ckpt) {
  const auto shapes = shapes_for(cfg);
  const auto& bto = cfg.train.bto;
  rollout::BufferOptions o;
  o.group_size = bto.group_size == 0 ? cfg.train.group_size : bto.group_size;
  o.passes = bto.buffer_passes;
  o.seed = bto.buffer_seed;
  o.domain = cfg.train.domain;
  o.policy_ckpt = policy_ckpt;
  o.reward = schedules::reward_options(cfg.train);
  const auto seeds = schedules::buffer_scene_seeds(bto.buffer_seed, bto.buffer_scenes);
  return rollout::build_replay_buffer(reference, tool0, shapes, seeds, o);
}

std::vector<env::GridScene> eval_scenes(const config::RunConfig& cfg) {
  std::vector<env::GridScene> out;
  out.reserve(cfg.eval.scenes);
  for (std::size_t k = 0; k < cfg.eval.scenes; ++k) {
    const auto seed = Rng::keyed(cfg.eval.seed, "test_scene", {k}).next_u64();
    out.push_back(env::generate_scene(seed, cfg.train.domain, cfg.env));
  }
  return out;
}

CeilingReport ceiling_check(const models::ToolParams& tool, const models::Shapes& shapes,
                            std::span<const env::GridScene> scenes, const objectives::RewardOptions& options) {
  if (scenes.empty()) throw UsageError("ceiling_check: empty scene list");
  CeilingReport r;
  for (const auto& s : scenes) {
    r.mean_iou += objectives::compute_reward(s, env::oracle_prompt(s), tool, shapes, options).r_iou;
    r.mean_ceiling += env::erosion_ceiling(s.target().rect);
  }
  r.scenes = scenes.size();
  r.mean_iou /= static_cast<double>(r.scenes);
  r.mean_ceiling /= static_cast<double>(r.scenes);
  return r;
}

checkpoint::Checkpoint make_checkpoint(const config::RunConfig& cfg, const CheckpointInfo& info,
                                       const models::PolicyParams* policy, const models::ToolParams* tool) {
  checkpoint::Checkpoint c;
  c.metadata = {{"kind", info.kind},   {"mode", info.mode}, {"stage", info.stage},
                {"epoch", info.epoch}, {"seed", info.seed}, {"config_hash", cfg.compat_hash()}};
  if (info.metric) c.metadata["metric"] = *info.metric;
  if (policy) c.tensors.insert(policy->begin(), policy->end());
  if (tool) c.tensors.insert(tool->begin(), tool->end());
  return c;
}

nlohmann::json report_json(const metrics::EvalReport& report) {
  return {{"giou", report.giou},
          {"ciou", report.ciou},
          {"mean_reward", report.mean_reward},
          {"validity_rate", report.validity_rate},
          {"scenes", report.per_sample_iou.size()}};
}

}  // namespace bgrto::pipeline
