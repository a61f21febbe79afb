// Supervised initialisation of both networks: the source-domain tool and the
// demonstration-cloned reference policy.

#include <numeric>

#include "bgrto/errors.hpp"
#include "bgrto/models.hpp"
#include "bgrto/objectives.hpp"
#include "bgrto/optim.hpp"

namespace bgrto::models {

namespace {

std::vector<std::size_t> shuffled(std::size_t n, Rng rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  return order;
}

}  // namespace

ToolParams pretrain_tool(ToolParams params, const Shapes& shapes, std::span<const SupervisedExample> dataset,
                         const PretrainOptions& options) {
  if (options.epochs == 0 || dataset.empty()) return params;
  if (options.batch == 0) throw UsageError("pretrain_tool: batch must be positive");
  optim::OptimizerState opt = optim::make_optimizer(params);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const auto order = shuffled(dataset.size(), Rng::keyed(options.seed, "pretrain_tool", {epoch}));
    for (std::size_t start = 0; start < order.size(); start += options.batch) {
      const std::size_t end = std::min(order.size(), start + options.batch);
      ad::Tape tape;
      ToolVars vars = bind_tool(tape, params);
      ad::Var total;
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = dataset[order[k]];
        ad::Var logits = tool_forward_tape(tape, vars, shapes, ex.scene, ex.prompt);
        ad::Var loss = objectives::seg_loss(logits, ex.scene.gt_source);
        total = total.valid() ? total + loss : loss;
      }
      total = ad::scale(total, 1.0 / static_cast<double>(end - start));
      optim::adamw_step(params, tape.backward(total), opt, options.lr);
    }
  }
  return params;
}

double sample_validity_rate(const PolicyParams& params, const Shapes& shapes,
                            std::span<const env::GridScene> scenes, std::size_t samples_per_scene,
                            std::uint64_t seed) {
  if (scenes.empty() || samples_per_scene == 0) throw UsageError("sample_validity_rate: nothing to sample");
  std::size_t valid = 0;
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    const auto samples = policy_sample(params, shapes, scenes[k], samples_per_scene, 1.0,
                                       Rng::keyed(seed, "validity_probe", {k}));
    for (const auto& s : samples) valid += env::parse_action_tokens(s.tokens, shapes.grammar) ? 1 : 0;
  }
  return static_cast<double>(valid) / static_cast<double>(scenes.size() * samples_per_scene);
}

PolicyParams warmup_policy(PolicyParams params, const Shapes& shapes, std::span<const Demonstration> demos,
                           const WarmupOptions& options) {
  if (options.epochs == 0 || demos.empty()) return params;
  if (options.batch == 0) throw UsageError("warmup_policy: batch must be positive");
  optim::OptimizerState opt = optim::make_optimizer(params);
  const double steps = static_cast<double>(shapes.grammar.length());

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const auto order = shuffled(demos.size(), Rng::keyed(options.seed, "warmup_policy", {epoch}));
    double epoch_nll = 0.0;
    for (std::size_t start = 0; start < order.size(); start += options.batch) {
      const std::size_t end = std::min(order.size(), start + options.batch);
      ad::Tape tape;
      PolicyVars vars = bind_policy(tape, params, shapes);
      std::vector<const env::GridScene*> scenes;
      std::vector<env::TokenSeq> tokens;
      for (std::size_t k = start; k < end; ++k) {
        scenes.push_back(&demos[order[k]].scene);
        tokens.push_back(demos[order[k]].tokens);
      }
      ad::Var total;
      for (ad::Var lp : policy_logprobs_multi_tape(tape, vars, shapes, scenes, tokens)) {
        ad::Var term = ad::sum(lp);
        total = total.valid() ? total + term : term;
      }
      ad::Var nll = ad::scale(total, -1.0 / (static_cast<double>(end - start) * steps));
      epoch_nll += nll.item() * static_cast<double>(end - start);
      optim::adamw_step(params, tape.backward(nll), opt, options.lr);
    }
    if (options.loss_log) options.loss_log->push_back(epoch_nll / static_cast<double>(demos.size()));
  }

  if (!options.probe_scenes.empty()) {
    const double rate = sample_validity_rate(params, shapes, options.probe_scenes, 8, options.seed);
    if (rate < options.min_validity) {
      throw TrainingError("warmup-failure: post-warmup validity rate " + std::to_string(rate) + " is below " +
                          std::to_string(options.min_validity) +
                          "; increase warmup epochs or the number of demonstrations");
    }
  }
  return params;
}

}  // namespace bgrto::models
