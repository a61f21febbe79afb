#include "bgrto/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "bgrto/errors.hpp"

namespace bgrto::objectives {

Overlap mask_overlap(const env::Mask& a, const env::Mask& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw UsageError("mask_iou: mask dims differ");
  }
  Overlap o;
  for (std::size_t i = 0; i < a.size(); ++i) {
    o.intersection += (a[i] && b[i]) ? 1 : 0;
    o.union_ += (a[i] || b[i]) ? 1 : 0;
  }
  return o;
}

double mask_iou(const env::Mask& a, const env::Mask& b) {
  const Overlap o = mask_overlap(a, b);
  if (o.union_ == 0) return 1.0;
  return static_cast<double>(o.intersection) / static_cast<double>(o.union_);
}

env::Mask spatial_filter(const env::Mask& mask, std::span<const env::Rect> boxes) {
  env::Mask out(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask.at(x, y)) continue;
      const bool keep = std::any_of(boxes.begin(), boxes.end(), [&](const env::Rect& r) { return r.contains(x, y); });
      out.set(x, y, keep);
    }
  }
  return out;
}

env::Mask binarize(const Tensor& logits, int width, int height, double threshold) {
  if (logits.size() != static_cast<std::size_t>(width * height)) {
    throw UsageError("binarize: logits do not match the mask size");
  }
  env::Mask m(width, height);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i];
    const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    m.set(i, s > threshold);
  }
  return m;
}

RewardBreakdown reward_from_logits(const env::GridScene& scene, const std::optional<env::ToolPrompt>& prompt,
                                   const Tensor* logits, const RewardOptions& options) {
  RewardBreakdown r;
  if (!prompt) {
    // No mask: the whole truth counts toward the union.
    r.union_ = scene.official_gt().count();
    return r;
  }
  if (logits == nullptr) throw UsageError("reward_from_logits: valid prompt without tool output");
  env::Mask pred = binarize(*logits, scene.width, scene.height, options.threshold);
  if (options.filter_enabled) pred = spatial_filter(pred, prompt->boxes);
  const env::Mask& gt = scene.official_gt();
  const Overlap o = mask_overlap(pred, gt);
  r.intersection = o.intersection;
  r.union_ = o.union_;
  r.r_iou = o.union_ == 0 ? 1.0 : static_cast<double>(o.intersection) / static_cast<double>(o.union_);
  r.r_format = 1.0;
  r.total = options.weights.iou * r.r_iou + options.weights.format * r.r_format;
  return r;
}

RewardBreakdown compute_reward(const env::GridScene& scene, const std::optional<env::ToolPrompt>& prompt,
                               const models::ToolParams& tool, const models::Shapes& shapes,
                               const RewardOptions& options) {
  if (!(options.threshold > 0.0 && options.threshold < 1.0)) {
    throw UsageError("compute_reward: threshold must lie in (0, 1)");
  }
  if (!prompt) return reward_from_logits(scene, prompt, nullptr, options);
  const Tensor logits = models::tool_forward(tool, shapes, scene, *prompt);
  return reward_from_logits(scene, prompt, &logits, options);
}

ad::Var seg_loss(ad::Var logits, const env::Mask& gt) {
  ad::Tape& tape = logits.tape();
  const Dims& dims = logits.dims();
  if (dims_product(dims) != gt.size()) {
    throw UsageError("seg_loss: logits " + dims_to_string(dims) + " do not match mask of " +
                     std::to_string(gt.size()) + " cells");
  }
  Tensor m(dims, 0.0);
  for (std::size_t i = 0; i < gt.size(); ++i) m[i] = gt[i] ? 1.0 : 0.0;
  const auto gt_count = static_cast<double>(gt.count());
  ad::Var mask = tape.constant(std::move(m));

  // -[M log S + (1-M) log(1-S)] = softplus(x) - M x
  ad::Var bce = ad::mean(ad::softplus(logits) - mask * logits);
  ad::Var s = ad::sigmoid(logits);
  ad::Var inter = ad::sum(s * mask);
  ad::Var uni = ad::add_scalar(ad::sum(s) - inter, gt_count);
  ad::Var soft_iou = ad::add_scalar(-(inter / uni), 1.0);
  return bce + soft_iou;
}

AdvantageSet compute_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw UsageError("compute_advantages: group size must be >= 2");
  AdvantageSet a;
  a.rewards.assign(rewards.begin(), rewards.end());
  const auto g = static_cast<double>(rewards.size());
  double mu = 0.0;
  for (double r : rewards) mu += r;
  mu /= g;
  double var = 0.0;
  for (double r : rewards) var += (r - mu) * (r - mu);
  var /= g;
  a.mean = mu;
  a.std = std::sqrt(var);
  a.degenerate = a.std < kDegenerateStd;
  a.advantages.resize(rewards.size(), 0.0);
  if (!a.degenerate) {
    for (std::size_t i = 0; i < rewards.size(); ++i) a.advantages[i] = (rewards[i] - mu) / a.std;
  }
  return a;
}

double kl_estimate(std::span<const double> current, std::span<const double> reference, std::size_t max_length) {
  if (current.size() != reference.size()) throw UsageError("kl_estimate: length mismatch");
  if (max_length == 0) throw UsageError("kl_estimate: max_length must be positive");
  double acc = 0.0;
  for (std::size_t t = 0; t < current.size(); ++t) {
    const double d = reference[t] - current[t];
    acc += std::exp(d) - d - 1.0;
  }
  return acc / static_cast<double>(max_length);
}

ad::Var kl_estimate(ad::Tape& tape, std::span<const ad::Var> current, std::span<const Tensor> reference,
                    std::size_t max_length) {
  if (current.size() != reference.size() || current.empty()) throw UsageError("kl_estimate: step count mismatch");
  if (max_length == 0) throw UsageError("kl_estimate: max_length must be positive");
  ad::Var total;
  for (std::size_t t = 0; t < current.size(); ++t) {
    ad::Var d = tape.constant(reference[t]) - current[t];
    ad::Var k = ad::add_scalar(ad::exp(d) - d, -1.0);
    total = total.valid() ? total + k : k;
  }
  return ad::scale(total, 1.0 / static_cast<double>(max_length));
}

GrpoTerms grpo_objective(ad::Tape& tape, const GrpoInputs& in) {
  const std::size_t steps = in.current.size();
  if (steps == 0 || in.old.size() != steps || in.reference.size() != steps) {
    throw UsageError("grpo_objective: per-step inputs disagree in length");
  }
  if (in.max_length == 0) throw UsageError("grpo_objective: max_length must be positive");
  const std::size_t g = in.advantages.size();
  ad::Var adv = tape.constant(Tensor({g}, std::vector<double>(in.advantages.begin(), in.advantages.end())));

  ad::Var surrogate;
  for (std::size_t t = 0; t < steps; ++t) {
    ad::Var ratio = ad::exp(in.current[t] - tape.constant(in.old[t]));
    ad::Var unclipped = ratio * adv;
    ad::Var clipped = ad::clamp(ratio, 1.0 - in.eps_clip, 1.0 + in.eps_clip) * adv;
    ad::Var term = ad::sum(ad::minimum(unclipped, clipped));
    surrogate = surrogate.valid() ? surrogate + term : term;
  }
  surrogate = ad::scale(surrogate, 1.0 / (static_cast<double>(g) * static_cast<double>(in.max_length)));
  ad::Var kl = ad::mean(kl_estimate(tape, in.current, in.reference, in.max_length));
  return {surrogate - ad::scale(kl, in.beta), surrogate, kl};
}

ad::Var detached_sequence_ratios(ad::Tape& tape, std::span<const ad::Var> current, std::span<const Tensor> old) {
  if (current.size() != old.size() || current.empty()) throw UsageError("sequence ratios: step count mismatch");
  ad::Var log_ratio;
  for (std::size_t t = 0; t < current.size(); ++t) {
    ad::Var d = current[t] - tape.constant(old[t]);
    log_ratio = log_ratio.valid() ? log_ratio + d : d;
  }
  return ad::stop_gradient(ad::exp(log_ratio));
}

ad::Var grto_tool_term(ad::Tape& tape, ad::Var sequence_ratios, std::span<const std::optional<ad::Var>> losses) {
  ad::Var total;
  std::size_t valid = 0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!losses[i]) continue;
    ad::Var term = ad::pick(sequence_ratios, {i}) * *losses[i];
    total = total.valid() ? total + term : term;
    ++valid;
  }
  if (valid == 0) return tape.constant(0.0);
  return ad::scale(total, 1.0 / static_cast<double>(valid));
}

BtoWeights bto_weights(std::span<const double> rewards, double beta) {
  if (!(beta > 0.0)) throw UsageError("bto_weights: beta must be positive");
  if (rewards.empty()) throw UsageError("bto_weights: empty group");
  BtoWeights w;
  w.beta = beta;
  const double top = *std::max_element(rewards.begin(), rewards.end());
  double z = 0.0;
  w.weights.resize(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    w.weights[i] = std::exp((rewards[i] - top) / beta);
    z += w.weights[i];
  }
  for (double& v : w.weights) v /= z;
  return w;
}

ad::Var bto_objective(ad::Tape& tape, const BtoWeights& weights, std::span<const std::optional<ad::Var>> losses) {
  if (weights.weights.size() != losses.size()) throw UsageError("bto_objective: weight/loss count mismatch");
  ad::Var total;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!losses[i]) continue;
    ad::Var term = ad::scale(*losses[i], weights.weights[i]);
    total = total.valid() ? total + term : term;
  }
  if (!total.valid()) return tape.constant(0.0);
  return ad::scale(total, -1.0 / static_cast<double>(losses.size()));
}

}  // namespace bgrto::objectives
