#pragma once

#include <cstdint>

#include "bgrto/tensor.hpp"

namespace bgrto::optim {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  bool operator==(const AdamWConfig&) const = default;
};

struct OptimizerState {
  AdamWConfig hp;
  NamedParams first_moment;
  NamedParams second_moment;
  std::uint64_t step = 0;
};

OptimizerState make_optimizer(const NamedParams& params, const AdamWConfig& hp = {});

/// Decoupled-weight-decay Adam with bias correction. Only names present in
/// `params` are updated; `grads` may carry extra entries. Throws
/// TrainingError naming the first parameter with a non-finite gradient.
void adamw_step(NamedParams& params, const NamedParams& grads, OptimizerState& state, double lr);

/// Rescales `grads` in place when their global L2 norm exceeds `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(NamedParams& grads, double max_norm);

/// Restricts `grads` to the names in `like`.
NamedParams select(const NamedParams& grads, const NamedParams& like);

}  // namespace bgrto::optim
