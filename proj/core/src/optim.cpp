#include "bgrto/optim.hpp"

#include <cmath>

#include "bgrto/errors.hpp"

namespace bgrto::optim {

OptimizerState make_optimizer(const NamedParams& params, const AdamWConfig& hp) {
  OptimizerState s;
  s.hp = hp;
  s.first_moment = zeros_like(params);
  s.second_moment = zeros_like(params);
  return s;
}

void adamw_step(NamedParams& params, const NamedParams& grads, OptimizerState& state, double lr) {
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw UsageError("adamw_step: no gradient for '" + name + "'");
    if (it->second.dims() != p.dims()) throw StructuralError("adamw_step: gradient dims differ for '" + name + "'");
    if (!it->second.all_finite()) throw TrainingError("non-finite gradient in parameter '" + name + "'");
    if (!state.first_moment.contains(name)) {
      throw UsageError("adamw_step: optimizer state has no moments for '" + name + "'");
    }
  }

  ++state.step;
  const auto& hp = state.hp;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hp.beta1, t);
  const double c2 = 1.0 - std::pow(hp.beta2, t);

  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    Tensor& m = state.first_moment.at(name);
    Tensor& v = state.second_moment.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (hp.weight_decay != 0.0) p[i] -= lr * hp.weight_decay * p[i];
      m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
      v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + hp.eps);
    }
  }
}

double clip_global_norm(NamedParams& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw UsageError("clip_global_norm: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [_, g] : grads) {
      for (double& v : g.values()) v *= s;
    }
  }
  return norm;
}

NamedParams select(const NamedParams& grads, const NamedParams& like) {
  NamedParams out;
  for (const auto& [name, _] : like) {
    auto it = grads.find(name);
    if (it == grads.end()) throw UsageError("select: no gradient for '" + name + "'");
    out.emplace(name, it->second);
  }
  return out;
}

}  // namespace bgrto::optim
