#include "bgrto/models.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bgrto/errors.hpp"

namespace bgrto::models {

namespace {

Tensor glorot(Dims dims, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double half = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(dims));
  for (double& v : t.values()) v = (2.0 * rng.uniform() - 1.0) * half;
  return t;
}

std::string head_name(const char* kind, std::size_t t) {
  // Zero-padded so lexicographic order matches step order.
  std::string idx = std::to_string(t);
  if (idx.size() < 2) idx = "0" + idx;
  return std::string("policy/head") + idx + "_" + kind;
}

Tensor prefix_rows(const Shapes& shapes, std::span<const env::TokenSeq> seqs, std::size_t step) {
  Tensor rows({seqs.size(), shapes.prefix_size()}, 0.0);
  const std::size_t width = shapes.prefix_size();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    double* row = rows.values().data() + i * width;
    row[step] = 1.0;
    for (std::size_t s = 0; s < step; ++s) row[shapes.prefix_offset(s) + seqs[i][s]] = 1.0;
  }
  return rows;
}

// Observation branch of the first layer, shared by every row for a scene.
ad::Var observation_branch(ad::Tape& tape, const PolicyVars& vars, const Shapes& shapes,
                           const env::GridScene& scene) {
  Tensor obs = env::render_observation(scene, shapes.env);
  const std::size_t n = obs.size();
  ad::Var x = tape.constant(Tensor({1, n}, std::move(obs.storage())));
  return ad::reshape(ad::matmul(x, vars.l1_obs_w), {shapes.model.policy_hidden}) + vars.l1_b;
}

ad::Var trunk(ad::Tape& tape, const PolicyVars& vars, ad::Var obs_branch, Tensor prefix) {
  ad::Var p = tape.constant(std::move(prefix));
  ad::Var h1 = ad::relu(ad::matmul(p, vars.l1_prefix_w) + obs_branch);
  return ad::relu(ad::matmul(h1, vars.l2_w) + vars.l2_b);
}

ad::Var step_logits(const PolicyVars& vars, std::size_t step, ad::Var hidden) {
  return ad::matmul(hidden, vars.head_w[step]) + vars.head_b[step];
}

void check_tokens(const Shapes& shapes, const env::TokenSeq& tokens) {
  if (tokens.size() != shapes.grammar.length()) {
    throw UsageError("token sequence has length " + std::to_string(tokens.size()) + ", grammar needs " +
                     std::to_string(shapes.grammar.length()));
  }
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= shapes.grammar.step_size(t)) {
      throw UsageError("token " + std::to_string(tokens[t]) + " outside the step-" + std::to_string(t) +
                       " vocabulary of size " + std::to_string(shapes.grammar.step_size(t)));
    }
  }
}

std::size_t draw(std::span<const double> logprobs, double u) {
  double cum = 0.0;
  for (std::size_t j = 0; j < logprobs.size(); ++j) {
    cum += std::exp(logprobs[j]);
    if (u < cum) return j;
  }
  // u landed in the rounding slack above the last cumulative value.
  for (std::size_t j = logprobs.size(); j-- > 0;) {
    if (std::isfinite(logprobs[j]) && std::exp(logprobs[j]) > 0.0) return j;
  }
  return logprobs.size() - 1;
}

}  // namespace

void ModelConfig::validate() const {
  std::string errs;
  if (policy_hidden == 0) errs += " model.policy_hidden must be positive;";
  if (tool_hidden == 0) errs += " model.tool_hidden must be positive;";
  if (concept_dim == 0) errs += " model.concept_dim must be positive;";
  if (!errs.empty()) throw ConfigError("invalid model config:" + errs);
}

Shapes::Shapes(const env::EnvConfig& env_config, const ModelConfig& model_config)
    : env(env_config), grammar(env::ActionGrammar::for_config(env_config)), model(model_config) {
  env.validate();
  model.validate();
}

std::size_t Shapes::observation_size() const noexcept { return env::observation_size(env); }

std::size_t Shapes::prefix_size() const noexcept {
  std::size_t n = grammar.length();
  for (const auto& v : grammar.step_vocabularies) n += v.size();
  return n;
}

std::size_t Shapes::prefix_offset(std::size_t step) const {
  std::size_t off = grammar.length();
  for (std::size_t s = 0; s < step; ++s) off += grammar.step_size(s);
  return off;
}

std::size_t Shapes::tool_feature_size() const noexcept {
  return 3 * static_cast<std::size_t>(env.num_colors + 1) + 1;
}

PolicyParams policy_init(std::uint64_t seed, const Shapes& shapes) {
  Rng rng = Rng::keyed(seed, "policy_init");
  const std::size_t h = shapes.model.policy_hidden;
  const std::size_t obs = shapes.observation_size();
  const std::size_t pre = shapes.prefix_size();

  PolicyParams p;
  // The first layer is one dense map over [observation | prefix], stored as
  // two blocks so the observation half can be evaluated once per scene.
  p.emplace("policy/l1_obs_w", glorot({obs, h}, obs + pre, h, rng));
  p.emplace("policy/l1_prefix_w", glorot({pre, h}, obs + pre, h, rng));
  p.emplace("policy/l1_b", Tensor({h}, 0.0));
  p.emplace("policy/l2_w", glorot({h, h}, h, h, rng));
  p.emplace("policy/l2_b", Tensor({h}, 0.0));
  for (std::size_t t = 0; t < shapes.grammar.length(); ++t) {
    const std::size_t v = shapes.grammar.step_size(t);
    p.emplace(head_name("w", t), glorot({h, v}, h, v, rng));
    p.emplace(head_name("b", t), Tensor({v}, 0.0));
  }
  return p;
}

PolicyVars bind_policy(ad::Tape& tape, const PolicyParams& params, const Shapes& shapes) {
  const auto leaf = [&](const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw UsageError("policy parameters missing '" + name + "'");
    return tape.param(name, it->second);
  };
  PolicyVars v;
  v.l1_obs_w = leaf("policy/l1_obs_w");
  v.l1_prefix_w = leaf("policy/l1_prefix_w");
  v.l1_b = leaf("policy/l1_b");
  v.l2_w = leaf("policy/l2_w");
  v.l2_b = leaf("policy/l2_b");
  for (std::size_t t = 0; t < shapes.grammar.length(); ++t) {
    v.head_w.push_back(leaf(head_name("w", t)));
    v.head_b.push_back(leaf(head_name("b", t)));
  }
  return v;
}

std::vector<ad::Var> policy_logprobs_tape(ad::Tape& tape, const PolicyVars& vars, const Shapes& shapes,
                                          const env::GridScene& scene,
                                          std::span<const env::TokenSeq> sequences) {
  if (sequences.empty()) throw UsageError("policy_logprobs: empty batch");
  for (const auto& s : sequences) check_tokens(shapes, s);

  const std::size_t batch = sequences.size();
  const std::size_t steps = shapes.grammar.length();
  const std::size_t width = shapes.prefix_size();

  // Rows are step-major: row t * batch + i.
  Tensor prefix({steps * batch, width}, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor rows = prefix_rows(shapes, sequences, t);
    std::copy(rows.values().begin(), rows.values().end(), prefix.values().begin() + t * batch * width);
  }

  ad::Var obs = observation_branch(tape, vars, shapes, scene);
  ad::Var hidden = trunk(tape, vars, obs, std::move(prefix));

  std::vector<ad::Var> out;
  out.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<std::size_t> rows(batch);
    std::vector<std::size_t> picks(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      rows[i] = t * batch + i;
      picks[i] = sequences[i][t];
    }
    ad::Var h = ad::take_rows(hidden, std::move(rows));
    out.push_back(ad::pick(ad::log_softmax(step_logits(vars, t, h)), std::move(picks)));
  }
  return out;
}

std::vector<ad::Var> policy_logprobs_multi_tape(ad::Tape& tape, const PolicyVars& vars, const Shapes& shapes,
                                                std::span<const env::GridScene* const> scenes,
                                                std::span<const env::TokenSeq> sequences) {
  if (sequences.empty()) throw UsageError("policy_logprobs: empty batch");
  if (scenes.size() != sequences.size()) throw UsageError("policy_logprobs: one scene per sequence required");
  for (const auto& s : sequences) check_tokens(shapes, s);

  const std::size_t batch = sequences.size();
  const std::size_t steps = shapes.grammar.length();
  const std::size_t width = shapes.prefix_size();
  const std::size_t obs_size = shapes.observation_size();

  // Distinct scenes in first-appearance order.
  std::vector<const env::GridScene*> unique;
  std::vector<std::size_t> scene_of(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    auto it = std::find(unique.begin(), unique.end(), scenes[i]);
    scene_of[i] = static_cast<std::size_t>(it - unique.begin());
    if (it == unique.end()) unique.push_back(scenes[i]);
  }
  Tensor obs({unique.size(), obs_size}, 0.0);
  for (std::size_t k = 0; k < unique.size(); ++k) {
    const Tensor o = env::render_observation(*unique[k], shapes.env);
    std::copy(o.values().begin(), o.values().end(), obs.values().begin() + k * obs_size);
  }
  ad::Var branch = ad::matmul(tape.constant(std::move(obs)), vars.l1_obs_w) + vars.l1_b;

  Tensor prefix({steps * batch, width}, 0.0);
  std::vector<std::size_t> branch_rows(steps * batch);
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor rows = prefix_rows(shapes, sequences, t);
    std::copy(rows.values().begin(), rows.values().end(), prefix.values().begin() + t * batch * width);
    for (std::size_t i = 0; i < batch; ++i) branch_rows[t * batch + i] = scene_of[i];
  }
  ad::Var p = tape.constant(std::move(prefix));
  ad::Var h1 = ad::relu(ad::matmul(p, vars.l1_prefix_w) + ad::take_rows(branch, std::move(branch_rows)));
  ad::Var hidden = ad::relu(ad::matmul(h1, vars.l2_w) + vars.l2_b);

  std::vector<ad::Var> out;
  out.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    std::vector<std::size_t> rows(batch);
    std::vector<std::size_t> picks(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      rows[i] = t * batch + i;
      picks[i] = sequences[i][t];
    }
    ad::Var h = ad::take_rows(hidden, std::move(rows));
    out.push_back(ad::pick(ad::log_softmax(step_logits(vars, t, h)), std::move(picks)));
  }
  return out;
}

std::vector<double> policy_logprobs(const PolicyParams& params, const Shapes& shapes,
                                    const env::GridScene& scene, const env::TokenSeq& tokens) {
  ad::Tape tape;
  PolicyVars vars = bind_policy(tape, params, shapes);
  auto steps = policy_logprobs_tape(tape, vars, shapes, scene, std::span(&tokens, 1));
  std::vector<double> out;
  out.reserve(steps.size());
  for (auto v : steps) out.push_back(v.value()[0]);
  return out;
}

namespace {

// Runs the autoregressive loop for `count` sequences; `choose` picks a token
// given (sequence index, step, step log-probabilities).
template <typename Choose>
std::vector<SampledSequence> decode(const PolicyParams& params, const Shapes& shapes,
                                    const env::GridScene& scene, std::size_t count, double temperature,
                                    Choose&& choose) {
  ad::Tape tape;
  PolicyVars vars = bind_policy(tape, params, shapes);
  ad::Var obs = observation_branch(tape, vars, shapes, scene);

  std::vector<SampledSequence> out(count);
  std::vector<env::TokenSeq> prefixes(count);
  for (std::size_t t = 0; t < shapes.grammar.length(); ++t) {
    ad::Var hidden = trunk(tape, vars, obs, prefix_rows(shapes, prefixes, t));
    ad::Var logits = step_logits(vars, t, hidden);
    if (temperature != 1.0) logits = ad::scale(logits, 1.0 / temperature);
    const Tensor& lp = ad::log_softmax(logits).value();
    const std::size_t v = shapes.grammar.step_size(t);
    for (std::size_t i = 0; i < count; ++i) {
      std::span<const double> row(lp.values().data() + i * v, v);
      const std::size_t tok = choose(i, t, row);
      prefixes[i].push_back(tok);
      out[i].logprobs.push_back(row[tok]);
    }
  }
  for (std::size_t i = 0; i < count; ++i) out[i].tokens = std::move(prefixes[i]);
  return out;
}

}  // namespace

std::vector<SampledSequence> policy_sample(const PolicyParams& params, const Shapes& shapes,
                                           const env::GridScene& scene, std::size_t group_size,
                                           double temperature, const Rng& rng) {
  if (group_size < 1) throw UsageError("policy_sample: group size must be positive");
  if (!(temperature > 0.0)) throw UsageError("policy_sample: temperature must be positive");
  std::vector<Rng> streams;
  streams.reserve(group_size);
  for (std::size_t i = 0; i < group_size; ++i) streams.push_back(rng.split(i));
  return decode(params, shapes, scene, group_size, temperature,
                [&](std::size_t i, std::size_t, std::span<const double> row) {
                  return draw(row, streams[i].uniform());
                });
}

SampledSequence policy_greedy(const PolicyParams& params, const Shapes& shapes,
                              const env::GridScene& scene) {
  auto out = decode(params, shapes, scene, 1, 1.0, [](std::size_t, std::size_t, std::span<const double> row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  });
  return std::move(out.front());
}

std::vector<double> policy_step_logprobs(const PolicyParams& params, const Shapes& shapes,
                                         const env::GridScene& scene, const env::TokenSeq& prefix) {
  const std::size_t t = prefix.size();
  if (t >= shapes.grammar.length()) throw UsageError("policy_step_logprobs: prefix already complete");
  ad::Tape tape;
  PolicyVars vars = bind_policy(tape, params, shapes);
  ad::Var obs = observation_branch(tape, vars, shapes, scene);
  ad::Var hidden = trunk(tape, vars, obs, prefix_rows(shapes, std::span(&prefix, 1), t));
  const Tensor& lp = ad::log_softmax(step_logits(vars, t, hidden)).value();
  return {lp.values().begin(), lp.values().end()};
}

// ---------------------------------------------------------------- tool

ToolParams tool_init(std::uint64_t seed, const Shapes& shapes) {
  Rng rng = Rng::keyed(seed, "tool_init");
  const std::size_t h = shapes.model.tool_hidden;
  const std::size_t e = shapes.model.concept_dim;
  const std::size_t f = shapes.tool_feature_size();
  const std::size_t n = env::concept_count(shapes.env.num_colors);

  ToolParams p;
  p.emplace("tool/embed", glorot({n, e}, n, e, rng));
  p.emplace("tool/l1_feat_w", glorot({f, h}, f + e, h, rng));
  p.emplace("tool/l1_embed_w", glorot({e, h}, f + e, h, rng));
  p.emplace("tool/l1_b", Tensor({h}, 0.0));
  p.emplace("tool/l2_w", glorot({h, h}, h, h, rng));
  p.emplace("tool/l2_b", Tensor({h}, 0.0));
  p.emplace("tool/out_w", glorot({h, 1}, h, 1, rng));
  p.emplace("tool/out_b", Tensor({1}, 0.0));
  return p;
}

ToolVars bind_tool(ad::Tape& tape, const ToolParams& params) {
  const auto leaf = [&](const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw UsageError("tool parameters missing '" + name + "'");
    return tape.param(name, it->second);
  };
  return {leaf("tool/embed"), leaf("tool/l1_feat_w"), leaf("tool/l1_embed_w"), leaf("tool/l1_b"),
          leaf("tool/l2_w"),  leaf("tool/l2_b"),      leaf("tool/out_w"),      leaf("tool/out_b")};
}

Tensor tool_features(const env::GridScene& scene, const env::ToolPrompt& prompt, const Shapes& shapes) {
  const int w = scene.width;
  const int h = scene.height;
  const auto channels = static_cast<std::size_t>(shapes.env.num_colors + 1);
  const std::size_t f = shapes.tool_feature_size();
  Tensor feat({static_cast<std::size_t>(w * h), f}, 0.0);

  std::vector<double> global(channels, 0.0);
  for (auto c : scene.cells) global[c] += 1.0;
  for (double& g : global) g /= static_cast<double>(w * h);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y * w + x);
      double* row = feat.values().data() + i * f;
      row[scene.cells[i]] = 1.0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx;
          const int ny = y + dy;
          // Off-grid neighbours count as background.
          const std::size_t c = (nx < 0 || ny < 0 || nx >= w || ny >= h)
                                    ? 0
                                    : scene.cells[static_cast<std::size_t>(ny * w + nx)];
          row[channels + c] += 1.0 / 9.0;
        }
      }
      for (std::size_t c = 0; c < channels; ++c) row[2 * channels + c] = global[c];
      const bool inside = std::any_of(prompt.boxes.begin(), prompt.boxes.end(),
                                      [&](const env::Rect& r) { return r.contains(x, y); });
      row[3 * channels] = inside ? 1.0 : 0.0;
    }
  }
  return feat;
}

ad::Var tool_forward_tape(ad::Tape& tape, const ToolVars& vars, const Shapes& shapes,
                          const env::GridScene& scene, const env::ToolPrompt& prompt) {
  if (prompt.boxes.empty()) throw UsageError("tool_forward: prompt has no boxes (invalid prompt)");
  if (prompt.phrase.color < 0 || prompt.phrase.color >= shapes.env.num_colors) {
    throw UsageError("tool_forward: concept color out of range");
  }
  ad::Var feat = tape.constant(tool_features(scene, prompt, shapes));
  ad::Var emb = ad::take_rows(vars.embed, {env::concept_index(prompt.phrase)});
  ad::Var cond = ad::reshape(ad::matmul(emb, vars.l1_embed_w), {shapes.model.tool_hidden}) + vars.l1_b;
  ad::Var h1 = ad::relu(ad::matmul(feat, vars.l1_feat_w) + cond);
  ad::Var h2 = ad::relu(ad::matmul(h1, vars.l2_w) + vars.l2_b);
  ad::Var logits = ad::matmul(h2, vars.out_w) + vars.out_b;
  return ad::reshape(logits, {static_cast<std::size_t>(scene.height), static_cast<std::size_t>(scene.width)});
}

Tensor tool_forward(const ToolParams& params, const Shapes& shapes, const env::GridScene& scene,
                    const env::ToolPrompt& prompt) {
  ad::Tape tape;
  ToolVars vars = bind_tool(tape, params);
  return tool_forward_tape(tape, vars, shapes, scene, prompt).value();
}

}  // namespace bgrto::models
