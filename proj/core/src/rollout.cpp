#include "bgrto/rollout.hpp"

#include <cstring>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bgrto/errors.hpp"
#include "bgrto/io.hpp"

namespace bgrto::rollout {

using nlohmann::json;

std::vector<double> Group::rewards() const {
  std::vector<double> r;
  r.reserve(rollouts.size());
  for (const auto& ro : rollouts) r.push_back(ro.reward.total);
  return r;
}

std::size_t Group::valid_count() const {
  std::size_t n = 0;
  for (const auto& ro : rollouts) n += ro.valid ? 1 : 0;
  return n;
}

std::vector<std::vector<double>> batch_logprobs(const models::PolicyParams& params, const models::Shapes& shapes,
                                                const env::GridScene& scene,
                                                std::span<const env::TokenSeq> sequences) {
  ad::Tape tape;
  const models::PolicyVars vars = models::bind_policy(tape, params, shapes);
  const auto steps = models::policy_logprobs_tape(tape, vars, shapes, scene, sequences);
  std::vector<std::vector<double>> out(sequences.size());
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    out[i].reserve(steps.size());
    for (const auto& v : steps) out[i].push_back(v.value()[i]);
  }
  return out;
}

Group sample_rollouts(const models::PolicyParams& policy, const models::PolicyParams& reference,
                      const models::Shapes& shapes, const env::GridScene& scene, std::size_t group_size,
                      double temperature, const Rng& rng) {
  if (group_size < 2) throw UsageError("sample_group: group size must be >= 2");
  auto samples = models::policy_sample(policy, shapes, scene, group_size, temperature, rng);

  std::vector<env::TokenSeq> seqs;
  seqs.reserve(samples.size());
  for (const auto& s : samples) seqs.push_back(s.tokens);
  auto ref = batch_logprobs(reference, shapes, scene, seqs);

  Group g;
  g.scene_seed = scene.seed;
  g.domain = scene.domain;
  g.rollouts.resize(group_size);
  for (std::size_t i = 0; i < group_size; ++i) {
    Rollout& r = g.rollouts[i];
    r.tokens = std::move(samples[i].tokens);
    r.logprobs_old = std::move(samples[i].logprobs);
    r.logprobs_ref = std::move(ref[i]);
    r.prompt = env::parse_action_tokens(r.tokens, shapes.grammar);
    r.valid = r.prompt.has_value();
  }
  return g;
}

void score_group(Group& group, const env::GridScene& scene, std::span<const Tensor* const> logits,
                 const objectives::RewardOptions& options) {
  if (logits.size() != group.rollouts.size()) throw UsageError("score_group: one logits entry per rollout");
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    Rollout& r = group.rollouts[i];
    r.reward = objectives::reward_from_logits(scene, r.prompt, r.valid ? logits[i] : nullptr, options);
  }
  group.advantages = objectives::compute_advantages(group.rewards());
}

void score_group(Group& group, const env::GridScene& scene, const models::ToolParams& tool,
                 const models::Shapes& shapes, const objectives::RewardOptions& options) {
  std::vector<Tensor> unique;
  std::vector<std::size_t> owner;
  std::vector<std::size_t> slot(group.rollouts.size(), 0);
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const Rollout& r = group.rollouts[i];
    if (!r.valid) continue;
    std::size_t k = 0;
    while (k < owner.size() && *group.rollouts[owner[k]].prompt != *r.prompt) ++k;
    if (k == owner.size()) {
      unique.push_back(models::tool_forward(tool, shapes, scene, *r.prompt));
      owner.push_back(i);
    }
    slot[i] = k;
  }
  std::vector<const Tensor*> logits(group.rollouts.size(), nullptr);
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    if (group.rollouts[i].valid) logits[i] = &unique[slot[i]];
  }
  score_group(group, scene, logits, options);
}

Group sample_group(const models::PolicyParams& policy, const models::PolicyParams& reference,
                   const models::ToolParams& tool, const models::Shapes& shapes, const env::GridScene& scene,
                   std::size_t group_size, const Rng& rng, const objectives::RewardOptions& options,
                   double temperature) {
  Group g = sample_rollouts(policy, reference, shapes, scene, group_size, temperature, rng);
  score_group(g, scene, tool, shapes, options);
  return g;
}

// ---------------------------------------------------------------- replay buffer

namespace {

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

json header_json(const BufferHeader& h) {
  return json{{"version", h.version},       {"policy_ckpt", h.policy_ckpt}, {"env_hash", h.env_hash},
              {"group_size", h.group_size}, {"seed", h.seed},               {"groups", h.groups}};
}

json group_json(const Group& g) {
  json rollouts = json::array();
  for (const auto& r : g.rollouts) {
    rollouts.push_back(json{{"tokens", r.tokens}, {"lp_old", r.logprobs_old}, {"lp_ref", r.logprobs_ref},
                            {"valid", r.valid}});
  }
  return json{{"scene_seed", g.scene_seed}, {"domain", std::string(env::to_string(g.domain))},
              {"rollouts", std::move(rollouts)}};
}

[[noreturn]] void malformed(std::size_t line, const std::string& what) {
  throw FormatError("replay buffer line " + std::to_string(line) + ": " + what);
}

}  // namespace

bool same_content(const ReplayBuffer& a, const ReplayBuffer& b) {
  if (!(a.header == b.header) || a.groups.size() != b.groups.size()) return false;
  for (std::size_t k = 0; k < a.groups.size(); ++k) {
    const Group& ga = a.groups[k];
    const Group& gb = b.groups[k];
    if (ga.scene_seed != gb.scene_seed || ga.domain != gb.domain || ga.rollouts.size() != gb.rollouts.size()) {
      return false;
    }
    for (std::size_t i = 0; i < ga.rollouts.size(); ++i) {
      const Rollout& ra = ga.rollouts[i];
      const Rollout& rb = gb.rollouts[i];
      if (ra.tokens != rb.tokens || ra.valid != rb.valid || !bit_equal(ra.logprobs_old, rb.logprobs_old) ||
          !bit_equal(ra.logprobs_ref, rb.logprobs_ref)) {
        return false;
      }
    }
  }
  return true;
}

ReplayBuffer build_replay_buffer(const models::PolicyParams& reference, const models::ToolParams& tool,
                                 const models::Shapes& shapes, std::span<const std::uint64_t> scene_seeds,
                                 const BufferOptions& options, const std::filesystem::path& path) {
  if (scene_seeds.empty()) throw UsageError("build_replay_buffer: no scenes");
  if (options.passes == 0) throw UsageError("build_replay_buffer: passes must be positive");
  ReplayBuffer buf;
  buf.header.policy_ckpt = options.policy_ckpt;
  buf.header.env_hash = shapes.env.hash();
  buf.header.group_size = options.group_size;
  buf.header.seed = options.seed;

  std::uint64_t k = 0;
  for (std::size_t pass = 0; pass < options.passes; ++pass) {
    for (std::uint64_t seed : scene_seeds) {
      const env::GridScene scene = env::generate_scene(seed, options.domain, shapes.env);
      buf.groups.push_back(sample_group(reference, reference, tool, shapes, scene, options.group_size,
                                        Rng::keyed(options.seed, "rollout", {k}), options.reward));
      ++k;
    }
  }
  buf.header.groups = buf.groups.size();
  if (!path.empty()) save_buffer(buf, path);
  return buf;
}

void save_buffer(const ReplayBuffer& buffer, const std::filesystem::path& path) {
  BufferHeader h = buffer.header;
  h.groups = buffer.groups.size();
  std::string out = header_json(h).dump() + "\n";
  for (const auto& g : buffer.groups) out += group_json(g).dump() + "\n";
  io::atomic_write(path, out);
}

ReplayBuffer load_buffer(const std::filesystem::path& path, const env::EnvConfig& env_config) {
  const std::string text = io::read_file(path);
  if (text.empty()) throw FormatError("replay buffer '" + path.string() + "' is empty");
  if (text.back() != '\n') throw FormatError("replay buffer '" + path.string() + "' is truncated (no final newline)");
  const auto grammar = env::ActionGrammar::for_config(env_config);

  ReplayBuffer buf;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  try {
    std::getline(in, line);
    ++lineno;
    const json h = json::parse(line);
    buf.header.version = h.at("version").get<int>();
    if (buf.header.version != kBufferVersion) {
      throw FormatError("replay buffer version " + std::to_string(buf.header.version) + " does not match supported version " +
                        std::to_string(kBufferVersion));
    }
    buf.header.policy_ckpt = h.at("policy_ckpt").get<std::string>();
    buf.header.env_hash = h.at("env_hash").get<std::string>();
    buf.header.group_size = h.at("group_size").get<std::size_t>();
    buf.header.seed = h.at("seed").get<std::uint64_t>();
    buf.header.groups = h.at("groups").get<std::size_t>();
    const std::string expected = env_config.hash();
    if (buf.header.env_hash != expected) {
      throw FormatError("replay buffer env hash " + buf.header.env_hash + " does not match config env hash " + expected);
    }

    while (std::getline(in, line)) {
      ++lineno;
      const json gj = json::parse(line);
      Group g;
      g.scene_seed = gj.at("scene_seed").get<std::uint64_t>();
      g.domain = env::parse_domain(gj.at("domain").get<std::string>());
      for (const auto& rj : gj.at("rollouts")) {
        Rollout r;
        r.tokens = rj.at("tokens").get<env::TokenSeq>();
        r.logprobs_old = rj.at("lp_old").get<std::vector<double>>();
        r.logprobs_ref = rj.at("lp_ref").get<std::vector<double>>();
        r.valid = rj.at("valid").get<bool>();
        if (r.tokens.size() != grammar.length() || r.logprobs_old.size() != r.tokens.size() ||
            r.logprobs_ref.size() != r.tokens.size()) {
          malformed(lineno, "rollout lengths disagree with the grammar");
        }
        r.prompt = env::parse_action_tokens(r.tokens, grammar);
        if (r.prompt.has_value() != r.valid) malformed(lineno, "stored validity flag disagrees with the parser");
        g.rollouts.push_back(std::move(r));
      }
      if (g.rollouts.size() != buf.header.group_size) {
        malformed(lineno, "group has " + std::to_string(g.rollouts.size()) + " rollouts, header says " +
                              std::to_string(buf.header.group_size));
      }
      buf.groups.push_back(std::move(g));
    }
  } catch (const json::exception& e) {
    malformed(lineno, e.what());
  } catch (const UsageError& e) {
    malformed(lineno, e.what());
  }
  if (buf.groups.size() != buf.header.groups) {
    throw FormatError("replay buffer '" + path.string() + "' holds " + std::to_string(buf.groups.size()) +
                      " groups, header declares " + std::to_string(buf.header.groups));
  }
  return buf;
}

}  // namespace bgrto::rollout
