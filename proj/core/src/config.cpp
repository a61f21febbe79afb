#include "bgrto/config.hpp"

#include <limits>
#include <set>
#include <type_traits>
#include <vector>

#include "bgrto/errors.hpp"
#include "bgrto/io.hpp"

namespace bgrto::config {

using nlohmann::json;

namespace {

// Every section lists its fields once; the reader and the writer share the
// listing so the two directions cannot drift apart.

template <class V>
void visit(V& v, objectives::RewardWeights& c) {
  v("iou", c.iou);
  v("format", c.format);
}

template <class V>
void visit(V& v, schedules::BtoConfig& c) {
  v("buffer_path", c.buffer_path);
  v("beta", c.beta);
  v("epochs", c.epochs);
  v("lr_tool", c.lr_tool);
  v("frozen_rewards", c.frozen_rewards);
  v("buffer_scenes", c.buffer_scenes);
  v("buffer_passes", c.buffer_passes);
  v("buffer_seed", c.buffer_seed);
  v("group_size", c.group_size);
}

template <class V>
void visit(V& v, schedules::ValidationConfig& c) {
  v("scenes", c.scenes);
  v("seed", c.seed);
  v("metric", c.metric);
}

template <class V>
void visit(V& v, schedules::ReverseSeqConfig& c) {
  v("epochs", c.epochs);
  v("lr_tool", c.lr_tool);
}

template <class V>
void visit(V& v, env::EnvConfig& c) {
  v("width", c.width);
  v("height", c.height);
  v("min_objects", c.min_objects);
  v("max_objects", c.max_objects);
  v("num_colors", c.num_colors);
  v("min_side", c.min_side);
  v("max_side", c.max_side);
  v("area_threshold", c.area_threshold);
  v("grammar", c.grammar);
}

template <class V>
void visit(V& v, models::ModelConfig& c) {
  v("policy_hidden", c.policy_hidden);
  v("tool_hidden", c.tool_hidden);
  v("concept_dim", c.concept_dim);
}

template <class V>
void visit(V& v, PretrainConfig& c) {
  v("scenes", c.scenes);
  v("epochs", c.epochs);
  v("lr", c.lr);
  v("batch", c.batch);
  v("seed", c.seed);
}

template <class V>
void visit(V& v, WarmupConfig& c) {
  v("demos", c.demos);
  v("noise", c.noise);
  v("epochs", c.epochs);
  v("lr", c.lr);
  v("batch", c.batch);
  v("seed", c.seed);
  v("probe_scenes", c.probe_scenes);
  v("min_validity", c.min_validity);
}

template <class V>
void visit(V& v, EvalConfig& c) {
  v("scenes", c.scenes);
  v("seed", c.seed);
}

template <class V>
void visit(V& v, Paths& c) {
  v("workdir", c.workdir);
  v("tool0", c.tool0);
  v("policy0", c.policy0);
  v("buffer", c.buffer);
  v("runs", c.runs);
}

template <class V>
void visit(V& v, RunConfig& c) {
  auto& t = c.train;
  v("mode", t.mode);
  v("lr_policy", t.lr_policy);
  v("lr_tool", t.lr_tool);
  v("second_stage_tool_lr_scale", t.second_stage_tool_lr_scale);
  v("beta_kl", t.beta_kl);
  v("eps_clip", t.eps_clip);
  v("group_size", t.group_size);
  v("scenes_per_epoch", t.scenes_per_epoch);
  v("epochs", t.epochs);
  v("groups_per_step", t.groups_per_step);
  v("grad_clip_norm", t.grad_clip_norm);
  v("temperature", t.temperature);
  v("seed", t.seed);
  v("max_length", t.max_length);
  v("domain", t.domain);
  v("reward_weights", t.reward_weights);
  v("mask_threshold", t.mask_threshold);
  v("bto", t.bto);
  v("validation", t.validation);
  v("reverse_seq", t.reverse_seq);
  v("check_invariants", t.check_invariants);
  v("record_wall_ms", t.record_wall_ms);
  v("env", c.env);
  v("model", c.model);
  v("pretrain", c.pretrain);
  v("warmup", c.warmup);
  v("eval", c.eval);
  v("paths", c.paths);
}

class Writer {
 public:
  json doc = json::object();

  void operator()(const char* key, bool v) { doc[key] = v; }
  void operator()(const char* key, int v) { doc[key] = v; }
  void operator()(const char* key, std::size_t v) { doc[key] = v; }
  void operator()(const char* key, double v) { doc[key] = v; }
  void operator()(const char* key, const std::string& v) { doc[key] = v; }
  void operator()(const char* key, schedules::Mode v) { doc[key] = std::string(schedules::to_string(v)); }
  void operator()(const char* key, env::Domain v) { doc[key] = std::string(env::to_string(v)); }
  void operator()(const char* key, env::GrammarKind v) { doc[key] = std::string(env::to_string(v)); }

  template <class S>
    requires std::is_class_v<S> && (!std::is_same_v<S, std::string>)
  void operator()(const char* key, S& section) {
    Writer w;
    visit(w, section);
    doc[key] = std::move(w.doc);
  }
};

class Reader {
 public:
  Reader(const json& doc, std::string prefix, std::vector<std::string>& errors)
      : doc_(doc), prefix_(std::move(prefix)), errors_(errors) {
    if (!doc_.is_object()) {
      errors_.push_back((prefix_.empty() ? std::string("document") : prefix_) + ": expected a JSON object");
    }
  }

  void finish() {
    if (!doc_.is_object()) return;
    for (const auto& [key, _] : doc_.items()) {
      if (!seen_.contains(key)) errors_.push_back(path(key.c_str()) + ": unknown key");
    }
  }

  void operator()(const char* key, bool& v) {
    read(key, [&](const json& j) {
      if (!j.is_boolean()) return false;
      v = j.get<bool>();
      return true;
    }, "a boolean");
  }
  void operator()(const char* key, int& v) {
    read(key, [&](const json& j) {
      if (!j.is_number_integer()) return false;
      const auto x = j.get<std::int64_t>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) return false;
      v = static_cast<int>(x);
      return true;
    }, "an integer");
  }
  void operator()(const char* key, std::size_t& v) {
    read(key, [&](const json& j) {
      if (j.is_number_unsigned()) {
        v = j.get<std::size_t>();
        return true;
      }
      return false;
    }, "a non-negative integer");
  }
  void operator()(const char* key, double& v) {
    read(key, [&](const json& j) {
      if (!j.is_number()) return false;
      v = j.get<double>();
      return true;
    }, "a number");
  }
  void operator()(const char* key, std::string& v) {
    read(key, [&](const json& j) {
      if (!j.is_string()) return false;
      v = j.get<std::string>();
      return true;
    }, "a string");
  }
  void operator()(const char* key, schedules::Mode& v) { read_enum(key, v, schedules::parse_mode); }
  void operator()(const char* key, env::Domain& v) { read_enum(key, v, env::parse_domain); }
  void operator()(const char* key, env::GrammarKind& v) { read_enum(key, v, env::parse_grammar); }

  template <class S>
    requires std::is_class_v<S> && (!std::is_same_v<S, std::string>)
  void operator()(const char* key, S& section) {
    seen_.insert(key);
    if (!doc_.is_object() || !doc_.contains(key)) return;
    Reader sub(doc_.at(key), path(key), errors_);
    if (doc_.at(key).is_object()) {
      visit(sub, section);
      sub.finish();
    }
  }

 private:
  std::string path(const char* key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  template <class F>
  void read(const char* key, F&& assign, const char* expected) {
    seen_.insert(key);
    if (!doc_.is_object() || !doc_.contains(key)) return;
    const json& j = doc_.at(key);
    if (!assign(j)) errors_.push_back(path(key) + ": expected " + expected + ", got " + j.dump());
  }

  template <class E, class P>
  void read_enum(const char* key, E& v, P parse) {
    seen_.insert(key);
    if (!doc_.is_object() || !doc_.contains(key)) return;
    const json& j = doc_.at(key);
    if (!j.is_string()) {
      errors_.push_back(path(key) + ": expected a string, got " + j.dump());
      return;
    }
    try {
      v = parse(j.get<std::string>());
    } catch (const Error& e) {
      errors_.push_back(path(key) + ": " + e.what());
    }
  }

  const json& doc_;
  std::string prefix_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

void collect(std::vector<std::string>& errors, auto&& check) {
  try {
    check();
  } catch (const ConfigError& e) {
    errors.emplace_back(e.what());
  }
}

[[noreturn]] void raise(const std::vector<std::string>& errors) {
  std::string msg = "invalid config (" + std::to_string(errors.size()) + " problem" + (errors.size() == 1 ? "" : "s") + "):";
  for (const auto& e : errors) msg += " " + e + ";";
  throw ConfigError(msg);
}

}  // namespace

void RunConfig::validate() const {
  std::vector<std::string> errors;
  collect(errors, [&] { train.validate(); });
  collect(errors, [&] { env.validate(); });
  collect(errors, [&] { model.validate(); });
  auto need = [&](bool ok, const char* msg) {
    if (!ok) errors.emplace_back(msg);
  };
  need(pretrain.scenes >= 1 && pretrain.epochs >= 1 && pretrain.batch >= 1, "pretrain.scenes, epochs and batch must be >= 1");
  need(pretrain.lr > 0.0, "pretrain.lr must be positive");
  need(warmup.demos >= 1 && warmup.epochs >= 1 && warmup.batch >= 1, "warmup.demos, epochs and batch must be >= 1");
  need(warmup.lr > 0.0, "warmup.lr must be positive");
  need(warmup.noise >= 0.0 && warmup.noise <= 1.0, "warmup.noise must lie in [0, 1]");
  need(warmup.min_validity >= 0.0 && warmup.min_validity <= 1.0, "warmup.min_validity must lie in [0, 1]");
  need(eval.scenes >= 1, "eval.scenes must be >= 1");
  if (!errors.empty()) raise(errors);
}

std::string RunConfig::compat_hash() const {
  RunConfig copy = *this;
  Writer w;
  w("env", copy.env);
  w("model", copy.model);
  return io::hex64(fnv1a64(w.doc.dump()));
}

json to_json(const RunConfig& c) {
  RunConfig copy = c;
  Writer w;
  visit(w, copy);
  return w.doc;
}

RunConfig from_json(const json& doc) {
  RunConfig c;
  std::vector<std::string> errors;
  Reader r(doc, "", errors);
  visit(r, c);
  r.finish();
  collect(errors, [&] { c.validate(); });
  if (!errors.empty()) raise(errors);
  return c;
}

RunConfig parse_config_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(doc);
}

RunConfig parse_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
  return parse_config_text(io::read_file(path));
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig load_with_overrides(const std::filesystem::path& path, std::span<const std::string> overrides) {
  json doc = json::object();
  if (!path.empty()) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file '" + path.string() + "' does not exist");
    try {
      doc = json::parse(io::read_file(path));
    } catch (const json::exception& e) {
      throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return from_json(doc);
}

}  // namespace bgrto::config
