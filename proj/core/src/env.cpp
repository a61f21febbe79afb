#include "bgrto/env.hpp"

#include <algorithm>
#include <sstream>

#include "bgrto/errors.hpp"
#include "bgrto/io.hpp"

namespace bgrto::env {

namespace {

constexpr std::array<std::string_view, 8> kColorNames = {"red",  "green", "blue", "yellow",
                                                         "cyan", "magenta", "orange", "purple"};
constexpr int kMaxAttempts = 10000;

Rect grow(const Rect& r) { return {r.x1 - 1, r.y1 - 1, r.x2 + 1, r.y2 + 1}; }

bool intersects(const Rect& a, const Rect& b) {
  return a.x1 <= b.x2 && b.x1 <= a.x2 && a.y1 <= b.y2 && b.y1 <= a.y2;
}

Rect eroded(const Rect& r) { return {r.x1 + 1, r.y1 + 1, r.x2 - 1, r.y2 - 1}; }

SizeClass size_of(const Rect& r, int threshold) {
  return r.area() <= threshold ? SizeClass::kSmall : SizeClass::kLarge;
}

double rect_iou(const Rect& a, const Rect& b) {
  const int ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1) + 1;
  const int iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1) + 1;
  const int inter = (ix > 0 && iy > 0) ? ix * iy : 0;
  return static_cast<double>(inter) / static_cast<double>(a.area() + b.area() - inter);
}

std::size_t size_token(SizeClass s) { return s == SizeClass::kSmall ? 0 : 1; }

}  // namespace

std::string_view to_string(Domain d) noexcept { return d == Domain::kSource ? "source" : "target"; }

Domain parse_domain(std::string_view s) {
  if (s == "source") return Domain::kSource;
  if (s == "target") return Domain::kTarget;
  throw UsageError("unknown domain '" + std::string(s) + "' (expected source|target)");
}

std::string_view to_string(GrammarKind g) noexcept {
  return g == GrammarKind::kStandard ? "standard" : "micro";
}

GrammarKind parse_grammar(std::string_view s) {
  if (s == "standard") return GrammarKind::kStandard;
  if (s == "micro") return GrammarKind::kMicro;
  throw UsageError("unknown grammar '" + std::string(s) + "' (expected standard|micro)");
}

std::string_view color_name(int color) {
  return kColorNames.at(static_cast<std::size_t>(color));
}

void EnvConfig::validate() const {
  std::vector<std::string> errs;
  if (width < 6 || height < 6) {
    errs.push_back("env.width and env.height must be >= 6 (one-cell erosion would empty every mask)");
  }
  if (min_objects < 1) errs.push_back("env.min_objects must be >= 1");
  if (max_objects < min_objects) errs.push_back("env.max_objects must be >= env.min_objects");
  if (num_colors < 1 || num_colors > static_cast<int>(kColorNames.size())) {
    errs.push_back("env.num_colors must lie in [1, 8]");
  }
  if (min_side < 1) errs.push_back("env.min_side must be >= 1");
  if (max_side < std::max(min_side, 3)) errs.push_back("env.max_side must be >= max(env.min_side, 3)");
  if (max_side > std::min(width, height)) errs.push_back("env.max_side must fit inside the grid");
  if (area_threshold < 0) errs.push_back("env.area_threshold must be >= 0");
  if (!errs.empty()) {
    std::string msg = "invalid env config:";
    for (const auto& e : errs) msg += " " + e + ";";
    throw ConfigError(msg);
  }
}

std::string EnvConfig::canonical() const {
  std::ostringstream os;
  os << "width=" << width << ";height=" << height << ";min_objects=" << min_objects
     << ";max_objects=" << max_objects << ";num_colors=" << num_colors << ";min_side=" << min_side
     << ";max_side=" << max_side << ";area_threshold=" << area_threshold
     << ";grammar=" << to_string(grammar) << ";";
  return os.str();
}

std::string EnvConfig::hash() const {
  return io::hex64(fnv1a64(canonical()));
}

std::size_t Mask::count() const noexcept {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

void Mask::fill_rect(const Rect& r) {
  for (int y = r.y1; y <= r.y2; ++y) {
    for (int x = r.x1; x <= r.x2; ++x) set(x, y, true);
  }
}

std::string GridScene::instruction_text() const {
  std::string out = "the";
  for (int tok : instruction) {
    switch (tok) {
      case vocab::kThe: break;
      case vocab::kSmall: out += " small"; break;
      case vocab::kLarge: out += " large"; break;
      case vocab::kObject: out += " object"; break;
      case vocab::kOne: out += " one"; break;
      default:
        if (tok >= vocab::kFirstColor) out += " " + std::string(color_name(tok - vocab::kFirstColor));
        break;
    }
  }
  return out;
}

GridScene generate_scene(std::uint64_t seed, Domain domain, const EnvConfig& config) {
  config.validate();
  Rng rng = Rng::keyed(seed, "scene");

  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    GridScene scene;
    scene.width = config.width;
    scene.height = config.height;
    scene.seed = seed;
    scene.domain = domain;

    const int wanted = rng.uniform_int(config.min_objects, config.max_objects);
    for (int k = 0; k < wanted; ++k) {
      for (int tries = 0; tries < 64; ++tries) {
        const int w = rng.uniform_int(config.min_side, config.max_side);
        const int h = rng.uniform_int(config.min_side, config.max_side);
        const int x1 = rng.uniform_int(0, config.width - w);
        const int y1 = rng.uniform_int(0, config.height - h);
        const Rect r{x1, y1, x1 + w - 1, y1 + h - 1};
        // A one-cell background gap keeps every object border visible.
        const bool clash = std::any_of(scene.objects.begin(), scene.objects.end(),
                                       [&](const SceneObject& o) { return intersects(grow(o.rect), r); });
        if (clash) continue;
        const int color = rng.uniform_int(0, config.num_colors - 1);
        scene.objects.push_back({r, color, size_of(r, config.area_threshold)});
        break;
      }
    }
    if (static_cast<int>(scene.objects.size()) < config.min_objects) continue;

    const std::size_t intended = rng.uniform_index(scene.objects.size());
    const SceneObject& ref = scene.objects[intended];
    scene.instruction_template = static_cast<Template>(rng.uniform_index(3));
    switch (scene.instruction_template) {
      case Template::kColor:
        scene.instruction = {vocab::kThe, vocab::kFirstColor + ref.color, vocab::kObject};
        break;
      case Template::kSizeColor:
        scene.instruction = {ref.size == SizeClass::kSmall ? vocab::kSmall : vocab::kLarge,
                             vocab::kFirstColor + ref.color, vocab::kObject};
        break;
      case Template::kColorOne:
        scene.instruction = {vocab::kThe, vocab::kFirstColor + ref.color, vocab::kOne};
        break;
    }

    // Every matching object is a candidate; the largest one (lowest index on
    // ties) is the referent.
    std::size_t best = scene.objects.size();
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      const SceneObject& o = scene.objects[i];
      if (o.color != ref.color) continue;
      if (scene.instruction_template == Template::kSizeColor && o.size != ref.size) continue;
      if (best == scene.objects.size() || o.rect.area() > scene.objects[best].rect.area()) best = i;
    }
    const Rect& tr = scene.objects[best].rect;
    if (tr.width() < 3 || tr.height() < 3) continue;
    scene.target_ids = {best};

    scene.cells.assign(static_cast<std::size_t>(config.width * config.height), 0);
    for (const auto& o : scene.objects) {
      for (int y = o.rect.y1; y <= o.rect.y2; ++y) {
        for (int x = o.rect.x1; x <= o.rect.x2; ++x) {
          scene.cells[static_cast<std::size_t>(y * config.width + x)] =
              static_cast<std::uint8_t>(o.color + 1);
        }
      }
    }
    scene.gt_source = Mask(config.width, config.height);
    scene.gt_target = Mask(config.width, config.height);
    for (auto id : scene.target_ids) {
      scene.gt_source.fill_rect(scene.objects[id].rect);
      scene.gt_target.fill_rect(eroded(scene.objects[id].rect));
    }
    return scene;
  }
  throw ConfigError("could not place objects after " + std::to_string(kMaxAttempts) +
                    " attempts; grid too small for env.min_objects");
}

std::string serialize_scene(const GridScene& scene) {
  std::ostringstream os;
  os << "scene " << scene.width << ' ' << scene.height << ' ' << scene.seed << ' '
     << to_string(scene.domain) << '\n';
  for (const auto& o : scene.objects) {
    os << "object " << o.rect.x1 << ' ' << o.rect.y1 << ' ' << o.rect.x2 << ' ' << o.rect.y2 << ' '
       << o.color << ' ' << static_cast<int>(o.size) << '\n';
  }
  os << "instruction " << static_cast<int>(scene.instruction_template);
  for (int t : scene.instruction) os << ' ' << t;
  os << "\ntargets";
  for (auto t : scene.target_ids) os << ' ' << t;
  os << '\n';
  return os.str();
}

std::size_t observation_size(const EnvConfig& config) noexcept {
  return static_cast<std::size_t>(config.width * config.height * (config.num_colors + 1)) +
         kInstructionLength * static_cast<std::size_t>(vocab::size(config.num_colors));
}

Tensor render_observation(const GridScene& scene, const EnvConfig& config) {
  const auto channels = static_cast<std::size_t>(config.num_colors + 1);
  const auto v = static_cast<std::size_t>(vocab::size(config.num_colors));
  Tensor obs({observation_size(config)}, 0.0);
  for (std::size_t i = 0; i < scene.cells.size(); ++i) obs[i * channels + scene.cells[i]] = 1.0;
  const std::size_t base = scene.cells.size() * channels;
  for (std::size_t t = 0; t < kInstructionLength; ++t) {
    obs[base + t * v + static_cast<std::size_t>(scene.instruction[t])] = 1.0;
  }
  return obs;
}

std::size_t concept_index(const Concept& c) noexcept {
  return static_cast<std::size_t>(c.color) * 3 + static_cast<std::size_t>(c.size);
}

std::size_t concept_count(int num_colors) noexcept { return static_cast<std::size_t>(num_colors) * 3; }

std::size_t ActionGrammar::sequence_count() const noexcept {
  std::size_t n = 1;
  for (const auto& v : step_vocabularies) n *= v.size();
  return n;
}

Rect ActionGrammar::preset_box(std::size_t id) const {
  if (id >= kPresetBoxCount) throw UsageError("preset box id out of range");
  // 3 x 3 half-size windows at quarter offsets.
  const int col = static_cast<int>(id % 3);
  const int row = static_cast<int>(id / 3);
  const int x1 = col * width / 4;
  const int y1 = row * height / 4;
  return {x1, y1, std::min(width - 1, x1 + width / 2 - 1), std::min(height - 1, y1 + height / 2 - 1)};
}

ActionGrammar ActionGrammar::for_config(const EnvConfig& config) {
  ActionGrammar g;
  g.kind = config.grammar;
  g.width = config.width;
  g.height = config.height;
  g.num_colors = config.num_colors;

  std::vector<std::string> colors;
  for (int c = 0; c < config.num_colors; ++c) colors.emplace_back(color_name(c));
  const auto coords = [](int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back(std::to_string(i));
    return out;
  };

  if (config.grammar == GrammarKind::kStandard) {
    g.step_vocabularies = {colors,
                           {"small", "large", "any"},
                           coords(config.width),
                           coords(config.height),
                           coords(config.width),
                           coords(config.height),
                           {"<eos>"}};
  } else {
    std::vector<std::string> boxes;
    for (std::size_t b = 0; b < kPresetBoxCount; ++b) boxes.push_back("box" + std::to_string(b));
    g.step_vocabularies = {colors, boxes};
  }
  return g;
}

std::optional<ToolPrompt> parse_action_tokens(const TokenSeq& tokens, const ActionGrammar& grammar) {
  if (tokens.size() != grammar.length()) {
    throw UsageError("action sequence has " + std::to_string(tokens.size()) + " tokens, grammar needs " +
                     std::to_string(grammar.length()));
  }
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= grammar.step_size(t)) return std::nullopt;
  }

  ToolPrompt prompt;
  prompt.phrase.color = static_cast<int>(tokens[0]);
  if (grammar.kind == GrammarKind::kMicro) {
    prompt.phrase.size = SizeSpec::kAny;
    prompt.boxes = {grammar.preset_box(tokens[1])};
    return prompt;
  }

  prompt.phrase.size = static_cast<SizeSpec>(tokens[1]);
  const Rect box{static_cast<int>(tokens[2]), static_cast<int>(tokens[3]), static_cast<int>(tokens[4]),
                 static_cast<int>(tokens[5])};
  if (box.x1 > box.x2 || box.y1 > box.y2) return std::nullopt;
  if (box.x2 >= grammar.width || box.y2 >= grammar.height) return std::nullopt;
  prompt.boxes = {box};
  return prompt;
}

TokenSeq scripted_demonstration(const GridScene& scene, const ActionGrammar& grammar, double noise,
                                Rng& rng) {
  if (!(noise >= 0.0 && noise <= 1.0)) throw UsageError("demonstration noise must lie in [0, 1]");
  const SceneObject& target = scene.target();
  TokenSeq tokens;
  tokens.push_back(static_cast<std::size_t>(target.color));
  if (grammar.kind == GrammarKind::kStandard) {
    tokens.push_back(size_token(target.size));
    tokens.push_back(static_cast<std::size_t>(target.rect.x1));
    tokens.push_back(static_cast<std::size_t>(target.rect.y1));
    tokens.push_back(static_cast<std::size_t>(target.rect.x2));
    tokens.push_back(static_cast<std::size_t>(target.rect.y2));
    tokens.push_back(0);
  } else {
    std::size_t best = 0;
    double best_iou = -1.0;
    for (std::size_t b = 0; b < kPresetBoxCount; ++b) {
      const double iou = rect_iou(grammar.preset_box(b), target.rect);
      if (iou > best_iou) {
        best_iou = iou;
        best = b;
      }
    }
    tokens.push_back(best);
  }
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    // Both draws are always consumed so the stream position is independent of noise.
    const double u = rng.uniform();
    const std::size_t replacement = rng.uniform_index(grammar.step_size(t));
    if (u < noise) tokens[t] = replacement;
  }
  return tokens;
}

ToolPrompt oracle_prompt(const GridScene& scene, bool wildcard_size) {
  const SceneObject& target = scene.target();
  ToolPrompt p;
  p.phrase.color = target.color;
  p.phrase.size = wildcard_size ? SizeSpec::kAny
                                : (target.size == SizeClass::kSmall ? SizeSpec::kSmall : SizeSpec::kLarge);
  p.boxes = {target.rect};
  return p;
}

double erosion_ceiling(const Rect& r) noexcept {
  const int w = std::max(0, r.width() - 2);
  const int h = std::max(0, r.height() - 2);
  return static_cast<double>(w * h) / static_cast<double>(r.area());
}

}  // namespace bgrto::env
