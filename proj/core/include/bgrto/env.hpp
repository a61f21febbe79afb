#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bgrto/rng.hpp"
#include "bgrto/tensor.hpp"

namespace bgrto::env {

enum class Domain : std::uint8_t { kSource, kTarget };
std::string_view to_string(Domain d) noexcept;
Domain parse_domain(std::string_view s);

enum class GrammarKind : std::uint8_t { kStandard, kMicro };
std::string_view to_string(GrammarKind g) noexcept;
GrammarKind parse_grammar(std::string_view s);

enum class SizeClass : std::uint8_t { kSmall, kLarge };
/// Size slot of a concept: a concrete class or "any".
enum class SizeSpec : std::uint8_t { kSmall = 0, kLarge = 1, kAny = 2 };

struct EnvConfig {
  int width = 16;
  int height = 16;
  int min_objects = 2;
  int max_objects = 4;
  int num_colors = 4;
  int min_side = 3;
  int max_side = 7;
  /// Objects with area <= this are "small".
  int area_threshold = 20;
  GrammarKind grammar = GrammarKind::kStandard;

  /// Throws ConfigError listing every violated constraint.
  void validate() const;
  /// Canonical "key=value;" text of every field; stable across runs.
  std::string canonical() const;
  /// 16-hex-digit FNV-1a digest of canonical().
  std::string hash() const;
  bool operator==(const EnvConfig&) const = default;
};

/// Inclusive cell bounds.
struct Rect {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  int width() const noexcept { return x2 - x1 + 1; }
  int height() const noexcept { return y2 - y1 + 1; }
  int area() const noexcept { return width() * height(); }
  bool contains(int x, int y) const noexcept { return x >= x1 && x <= x2 && y >= y1 && y <= y2; }
  bool operator==(const Rect&) const = default;
};

/// Binary H x W mask, row-major.
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height) : width_(width), height_(height), cells_(width * height, 0) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return cells_.size(); }

  bool at(int x, int y) const { return cells_[y * width_ + x] != 0; }
  void set(int x, int y, bool v) { cells_[y * width_ + x] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return cells_[i] != 0; }
  void set(std::size_t i, bool v) { cells_[i] = v ? 1 : 0; }

  std::size_t count() const noexcept;
  void fill_rect(const Rect& r);
  bool operator==(const Mask&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> cells_;
};

struct SceneObject {
  Rect rect;
  int color = 0;
  SizeClass size = SizeClass::kSmall;
  bool operator==(const SceneObject&) const = default;
};

enum class Template : std::uint8_t { kColor, kSizeColor, kColorOne };

/// Instruction vocabulary. Colors occupy ids kFirstColor .. kFirstColor+C-1.
namespace vocab {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kThe = 3;
inline constexpr int kSmall = 4;
inline constexpr int kLarge = 5;
inline constexpr int kObject = 6;
inline constexpr int kOne = 7;
inline constexpr int kFirstColor = 8;
inline constexpr int size(int num_colors) { return kFirstColor + num_colors; }
}  // namespace vocab

inline constexpr std::size_t kInstructionLength = 3;

std::string_view color_name(int color);

struct GridScene {
  int width = 0;
  int height = 0;
  std::vector<SceneObject> objects;
  /// Per cell: 0 background, c + 1 for color c.
  std::vector<std::uint8_t> cells;
  Template instruction_template = Template::kColor;
  std::array<int, kInstructionLength> instruction{};
  std::vector<std::size_t> target_ids;
  Mask gt_source;
  Mask gt_target;
  std::uint64_t seed = 0;
  Domain domain = Domain::kSource;

  const Mask& official_gt() const noexcept {
    return domain == Domain::kSource ? gt_source : gt_target;
  }
  const SceneObject& target() const { return objects.at(target_ids.front()); }
  std::string instruction_text() const;
  bool operator==(const GridScene&) const = default;
};

GridScene generate_scene(std::uint64_t seed, Domain domain, const EnvConfig& config);

/// Canonical text form; equal scenes serialize to identical bytes.
std::string serialize_scene(const GridScene& scene);

/// [cell one-hot color (C+1 channels) for every cell | one-hot instruction tokens].
Tensor render_observation(const GridScene& scene, const EnvConfig& config);
std::size_t observation_size(const EnvConfig& config) noexcept;

struct Concept {
  int color = 0;
  SizeSpec size = SizeSpec::kAny;
  bool operator==(const Concept&) const = default;
};

/// Row of the concept-embedding table: color * 3 + size slot.
std::size_t concept_index(const Concept& c) noexcept;
std::size_t concept_count(int num_colors) noexcept;

struct ToolPrompt {
  Concept phrase;
  std::vector<Rect> boxes;
  bool operator==(const ToolPrompt&) const = default;
};

using TokenSeq = std::vector<std::size_t>;

/// Fixed-length grammar; tokens are indices into each step's vocabulary.
struct ActionGrammar {
  GrammarKind kind = GrammarKind::kStandard;
  std::vector<std::vector<std::string>> step_vocabularies;
  int width = 0;
  int height = 0;
  int num_colors = 0;

  std::size_t length() const noexcept { return step_vocabularies.size(); }
  std::size_t step_size(std::size_t t) const { return step_vocabularies.at(t).size(); }
  /// Number of distinct token sequences.
  std::size_t sequence_count() const noexcept;
  Rect preset_box(std::size_t id) const;

  static ActionGrammar for_config(const EnvConfig& config);
};

inline constexpr std::size_t kPresetBoxCount = 9;

/// nullopt for an unparseable sequence. Throws UsageError on wrong length.
std::optional<ToolPrompt> parse_action_tokens(const TokenSeq& tokens, const ActionGrammar& grammar);

/// Correct tokens for the target object, each replaced by a uniform in-vocabulary
/// token with probability `noise`.
TokenSeq scripted_demonstration(const GridScene& scene, const ActionGrammar& grammar, double noise,
                                Rng& rng);

/// Prompt naming the target's true concept and rectangle.
ToolPrompt oracle_prompt(const GridScene& scene, bool wildcard_size = false);

/// IoU ceiling of a source-convention mask scored against one-cell-eroded truth.
double erosion_ceiling(const Rect& r) noexcept;

}  // namespace bgrto::env
