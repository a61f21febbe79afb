#include <map>
#include <set>

#include "bgrto/env.hpp"
#include "bgrto/errors.hpp"
#include "doctest.h"

using namespace bgrto;
using namespace bgrto::env;

namespace {

Mask rect_mask(int w, int h, const Rect& r) {
  Mask m(w, h);
  m.fill_rect(r);
  return m;
}

std::size_t color_token(const ActionGrammar& g, std::string_view name) {
  const auto& v = g.step_vocabularies[0];
  return static_cast<std::size_t>(std::find(v.begin(), v.end(), name) - v.begin());
}

}  // namespace

TEST_CASE("scene generation is deterministic") {
  const EnvConfig cfg;
  const auto a = generate_scene(7, Domain::kSource, cfg);
  const auto b = generate_scene(7, Domain::kSource, cfg);
  CHECK(a == b);
  CHECK(serialize_scene(a) == serialize_scene(b));
  CHECK(serialize_scene(a) != serialize_scene(generate_scene(8, Domain::kSource, cfg)));
}

TEST_CASE("small grids are rejected") {
  EnvConfig cfg;
  cfg.width = 5;
  CHECK_THROWS_AS(generate_scene(1, Domain::kSource, cfg), ConfigError);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("scene invariants over many seeds") {
  const EnvConfig cfg;
  bool saw_six = false;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    const auto s = generate_scene(seed, Domain::kTarget, cfg);
    REQUIRE(s.target_ids.size() == 1);
    const Rect r = s.target().rect;
    CHECK(s.gt_source == rect_mask(cfg.width, cfg.height, r));
    const Rect inner{r.x1 + 1, r.y1 + 1, r.x2 - 1, r.y2 - 1};
    CHECK(s.gt_target == rect_mask(cfg.width, cfg.height, inner));
    CHECK(&s.official_gt() == &s.gt_target);
    if (r.width() == 6 && r.height() == 6) {
      saw_six = true;
      CHECK(s.gt_target.count() == 16);
    }
    // Objects never touch, including diagonally.
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      for (std::size_t j = i + 1; j < s.objects.size(); ++j) {
        const Rect& p = s.objects[i].rect;
        const Rect& q = s.objects[j].rect;
        CHECK((p.x2 + 1 < q.x1 || q.x2 + 1 < p.x1 || p.y2 + 1 < q.y1 || q.y2 + 1 < p.y1));
      }
    }
    // The referent matches the instruction's concept.
    const int color = s.instruction[1] - vocab::kFirstColor;
    CHECK(s.target().color == color);
    if (s.instruction_template == Template::kSizeColor) {
      CHECK((s.instruction[0] == vocab::kSmall) == (s.target().size == SizeClass::kSmall));
    }
  }
  CHECK(saw_six);
}

TEST_CASE("unique color match is the target") {
  const EnvConfig cfg;
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = generate_scene(seed, Domain::kSource, cfg);
    if (s.instruction_template != Template::kColor) continue;
    std::vector<std::size_t> same;
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      if (s.objects[i].color == s.target().color) same.push_back(i);
    }
    if (same.size() != 1) continue;
    CHECK(s.target_ids == same);
    ++checked;
  }
  CHECK(checked > 10);
}

TEST_CASE("observation layout") {
  const EnvConfig cfg;
  CHECK(vocab::size(cfg.num_colors) == 12);
  CHECK(observation_size(cfg) == 1316);

  GridScene empty;
  empty.width = cfg.width;
  empty.height = cfg.height;
  empty.cells.assign(256, 0);
  empty.instruction = {vocab::kThe, vocab::kFirstColor, vocab::kObject};
  const auto obs = render_observation(empty, cfg);
  for (std::size_t i = 0; i < 256; ++i) {
    CHECK(obs[i * 5] == 1.0);
    for (std::size_t c = 1; c < 5; ++c) CHECK(obs[i * 5 + c] == 0.0);
  }

  auto other = empty;
  other.instruction = {vocab::kSmall, vocab::kFirstColor + 2, vocab::kOne};
  const auto obs2 = render_observation(other, cfg);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    if (obs[i] != obs2[i]) CHECK(i >= 256 * 5);
  }
  CHECK(obs != obs2);
}

TEST_CASE("action parsing") {
  const EnvConfig cfg;
  const auto g = ActionGrammar::for_config(cfg);
  REQUIRE(g.length() == 7);
  const std::size_t red = color_token(g, "red");
  const auto p = parse_action_tokens({red, 1, 2, 3, 5, 6, 0}, g);
  REQUIRE(p.has_value());
  CHECK(p->phrase == Concept{0, SizeSpec::kLarge});
  CHECK(p->boxes == std::vector<Rect>{{2, 3, 5, 6}});
  CHECK_FALSE(parse_action_tokens({red, 1, 5, 3, 2, 6, 0}, g).has_value());
  CHECK_THROWS_AS(parse_action_tokens({red, 1, 2}, g), UsageError);

  EnvConfig micro = cfg;
  micro.grammar = GrammarKind::kMicro;
  const auto mg = ActionGrammar::for_config(micro);
  CHECK(mg.sequence_count() == 36);
  const auto mp = parse_action_tokens({2, 4}, mg);
  REQUIRE(mp.has_value());
  CHECK(mp->phrase.color == 2);
  CHECK(mp->boxes == std::vector<Rect>{mg.preset_box(4)});
}

TEST_CASE("scripted demonstrations") {
  const EnvConfig cfg;
  const auto g = ActionGrammar::for_config(cfg);
  Rng rng(1);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = generate_scene(seed, Domain::kTarget, cfg);
    const auto p = parse_action_tokens(scripted_demonstration(s, g, 0.0, rng), g);
    REQUIRE(p.has_value());
    CHECK(p->boxes.front() == s.target().rect);
  }

  // Full noise: every step is uniform over its vocabulary.
  const auto s = generate_scene(3, Domain::kTarget, cfg);
  std::map<std::size_t, std::size_t> counts;
  constexpr std::size_t kDraws = 20000;
  for (std::size_t k = 0; k < kDraws; ++k) counts[scripted_demonstration(s, g, 1.0, rng)[2]]++;
  CHECK(counts.size() == 16);
  for (const auto& [tok, n] : counts) CHECK(std::abs(static_cast<double>(n) / kDraws - 1.0 / 16) < 0.01);

  // Noise 0.1: a corrupted token is redrawn uniformly and may land on the
  // clean token, so the observed change rate is 0.1 * (1 - 1/|V_t|).
  const auto clean = scripted_demonstration(s, g, 0.0, rng);
  double expected = 0.0;
  for (std::size_t t = 0; t < g.length(); ++t) expected += 0.1 * (1.0 - 1.0 / g.step_size(t));
  expected /= static_cast<double>(g.length());
  std::size_t changed = 0;
  constexpr std::size_t kSeqs = 10000;
  for (std::size_t k = 0; k < kSeqs; ++k) {
    const auto noisy = scripted_demonstration(s, g, 0.1, rng);
    for (std::size_t t = 0; t < g.length(); ++t) changed += noisy[t] != clean[t];
  }
  const double rate = static_cast<double>(changed) / (kSeqs * g.length());
  CHECK(std::abs(rate - expected) < 0.01);
}

TEST_CASE("erosion ceiling") {
  CHECK(erosion_ceiling({0, 0, 5, 5}) == doctest::Approx(16.0 / 36.0));
  CHECK(erosion_ceiling({0, 0, 2, 2}) == doctest::Approx(1.0 / 9.0));
}

TEST_CASE("config hash is stable and sensitive") {
  EnvConfig a;
  EnvConfig b;
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  b.num_colors = 5;
  CHECK(a.hash() != b.hash());
}
