#include "bgrto/config.hpp"
#include "bgrto/errors.hpp"
#include "bgrto/io.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace bgrto;
using namespace bgrto::config;

TEST_CASE("empty document gives defaults") {
  const auto c = parse_config_text("{}");
  CHECK(c == RunConfig{});
  CHECK(c.train.beta_kl == 0.01);
  CHECK(c.train.eps_clip == 0.2);
  CHECK(c.train.group_size == 8);
  CHECK(c.train.mode == schedules::Mode::kGrpo);
}

TEST_CASE("constraint violations") {
  CHECK_THROWS_AS(parse_config_text(R"({"beta_kl": -1})"), ConfigError);
  try {
    parse_config_text(R"({"beta_kl": -1, "group_size": "eight", "bogus": 1, "env": {"width": 4}})");
    FAIL("bad config accepted");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("beta_kl") != std::string::npos);
    CHECK(msg.find("group_size") != std::string::npos);
    CHECK(msg.find("bogus") != std::string::npos);
    CHECK(msg.find("env.width") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config_text(R"({"mode": "ppo"})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[1, 2]"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("{not json"), ConfigError);
}

TEST_CASE("round trip") {
  auto c = parse_config_text(R"({"mode": "b_grto", "bto": {"beta": 0.05}, "env": {"num_colors": 5},
                                 "model": {"tool_hidden": 16}, "paths": {"buffer": "b.jsonl"}})");
  CHECK(c.train.mode == schedules::Mode::kBGrto);
  CHECK(c.train.bto.beta == 0.05);
  CHECK(c.env.num_colors == 5);
  const auto again = from_json(to_json(c));
  CHECK(again == c);
  CHECK(to_json(again).dump() == to_json(c).dump());
}

TEST_CASE("overrides") {
  nlohmann::json doc = nlohmann::json::object();
  apply_override(doc, "bto.beta=0.02");
  apply_override(doc, "mode=grto");
  apply_override(doc, "epochs=3");
  const auto c = from_json(doc);
  CHECK(c.train.bto.beta == 0.02);
  CHECK(c.train.mode == schedules::Mode::kGrto);
  CHECK(c.train.epochs == 3);
  CHECK_THROWS_AS(apply_override(doc, "no_equals_sign"), ConfigError);

  TempDir dir("config");
  io::atomic_write(dir / "c.json", R"({"epochs": 5, "seed": 3})");
  const std::vector<std::string> sets{"epochs=7"};
  const auto loaded = load_with_overrides(dir / "c.json", sets);
  CHECK(loaded.train.epochs == 7);
  CHECK(loaded.train.seed == 3);
  CHECK(load_with_overrides({}, {}) == RunConfig{});
  CHECK_THROWS_AS(parse_config(dir / "missing.json"), ConfigError);
}

TEST_CASE("compatibility hash") {
  RunConfig a;
  RunConfig b;
  b.train.epochs = 99;
  CHECK(a.compat_hash() == b.compat_hash());
  b.model.tool_hidden = 7;
  CHECK(a.compat_hash() != b.compat_hash());
}
