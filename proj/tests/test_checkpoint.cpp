#include "bgrto/checkpoint.hpp"
#include "bgrto/errors.hpp"
#include "bgrto/io.hpp"
#include "bgrto/models.hpp"
#include "bgrto/pipeline.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace bgrto;
using namespace bgrto::checkpoint;

namespace {

Checkpoint sample() {
  const models::Shapes shapes{env::EnvConfig{}, models::ModelConfig{}};
  Checkpoint c;
  c.metadata = {{"mode", "grpo"}, {"epoch", 3}, {"seed", 1}, {"config_hash", "abc"}};
  c.tensors = models::policy_init(4, shapes);
  c.tensors["policy/odd"] = Tensor({2}, {-0.0, 1e-310});
  return c;
}

}  // namespace

TEST_CASE("round trip is bit exact") {
  TempDir dir("ckpt");
  const auto c = sample();
  save_checkpoint(dir / "a.ckpt", c);
  const auto back = load_checkpoint(dir / "a.ckpt", "abc");
  CHECK(bit_equal(c, back));
  CHECK(encode(back) == io::read_file(dir / "a.ckpt"));
  CHECK_FALSE(back.metadata.contains("tensor_count"));
}

TEST_CASE("tensor count of the default policy") {
  const config::RunConfig cfg;
  const auto shapes = pipeline::shapes_for(cfg);
  const auto policy = models::policy_init(0, shapes);
  const auto c = pipeline::make_checkpoint(cfg, {"policy", "grpo", "grpo", 1, 0, 0.5}, &policy, nullptr);
  const auto bytes = encode(c);
  CHECK(decode(bytes).tensors.size() == policy.size());
  CHECK(bytes.find("\"tensor_count\":" + std::to_string(policy.size())) != std::string::npos);
  CHECK(decode(bytes).metadata.at("config_hash") == cfg.compat_hash());
}

TEST_CASE("corruption is rejected") {
  const std::string bytes = encode(sample());
  std::string flipped = bytes;
  flipped[0] ^= 0x01;
  CHECK_THROWS_AS(decode(flipped), FormatError);

  std::string version = bytes;
  version[6] = 2;
  CHECK_THROWS_AS(decode(version), FormatError);

  CHECK_THROWS_AS(decode(bytes.substr(0, bytes.size() - 1)), FormatError);
  CHECK_THROWS_AS(decode(bytes.substr(0, 10)), FormatError);
  CHECK_THROWS_AS(decode(bytes + "x"), FormatError);
  CHECK_THROWS_AS(decode(""), FormatError);

  TempDir dir("ckpt_bad");
  save_checkpoint(dir / "a.ckpt", sample());
  CHECK_THROWS_AS(load_checkpoint(dir / "a.ckpt", "other"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "none.ckpt"), IoError);
}

TEST_CASE("subset by prefix") {
  NamedParams t{{"policy/a", Tensor::scalar(1)}, {"tool/b", Tensor::scalar(2)}};
  CHECK(subset(t, "tool/").size() == 1);
  CHECK(subset(t, "tool/").count("tool/b") == 1);
}
