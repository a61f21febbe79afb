#include <benchmark/benchmark.h>

#include "bgrto/models.hpp"
#include "bgrto/oracle.hpp"
#include "bgrto/rollout.hpp"
#include "bgrto/schedules.hpp"

using namespace bgrto;

namespace {

const models::Shapes& shapes() {
  static const models::Shapes s{env::EnvConfig{}, models::ModelConfig{}};
  return s;
}

void BM_GenerateScene(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(env::generate_scene(++seed, env::Domain::kTarget, shapes().env));
}
BENCHMARK(BM_GenerateScene);

void BM_PolicySample(benchmark::State& state) {
  const auto policy = models::policy_init(1, shapes());
  const auto scene = env::generate_scene(3, env::Domain::kTarget, shapes().env);
  std::uint64_t k = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(models::policy_sample(policy, shapes(), scene, state.range(0), 1.0, Rng(++k)));
  }
}
BENCHMARK(BM_PolicySample)->Arg(1)->Arg(8);

void BM_PolicyLogprobBackward(benchmark::State& state) {
  const auto policy = models::policy_init(1, shapes());
  const auto scene = env::generate_scene(3, env::Domain::kTarget, shapes().env);
  std::vector<env::TokenSeq> seqs;
  for (const auto& s : models::policy_sample(policy, shapes(), scene, 8, 1.0, Rng(5))) seqs.push_back(s.tokens);
  for (auto _ : state) {
    ad::Tape tape;
    const auto vars = models::bind_policy(tape, policy, shapes());
    const auto steps = models::policy_logprobs_tape(tape, vars, shapes(), scene, seqs);
    ad::Var total = ad::sum(steps[0]);
    for (std::size_t t = 1; t < steps.size(); ++t) total = total + ad::sum(steps[t]);
    benchmark::DoNotOptimize(tape.backward(total));
  }
}
BENCHMARK(BM_PolicyLogprobBackward);

void BM_ToolSegLossBackward(benchmark::State& state) {
  const auto tool = models::tool_init(1, shapes());
  const auto scene = env::generate_scene(3, env::Domain::kTarget, shapes().env);
  const auto prompt = env::oracle_prompt(scene);
  for (auto _ : state) {
    ad::Tape tape;
    const auto vars = models::bind_tool(tape, tool);
    const auto loss =
        objectives::seg_loss(models::tool_forward_tape(tape, vars, shapes(), scene, prompt), scene.official_gt());
    benchmark::DoNotOptimize(tape.backward(loss));
  }
}
BENCHMARK(BM_ToolSegLossBackward);

void BM_GrtoTrainStep(benchmark::State& state) {
  const auto reference = models::policy_init(1, shapes());
  auto policy = reference;
  auto tool = models::tool_init(1, shapes());
  auto popt = optim::make_optimizer(policy);
  auto topt = optim::make_optimizer(tool);
  schedules::TrainConfig cfg;
  const auto scene = env::generate_scene(3, env::Domain::kTarget, shapes().env);
  std::uint64_t k = 0;
  for (auto _ : state) {
    std::vector<schedules::SceneGroup> batch;
    batch.push_back({scene, rollout::sample_rollouts(policy, reference, shapes(), scene, 8, 1.0, Rng(++k))});
    benchmark::DoNotOptimize(schedules::train_step_grto(batch, policy, tool, popt, topt, shapes(), cfg));
  }
}
BENCHMARK(BM_GrtoTrainStep);

void BM_EnumerateMicroSpace(benchmark::State& state) {
  const auto in = oracle::make_micro_instance(mix64(0));
  for (auto _ : state) benchmark::DoNotOptimize(oracle::enumerate_space(in.policy, in.tool, in.shapes, in.scene));
}
BENCHMARK(BM_EnumerateMicroSpace);

}  // namespace

BENCHMARK_MAIN();
