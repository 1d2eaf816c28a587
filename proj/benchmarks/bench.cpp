#include <benchmark/benchmark.h>

#include <random>

#include "nncov/autodiff.hpp"
#include "nncov/constraints.hpp"
#include "nncov/coverage.hpp"
#include "nncov/objectives.hpp"
#include "nncov/trainer.hpp"

namespace {

using namespace nncov;

Network model(int preset, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.architecture = preset == 1 ? Architecture::lenet1()
                     : preset == 4 ? Architecture::lenet4()
                                   : Architecture::lenet5();
  cfg.rng_seed = seed;
  cfg.model_id = "m" + std::to_string(seed);
  return initialize(cfg, {1, 28, 28});
}

Tensor image(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Tensor x({1, 28, 28});
  for (double& v : x.data()) v = dist(rng);
  return x;
}

void BM_Forward(benchmark::State& state) {
  const Network net = model(static_cast<int>(state.range(0)), 1);
  const Tensor x = image(2);
  for (auto _ : state) benchmark::DoNotOptimize(forward(net, x));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(4)->Arg(5);

void BM_InputGradient(benchmark::State& state) {
  const Network net = model(static_cast<int>(state.range(0)), 1);
  const Tensor x = image(2);
  const auto sel = ScalarSelector::class_prob(3);
  for (auto _ : state) benchmark::DoNotOptimize(input_gradient(net, sel, x));
}
BENCHMARK(BM_InputGradient)->Arg(1)->Arg(4)->Arg(5);

void BM_TrainingBatch(benchmark::State& state) {
  const Network net = model(1, 1);
  std::vector<Tensor> xs;
  std::vector<std::size_t> ys;
  for (std::uint64_t i = 0; i < 32; ++i) {
    xs.push_back(image(i));
    ys.push_back(i % 10);
  }
  const Dataset batch = Dataset::from_samples(xs, ys);
  for (auto _ : state) benchmark::DoNotOptimize(param_gradients(net, batch));
}
BENCHMARK(BM_TrainingBatch);

// One ascent iteration for three models: forward, joint gradient, lighting step.
void BM_GenerationStep(benchmark::State& state) {
  const std::vector<Network> nets{model(1, 1), model(1, 2), model(1, 3)};
  const Tensor seed = image(4);
  const ConstraintSpec lighting = ConstraintSpec::lighting();
  std::vector<NeuronId> targets;
  for (const Network& net : nets) targets.push_back(coverable_neurons(net).front());
  Rng rng(5);
  for (auto _ : state) {
    SeedState seed_state(seed);
    const ObjectiveValue obj = joint(nets, 0, 0, targets, seed, JointConfig{});
    const Tensor g = apply(lighting, obj.gradient, seed, rng, seed_state);
    benchmark::DoNotOptimize(step(lighting, seed, g, 10.0 / 255.0, seed_state));
  }
}
BENCHMARK(BM_GenerationStep);

void BM_CoverageUpdate(benchmark::State& state) {
  const Network net = model(5, 1);
  const ActivationTrace trace = forward(net, image(2));
  CoverageTracker tracker(net, 0.25, state.range(0) == 1);
  for (auto _ : state) benchmark::DoNotOptimize(tracker.update(net, trace));
}
BENCHMARK(BM_CoverageUpdate)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
