#include <benchmark/benchmark.h>

#include <random>

#include "tqnet/data.hpp"
#include "tqnet/model.hpp"
#include "tqnet/training.hpp"

using namespace tqnet;

namespace {

template <typename T>
DiffTensor<T> noise(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<T> n(0, 1);
  DiffTensor<T> x(rows, cols);
  for (T& v : x.values()) v = n(rng);
  return x;
}

// ETTh1-sized model: seven channels, L = H = 96.
ModelConfig ett_config(std::size_t d_model) {
  ModelConfig c;
  c.channels = 7;
  c.d_model = d_model;
  return c;
}

std::vector<std::size_t> starts_for(std::size_t batch) {
  std::vector<std::size_t> s(batch);
  for (std::size_t i = 0; i < batch; ++i) s[i] = 17 * i;
  return s;
}

}  // namespace

static void BM_LinearApply(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = noise<float>(224, n, 1);
  const auto w = noise<float>(n, n, 2);
  for (auto _ : state) {
    auto y = linear_apply<float>(x, w, nullptr);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 224 * n * n);
}
BENCHMARK(BM_LinearApply)->Arg(96)->Arg(512);

static void BM_ForwardEval(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto cfg = ett_config(512);
  TQNet<float> model(cfg);
  const auto x = noise<float>(batch * cfg.channels, cfg.lookback, 3);
  const auto starts = starts_for(batch);
  Rng rng(4);
  for (auto _ : state) {
    auto y = model.forward(x, starts, Mode::kEval, rng, nullptr);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_ForwardEval)->Arg(1)->Arg(32)->Arg(256)->Unit(benchmark::kMicrosecond);

// One optimizer step as `fit` performs it: forward, MSE, backward, Adam.
static void BM_TrainStep(benchmark::State& state) {
  const auto cfg = ett_config(static_cast<std::size_t>(state.range(0)));
  TQNet<float> model(cfg);
  auto params = model.parameters();
  auto opt = OptimState<float>::create(params, 1e-3);
  const std::size_t batch = 32;
  const auto x = noise<float>(batch * cfg.channels, cfg.lookback, 5);
  const auto target = noise<float>(batch * cfg.channels, cfg.horizon, 6);
  const auto starts = starts_for(batch);
  Rng rng(7);
  for (auto _ : state) {
    Tape<float> tape;
    auto y = model.forward(x, starts, Mode::kTrain, rng, &tape);
    auto loss = mse_loss(y, target, &tape);
    tape.backward(loss);
    adam_step(std::span<NamedTensor<float>>(params), opt);
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_TrainStep)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);

static void BM_Acf(benchmark::State& state) {
  SynthSpec s;
  s.channels = 7;
  s.timesteps = 8640;
  const auto table = generate_synthetic(s).table;
  const auto max_lag = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    auto r = compute_acf(table.data, max_lag);
    benchmark::DoNotOptimize(r);
  }
}
BENCHMARK(BM_Acf)->Arg(200)->Arg(1000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
