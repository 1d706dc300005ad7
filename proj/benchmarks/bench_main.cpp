#include "sgncde/eval_harness.hpp"
#include "sgncde/models.hpp"
#include "sgncde/nn.hpp"
#include "sgncde/sg_filter.hpp"
#include "sgncde/so3.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using namespace sgncde;

so3::Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  return {n(rng), n(rng), n(rng)};
}

void BM_Exp(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::vector<so3::Vec3> v;
  for (int i = 0; i < 256; ++i) v.push_back(random_vec(rng, 1.0));
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(so3::exp_so3(v[i++ & 255]));
}
BENCHMARK(BM_Exp);

void BM_Log(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::vector<so3::Rotation> r;
  for (int i = 0; i < 256; ++i) r.push_back(so3::exp_so3(random_vec(rng, 1.0)));
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(so3::log_so3(r[i++ & 255]));
}
BENCHMARK(BM_Log);

sg::RotationTrajectory noisy_spin(int count) {
  std::mt19937_64 rng(3);
  const so3::Vec3 omega = random_vec(rng, 1.5);
  std::vector<double> t;
  std::vector<so3::Rotation> rs;
  for (int k = 0; k < count; ++k) {
    t.push_back(0.025 * k);
    rs.push_back(so3::exp_so3(random_vec(rng, 0.05)) * so3::exp_so3(omega * t.back()));
  }
  return {t, rs};
}

void BM_FitPath(benchmark::State& state) {
  const auto traj = noisy_spin(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(sg::fit_path(traj, 5));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FitPath)->Arg(20)->Arg(120);

std::vector<forecast::Sample> damped_batch(int size) {
  sim::ScenarioConfig c = eval::default_experiment().scenarios.front().config;
  const auto d = eval::build_dataset(c, {(size + 3) / 4, 0, 0}, eval::WindowConfig{}, 9);
  return {d.train.begin(), d.train.begin() + size};
}

void BM_BatchLossBackward(benchmark::State& state) {
  const auto kind = static_cast<forecast::ModelKind>(state.range(0));
  const auto batch = damped_batch(32);
  auto model = forecast::make_model(kind, forecast::Architecture{}, 1);
  for (auto _ : state) {
    nn::zero_grad(model->parameters());
    auto bl = model->batch_loss(batch);
    bl.loss.backward();
    if (bl.finish_backward) bl.finish_backward();
  }
  state.SetLabel(std::string(forecast::to_string(kind)));
}
BENCHMARK(BM_BatchLossBackward)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_Forecast(benchmark::State& state) {
  const auto kind = static_cast<forecast::ModelKind>(state.range(0));
  const auto sample = damped_batch(1).front();
  auto model = forecast::make_model(kind, forecast::Architecture{}, 1);
  for (auto _ : state) benchmark::DoNotOptimize(model->forecast(sample.request()));
  state.SetLabel(std::string(forecast::to_string(kind)));
}
BENCHMARK(BM_Forecast)->Arg(0)->Arg(1)->Arg(2)->Unit(benchmark::kMicrosecond);

void BM_GruStep(benchmark::State& state) {
  std::mt19937_64 rng(4);
  nn::GRUStack stack("gru", 10, 250, 3, rng);
  const ad::Tensor x = ad::Tensor::constant(ad::Matrix::Random(32, 10));
  ad::NoGradGuard guard;
  for (auto _ : state) {
    auto h = stack.initial_state(32);
    benchmark::DoNotOptimize(stack.step(x, h));
  }
}
BENCHMARK(BM_GruStep)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
