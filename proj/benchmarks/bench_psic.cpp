#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "psic/io.hpp"
#include "psic/network.hpp"
#include "psic/phantom.hpp"

namespace {

using namespace psic;

sh::ShCube random_cube(const dcnn::NetworkConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  sh::ShCube cube(cfg.radius, cfg.n_max);
  for (auto& v : cube.data) v = n(rng);
  return cube;
}

void BM_Forward(benchmark::State& state) {
  const dcnn::NetworkConfig cfg;
  const auto params = dcnn::init_params(cfg, 1);
  const auto cube = random_cube(cfg, 2);
  dcnn::ForwardCache cache;
  for (auto _ : state) benchmark::DoNotOptimize(dcnn::forward_into(params, cube, cache));
}
BENCHMARK(BM_Forward);

void BM_ForwardBackward(benchmark::State& state) {
  const dcnn::NetworkConfig cfg;
  const auto params = dcnn::init_params(cfg, 1);
  const auto cube = random_cube(cfg, 2);
  dcnn::ForwardCache cache;
  std::vector<double> grad(params.size());
  for (auto _ : state) {
    dcnn::forward_into(params, cube, cache);
    benchmark::DoNotOptimize(dcnn::backward(params, cache, 1, grad));
  }
}
BENCHMARK(BM_ForwardBackward);

void BM_FitShVolume(benchmark::State& state) {
  auto spec = phantom::default_spec(phantom::Scenario::CrossingShift);
  const auto n = static_cast<std::uint32_t>(state.range(0));
  spec.dims = {n, n, n};
  spec.roi_center = {(n - 1) / 2.0, (n - 1) / 2.0, (n - 1) / 2.0};
  spec.roi_radius = n / 3.0;
  spec.subjects_per_class = 1;
  const auto subject = phantom::generate_subject(spec, 0);
  for (auto _ : state) benchmark::DoNotOptimize(io::fit_sh_volume(subject.volume, 6));
  state.SetItemsProcessed(state.iterations() * subject.volume.voxels());
}
BENCHMARK(BM_FitShVolume)->Arg(8)->Arg(16);

}  // namespace

BENCHMARK_MAIN();
