#include <benchmark/benchmark.h>

#include <random>

#include "hgwm/rasterizer.hpp"

namespace {

hgwm::GaussianSet scene(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.4, 0.4), c(0.0, 1.0), s(0.01, 0.06), o(0.3, 0.95);
  hgwm::GaussianSet set;
  for (int i = 0; i < n; ++i) {
    set.gaussians.emplace_back(hgwm::Vec3(u(rng), u(rng), u(rng)), hgwm::Vec3(c(rng), c(rng), c(rng)),
                               hgwm::Vec4(1.0, u(rng), u(rng), u(rng)), hgwm::Vec3(s(rng), s(rng), s(rng)), o(rng),
                               hgwm::Vec3(u(rng), u(rng), u(rng)));
  }
  return set;
}

hgwm::Camera camera(int size) {
  return hgwm::Camera::look_at({1.5, 0.8, 0.9}, {0, 0, 0}, {0, 0, 1}, 1.2 * size, size, size);
}

void BM_Tiled(benchmark::State& st) {
  const auto set = scene(static_cast<int>(st.range(0)), 7);
  const auto cam = camera(static_cast<int>(st.range(1)));
  for (auto _ : st) benchmark::DoNotOptimize(hgwm::raster::render(set, cam));
}

void BM_BruteForce(benchmark::State& st) {
  const auto set = scene(static_cast<int>(st.range(0)), 7);
  const auto cam = camera(static_cast<int>(st.range(1)));
  for (auto _ : st) benchmark::DoNotOptimize(hgwm::raster::render_brute_force(set, cam));
}

void BM_Backward(benchmark::State& st) {
  const auto set = scene(static_cast<int>(st.range(0)), 7);
  const auto cam = camera(static_cast<int>(st.range(1)));
  const auto buf = hgwm::raster::GaussianBuffers::from_set(set);
  const std::vector<double> up(static_cast<std::size_t>(cam.width()) * cam.height() * 3, 1.0);
  for (auto _ : st) benchmark::DoNotOptimize(hgwm::raster::render_backward(buf.view(), cam, up, up));
}

}  // namespace

BENCHMARK(BM_Tiled)->Args({100, 64})->Args({1000, 64})->Args({1000, 128});
BENCHMARK(BM_BruteForce)->Args({100, 64})->Args({1000, 64});
BENCHMARK(BM_Backward)->Args({100, 64})->Args({1000, 64});

BENCHMARK_MAIN();
