// Parallel kernels against the serial reference at model-sized shapes.
// FSDAG_THREADS sets the worker count for the parallel versions.

#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "fsdag/kernels.hpp"
#include "fsdag/rng.hpp"

namespace k = fsdag::kernels;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  fsdag::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return v;
}

template <bool Parallel>
void BM_gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), kk = static_cast<std::size_t>(state.range(1)),
             n = static_cast<std::size_t>(state.range(2));
  const auto a = noise(m * kk, 1), b = noise(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::gemm(a, b, c, m, kk, n);
    else
      k::reference::gemm(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * kk * n));
}

template <bool Parallel>
void BM_gemm_tn(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0)), kk = static_cast<std::size_t>(state.range(1)),
             n = static_cast<std::size_t>(state.range(2));
  const auto a = noise(m * kk, 1), g = noise(m * n, 2);
  std::vector<double> c(kk * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::gemm_tn(a, g, c, m, kk, n);
    else
      k::reference::gemm_tn(a, g, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * kk * n));
}

k::ConvGeometry conv_geometry(const benchmark::State& state) {
  return {static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)),
          static_cast<std::size_t>(state.range(2)), static_cast<std::size_t>(state.range(3))};
}

template <bool Parallel>
void BM_conv_forward(benchmark::State& state) {
  const auto geo = conv_geometry(state);
  const auto x = noise(geo.in_channels * geo.height * geo.width, 1);
  const auto w = noise(geo.out_channels * geo.in_channels * 9, 2), b = noise(geo.out_channels, 3);
  std::vector<double> y(geo.out_channels * geo.out_height() * geo.out_width());
  for (auto _ : state) {
    if constexpr (Parallel)
      k::conv2d_forward(geo, x, w, b, y);
    else
      k::reference::conv2d_forward(geo, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool Parallel>
void BM_conv_backward(benchmark::State& state) {
  const auto geo = conv_geometry(state);
  const auto x = noise(geo.in_channels * geo.height * geo.width, 1);
  const auto w = noise(geo.out_channels * geo.in_channels * 9, 2);
  const auto gy = noise(geo.out_channels * geo.out_height() * geo.out_width(), 3);
  std::vector<double> gx(x.size()), gw(w.size()), gb(geo.out_channels);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::conv2d_backward(geo, x, w, gy, gx, gw, gb);
    else
      k::reference::conv2d_backward(geo, x, w, gy, gx, gw, gb);
    benchmark::DoNotOptimize(gw.data());
  }
}

template <bool Parallel>
void BM_pair_sum(benchmark::State& state) {
  const auto nodes = static_cast<std::size_t>(state.range(0)), h = static_cast<std::size_t>(state.range(1));
  const auto a = noise(nodes * h, 1), b = noise(nodes * h, 2), c = noise(nodes * nodes * h, 3);
  std::vector<double> out(nodes * nodes * h);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::pair_sum(a, b, c, out, nodes, h);
    else
      k::reference::pair_sum(a, b, c, out, nodes, h);
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_attend(benchmark::State& state) {
  const auto nodes = static_cast<std::size_t>(state.range(0)), d = static_cast<std::size_t>(state.range(1));
  const auto alpha = noise(nodes * nodes, 1), msg = noise(nodes * nodes * d, 2);
  std::vector<std::size_t> order(nodes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> out(nodes * d);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::attend(alpha, msg, order, out, nodes, d);
    else
      k::reference::attend(alpha, msg, order, out, nodes, d);
    benchmark::DoNotOptimize(out.data());
  }
}

// L^2 edge rows through a 64-wide layer; fusion input 512 -> 64.
#define GEMM_ARGS ->Args({196, 320, 64})->Args({1024, 64, 64})->Args({64, 512, 64})
BENCHMARK(BM_gemm<false>) GEMM_ARGS;
BENCHMARK(BM_gemm<true>) GEMM_ARGS;
BENCHMARK(BM_gemm_tn<false>) GEMM_ARGS;
BENCHMARK(BM_gemm_tn<true>) GEMM_ARGS;

// First and last layers of the conv stack on a 256x192 page.
#define CONV_ARGS ->Args({1, 8, 256, 192})->Args({16, 16, 64, 48})
BENCHMARK(BM_conv_forward<false>) CONV_ARGS;
BENCHMARK(BM_conv_forward<true>) CONV_ARGS;
BENCHMARK(BM_conv_backward<false>) CONV_ARGS;
BENCHMARK(BM_conv_backward<true>) CONV_ARGS;

#define PAIR_ARGS ->Args({14, 64})->Args({64, 64})
BENCHMARK(BM_pair_sum<false>) PAIR_ARGS;
BENCHMARK(BM_pair_sum<true>) PAIR_ARGS;
BENCHMARK(BM_attend<false>) PAIR_ARGS;
BENCHMARK(BM_attend<true>) PAIR_ARGS;

}  // namespace

BENCHMARK_MAIN();
