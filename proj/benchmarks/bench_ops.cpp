#include <benchmark/benchmark.h>

#include <random>

#include "ssrc/losses.hpp"
#include "ssrc/ops.hpp"
#include "ssrc/rsmi.hpp"

using namespace ssrc;

namespace {

Tensor randn(Shape shape, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Scalar> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = static_cast<Scalar>(n(rng));
  return Tensor::from_data(std::move(shape), std::move(v), grad);
}

void BM_Matmul(benchmark::State& st) {
  const auto n = st.range(0);
  const Tensor a = randn({n, n}, 1), b = randn({n, n}, 2);
  for (auto _ : st) benchmark::DoNotOptimize(ops::matmul(a, b));
  st.SetItemsProcessed(st.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_Conv2dForwardBackward(benchmark::State& st) {
  const auto c = st.range(0);
  Tensor x = randn({4, c, 32, 32}, 3, true);
  Tensor w = randn({c, c, 3, 3}, 4, true);
  Tensor b = randn({c}, 5, true);
  for (auto _ : st) {
    Tensor y = ops::sum(ops::conv2d(x, w, b, 1, 1));
    y.backward();
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
  }
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(16)->Arg(32);

void BM_HdceLoss(benchmark::State& st) {
  const auto q = st.range(0);
  const Tensor pos = randn({q}, 6), neg = randn({q, q - 1}, 7);
  for (auto _ : st) benchmark::DoNotOptimize(hdce_from_similarities(pos, neg, 0.07, 1.0));
}
BENCHMARK(BM_HdceLoss)->Arg(64)->Arg(256);

void BM_FitRatio(benchmark::State& st) {
  const auto n = st.range(0);
  const Tensor p = randn({n, 6}, 8), q = randn({n, 6}, 9);
  RulsifParams params;
  for (auto _ : st) benchmark::DoNotOptimize(fit_ratio(p, q, params));
}
BENCHMARK(BM_FitRatio)->Arg(256)->Arg(500);

}  // namespace
