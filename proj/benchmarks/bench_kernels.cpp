#include <benchmark/benchmark.h>

#include <vector>

#include "qdq/kernels.hpp"
#include "qdq/mlp.hpp"
#include "qdq/rng.hpp"

namespace {

void BM_gemm(benchmark::State& state) {
  const int M = static_cast<int>(state.range(0));
  const int K = static_cast<int>(state.range(1));
  const int N = static_cast<int>(state.range(2));
  qdq::Rng rng(1);
  std::vector<double> X(M * K), W(K * N), Y(M * N);
  for (auto& v : X) v = rng.normal();
  for (auto& v : W) v = rng.normal();
  for (auto _ : state) {
    qdq::kern::gemm_nn(X.data(), W.data(), Y.data(), M, K, N);
    benchmark::DoNotOptimize(Y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(M) * K * N);
}
BENCHMARK(BM_gemm)->Args({256, 32, 32})->Args({256, 64, 64})->Args({256, 256, 256});

void BM_vexp(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  qdq::Rng rng(2);
  std::vector<double> x(n), y(n);
  for (auto& v : x) v = rng.normal() * 5;
  for (auto _ : state) {
    qdq::kern::vexp(x.data(), y.data(), n);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_vexp)->Arg(256)->Arg(8192);

void BM_mlp_forward(benchmark::State& state) {
  const int width = static_cast<int>(state.range(0));
  const int batch = static_cast<int>(state.range(1));
  qdq::Rng rng(3);
  qdq::Mlp net = qdq::make_mlp(3, width, 3, 1, qdq::Act::mish, rng);
  std::vector<double> X(batch * 3), Y(batch);
  for (auto& v : X) v = rng.normal();
  qdq::MlpScratch scratch;
  for (auto _ : state) {
    qdq::mlp_forward(net, X.data(), batch, Y.data(), scratch);
    benchmark::DoNotOptimize(Y.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_mlp_forward)->Args({32, 256})->Args({256, 256});

}  // namespace
