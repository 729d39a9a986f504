#include <benchmark/benchmark.h>

#include <vector>

#include "cdvae/coding.hpp"
#include "cdvae/models.hpp"
#include "cdvae/smoothing.hpp"
#include "cdvae/training.hpp"

namespace {

using namespace cdvae;

void BM_SoftDecode(benchmark::State& state) {
  const CodeSpec code(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
  Rng rng(1);
  std::vector<double> q_c(code.code_len()), q_m(code.info_len());
  for (auto& v : q_c) v = rng.uniform();
  for (auto _ : state) {
    kernels::soft_decode(code, q_c, q_m);
    benchmark::DoNotOptimize(q_m.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(code.code_len()));
}
BENCHMARK(BM_SoftDecode)->Args({5, 4})->Args({8, 10})->Args({100, 2});

void BM_SampleSmoothed(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const SmoothingParams sp(kDefaultBeta);
  Rng rng(2);
  std::vector<double> q(n), rho(n), z(n), dz(n);
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = rng.uniform();
    rho[i] = rng.uniform();
  }
  for (auto _ : state) {
    kernels::sample_smoothed(q, rho, sp, z, dz);
    benchmark::DoNotOptimize(z.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n));
}
BENCHMARK(BM_SampleSmoothed)->Arg(20)->Arg(1024);

void BM_ForwardBackward(benchmark::State& state) {
  const auto rows = static_cast<Eigen::Index>(state.range(0));
  const NetworkPlan plan{{196, 256, 20}, Activation::kLeakyRelu, Activation::kLogistic};
  Rng rng(3);
  const ParamStore params = ParamStore::glorot(plan, rng);
  const Batch x = Batch::Random(rows, 196).cwiseAbs();
  const Batch seed = Batch::Ones(rows, 20);
  for (auto _ : state) {
    auto f = forward_mlp(plan, params, x);
    auto b = backward(f.tape, seed);
    benchmark::DoNotOptimize(b.grads.layers().data());
  }
  state.SetItemsProcessed(state.iterations() * rows);
}
BENCHMARK(BM_ForwardBackward)->Arg(1)->Arg(128);

void BM_ElboBatch(benchmark::State& state) {
  Rng rng(4);
  const ArchConfig arch{196, {256}, {256}};
  const Model m = state.range(0) == 0 ? Model(make_uncoded(5, arch, kDefaultBeta, rng))
                                      : Model(make_coded(CodeSpec(5, 4), arch, kDefaultBeta, rng));
  const Batch x = Batch::Random(128, 196).cwiseAbs();
  const Batch rho = draw_noise(128, static_cast<Eigen::Index>(latent_dim(m)), rng);
  for (auto _ : state) {
    ModelGrads g;
    auto e = elbo_batch(m, x, rho, &g);
    benchmark::DoNotOptimize(e.mean.elbo);
  }
  state.SetItemsProcessed(state.iterations() * 128);
  state.SetLabel(state.range(0) == 0 ? "uncoded M=5" : "coded 5/20");
}
BENCHMARK(BM_ElboBatch)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
