// Parallel kernels against their serial references.

#include <benchmark/benchmark.h>

#include <random>

#include "cstm/experiments.hpp"
#include "cstm/kernels.hpp"

using namespace cstm;

namespace {

std::vector<AcmtfFactors> factor_set(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  auto mat = [&](Eigen::Index r, Eigen::Index c) {
    DenseMatrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j) {
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = z(rng);
      m.col(j).normalize();
    }
    return m;
  };
  std::vector<AcmtfFactors> out(n);
  for (auto& f : out) {
    f.tensor = {Vector::Ones(5), {mat(30, 5), mat(20, 5), mat(10, 5)}};
    f.matrix = {Vector::Ones(5), {mat(50, 5), mat(10, 5)}};
    f.update_shared();
  }
  return out;
}

void BM_Gram(benchmark::State& state) {
  const auto set = factor_set(static_cast<std::size_t>(state.range(0)));
  const CoupledKernelSpec spec = median_heuristic_spec(set);
  for (auto _ : state) benchmark::DoNotOptimize(gram_matrix(set, spec));
}

void BM_GramSerial(benchmark::State& state) {
  const auto set = factor_set(static_cast<std::size_t>(state.range(0)));
  const CoupledKernelSpec spec = median_heuristic_spec(set);
  for (auto _ : state) benchmark::DoNotOptimize(gram_matrix_serial(set, spec));
}

void BM_CpGram(benchmark::State& state) {
  std::vector<KruskalTensor> t;
  for (const auto& f : factor_set(static_cast<std::size_t>(state.range(0)))) t.push_back(f.tensor);
  const auto specs = median_heuristic_specs(t);
  for (auto _ : state) benchmark::DoNotOptimize(cp_gram_matrix(t, specs));
}

void BM_CpGramSerial(benchmark::State& state) {
  std::vector<KruskalTensor> t;
  for (const auto& f : factor_set(static_cast<std::size_t>(state.range(0)))) t.push_back(f.tensor);
  const auto specs = median_heuristic_specs(t);
  for (auto _ : state) benchmark::DoNotOptimize(cp_gram_matrix_serial(t, specs));
}

ExperimentConfig decompose_config() {
  ExperimentConfig c;
  c.acmtf.max_iters = 100;
  return c;
}

void BM_DecomposeAll(benchmark::State& state) {
  const auto samples = gen_case(sim_case(1), static_cast<std::size_t>(state.range(0)), 1);
  const ExperimentConfig c = decompose_config();
  for (auto _ : state) benchmark::DoNotOptimize(decompose_all(samples, c));
}

void BM_DecomposeAllSerial(benchmark::State& state) {
  const auto samples = gen_case(sim_case(1), static_cast<std::size_t>(state.range(0)), 1);
  const ExperimentConfig c = decompose_config();
  for (auto _ : state) benchmark::DoNotOptimize(decompose_all_serial(samples, c));
}

}  // namespace

BENCHMARK(BM_Gram)->Arg(40)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GramSerial)->Arg(40)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CpGram)->Arg(40)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_CpGramSerial)->Arg(40)->Arg(100)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DecomposeAll)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DecomposeAllSerial)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
