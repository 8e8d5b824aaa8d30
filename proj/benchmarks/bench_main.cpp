#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "debias/autodiff/kernels.hpp"
#include "debias/calib/calibration.hpp"
#include "debias/lm/transformer.hpp"
#include "debias/metrics/bias.hpp"

namespace {

using namespace debias;
using corpus::TokenId;

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

lm::TransformerLM bench_lm(std::size_t vocab, std::size_t width) {
  lm::LmConfig c;
  c.vocab_size = vocab;
  c.width = width;
  c.layers = 2;
  c.heads = 2;
  c.context_length = 128;
  return lm::TransformerLM(c);
}

void BM_GemmNN(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    ad::kernels::gemm_nn(n, n, n, a.data(), b.data(), c.data());
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_GemmNN)->Arg(64)->Arg(128)->Arg(256);

void BM_DecodeStep(benchmark::State& state) {
  const auto model = bench_lm(600, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    lm::DecodeState s(model);
    for (TokenId t = 3; t < 3 + 64; ++t) benchmark::DoNotOptimize(s.push(t).data());
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_DecodeStep)->Arg(32)->Arg(64);

void BM_CalibrationStep(benchmark::State& state) {
  const auto model = bench_lm(600, 64);
  judge::HeadConfig hc;
  hc.width = 64;
  const judge::DebiasHead head(hc);
  calib::BiasWordIds words;
  for (TokenId t = 10; t < 50; ++t) words.liberal.push_back(t);
  for (TokenId t = 50; t < 90; ++t) words.conservative.push_back(t);
  calib::CalibrationConfig cc;
  cc.mode = state.range(0) == 0 ? calib::Mode::Emb : calib::Mode::Cls;
  cc.sigma = calib::default_sigma(cc.mode);
  const auto last = random_vector(64, 3), mean = random_vector(64, 4);
  calib::TokenCalibrator calibrator(model, cc, {&words, &head}, lm::DecodeConfig{});
  double u = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(calibrator.step(last, mean, u));
    u = u < 0.9 ? u + 0.1 : 0.1;
  }
  state.SetLabel(cc.mode == calib::Mode::Emb ? "emb" : "cls");
}
BENCHMARK(BM_CalibrationStep)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);

void BM_W2Distance(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n, 5), b = random_vector(n + 7, 6);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::w2_distance(a, b));
}
BENCHMARK(BM_W2Distance)->Arg(100)->Arg(1000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
