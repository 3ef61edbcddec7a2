#include <benchmark/benchmark.h>

#include <numeric>
#include <vector>

#include "msam/ciffp.hpp"
#include "msam/embio.hpp"
#include "msam/metrics.hpp"
#include "msam/msalm.hpp"
#include "msam/trainer.hpp"

using namespace msam;

namespace {

Tensor<float> normal(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(std::move(shape));
  for (auto& x : t.data()) x = float(rng.normal());
  return t;
}

EmbeddingBatch synth(std::size_t videos, std::size_t frames, std::size_t dim) {
  SynthSpec s;
  s.num_videos = videos;
  s.frames_per_video = frames;
  s.captions_per_video = 1;
  s.dim = dim;
  s.seed = 1;
  return gen_synthetic(s);
}

// Fused scoring over a square batch; args are N and F at D = 512.
void BM_CiffpScores(benchmark::State& state) {
  const auto n = std::size_t(state.range(0)), f = std::size_t(state.range(1));
  const auto frames = normal({n, f, 512}, 1);
  const auto texts = normal({n, 512}, 2);
  const auto gate = CiffpParams<float>::zeros(512);
  for (auto _ : state) benchmark::DoNotOptimize(ciffp_scores(frames, texts, gate));
}
BENCHMARK(BM_CiffpScores)->Args({32, 12})->Args({64, 12})->Args({128, 12})->Unit(benchmark::kMillisecond);

void BM_CiffpTrace(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  const auto frames = normal({n, 12, 512}, 1);
  const auto texts = normal({n, 512}, 2);
  const auto gate = CiffpParams<float>::zeros(512);
  for (auto _ : state) benchmark::DoNotOptimize(ciffp_similarity(frames, texts, gate));
}
BENCHMARK(BM_CiffpTrace)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

// One optimizer step on a 32-pair batch; the arg is k.
void BM_TrainStep(benchmark::State& state) {
  const auto data = synth(32, 4, 64);
  TrainConfig config;
  config.steps = 1;
  config.eval_every = 1000;
  config.k = std::size_t(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(train<float>(data, config));
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(3)->Arg(7)->Arg(15)->Unit(benchmark::kMillisecond);

void BM_MsalmPool(benchmark::State& state) {
  const auto k = std::size_t(state.range(0));
  Rng rng(3);
  const auto params = MsalmParams<float>::init(512, k, rng);
  const auto seq = normal({32, 12, 512}, 4);
  for (auto _ : state) benchmark::DoNotOptimize(attention_pool_k(seq, params));
}
BENCHMARK(BM_MsalmPool)->Arg(1)->Arg(7)->Arg(15)->Unit(benchmark::kMicrosecond);

void BM_T2vRanks(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  const auto scores = normal({n, n}, 5);
  std::vector<std::size_t> gt(n);
  std::iota(gt.begin(), gt.end(), 0);
  for (auto _ : state) benchmark::DoNotOptimize(t2v_ranks(scores, gt));
}
BENCHMARK(BM_T2vRanks)->Arg(256)->Arg(1024)->Unit(benchmark::kMicrosecond);

void BM_ContainerRoundTrip(benchmark::State& state) {
  const auto data = synth(64, 12, 512);
  for (auto _ : state) benchmark::DoNotOptimize(decode_container(encode_container(data)));
}
BENCHMARK(BM_ContainerRoundTrip)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
