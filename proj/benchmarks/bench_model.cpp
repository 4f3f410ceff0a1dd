#include <benchmark/benchmark.h>

#include "resee/model/input.hpp"
#include "resee/model/model.hpp"

namespace {

resee::model::InputBatch batch(const resee::model::ModelConfig& cfg, std::size_t context, std::size_t response) {
  resee::model::EncodedContext x;
  for (std::size_t i = 0; i < context; ++i) {
    x.token_ids.push_back(6 + static_cast<int>(i % 50));
    x.image_slot.push_back(-1);
    x.segment_ids.push_back(3);
  }
  x.spans[3] = {0, context};
  std::vector<int> in{cfg.special.bos}, tg;
  for (std::size_t i = 1; i < response; ++i) in.push_back(6 + static_cast<int>(i));
  for (std::size_t i = 0; i < response; ++i) tg.push_back(i + 1 < response ? in[i + 1] : cfg.special.eos);
  return resee::model::make_batch(x, in, tg, cfg);
}

void run(benchmark::State& state, resee::model::Variant v, bool backward) {
  const auto cfg = resee::model::ModelConfig::for_variant(v, 64);
  const resee::model::Model m(cfg, 1);
  const auto b = batch(cfg, static_cast<std::size_t>(state.range(0)), 20);
  auto grads = m.parameters().zeros_like();
  for (auto _ : state) {
    if (backward) {
      benchmark::DoNotOptimize(m.loss(b, &grads));
    } else {
      benchmark::DoNotOptimize(m.forward(b));
    }
  }
}

void BM_ForwardShared(benchmark::State& s) { run(s, resee::model::Variant::kShared, false); }
void BM_ForwardSeparate(benchmark::State& s) { run(s, resee::model::Variant::kSeparate, false); }
void BM_LossGradShared(benchmark::State& s) { run(s, resee::model::Variant::kShared, true); }
void BM_LossGradSeparate(benchmark::State& s) { run(s, resee::model::Variant::kSeparate, true); }
BENCHMARK(BM_ForwardShared)->Arg(40)->Arg(190);
BENCHMARK(BM_ForwardSeparate)->Arg(40)->Arg(190);
BENCHMARK(BM_LossGradShared)->Arg(40)->Arg(190);
BENCHMARK(BM_LossGradSeparate)->Arg(40)->Arg(190);

}  // namespace
