// Hot paths at the desk configuration (d_model 16, 4 layers, 3 adapters).

#include <benchmark/benchmark.h>

#include "aaf/aggregation.hpp"
#include "aaf/config.hpp"
#include "aaf/model.hpp"
#include "aaf/synthdata.hpp"
#include "aaf/transducer.hpp"

namespace {

using namespace aaf;

const Config& desk() {
  static const Config c = parse_config("{}", "bench");
  return c;
}

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

AsrModel fused_model(AggregationMethod method) {
  auto m = AsrModel::init(desk().model_config(), 1);
  Rng rng(2);
  for (const char* t : {"T1", "T2", "T3"}) m.add_adapter(t, rng);
  m.add_fusion(method, rng);
  return m;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor({n, 16}, rng), b = random_tensor({16, 16}, rng);
  NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
}
BENCHMARK(BM_Matmul)->Arg(20)->Arg(60)->Arg(200);

void BM_EncoderBlock(benchmark::State& state) {
  const auto model = AsrModel::init(desk().model_config(), 1);
  Rng rng(3);
  const Tensor x = random_tensor({static_cast<std::size_t>(state.range(0)), 16}, rng);
  NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(encoder_block_forward(model.blocks[0], x));
}
BENCHMARK(BM_EncoderBlock)->Arg(20)->Arg(60);

void BM_Aggregate(benchmark::State& state) {
  const auto method = static_cast<AggregationMethod>(state.range(0));
  const auto model = fused_model(method);
  Rng rng(4);
  const Tensor x = random_tensor({60, 16}, rng);
  const auto h = model.adapters[0].outputs(x);
  NoGradGuard g;
  for (auto _ : state) benchmark::DoNotOptimize(aggregate(model.fusion[0], x, h));
  state.SetLabel(std::string(to_string(method)));
}
BENCHMARK(BM_Aggregate)
    ->Arg(static_cast<int>(AggregationMethod::Avg))
    ->Arg(static_cast<int>(AggregationMethod::WAvg))
    ->Arg(static_cast<int>(AggregationMethod::AAF));

void BM_RnntLoss(benchmark::State& state) {
  const auto T = static_cast<std::size_t>(state.range(0)), U = static_cast<std::size_t>(state.range(1));
  Rng rng(5);
  std::vector<Label> labels;
  for (std::size_t u = 0; u < U; ++u) labels.push_back(static_cast<Label>(1 + rng.below(8)));
  NoGradGuard g;
  const Tensor lp = reshape(log_softmax(random_tensor({T * (U + 1), 9}, rng), 1), {T, U + 1, 9}).clone();
  for (auto _ : state) benchmark::DoNotOptimize(rnnt_loss(lp, labels));
}
BENCHMARK(BM_RnntLoss)->Args({20, 5})->Args({60, 10});

// One composition step: a batch of 32 fused forwards, RNN-T losses and a
// backward pass into the A-AF weights.
void BM_ComposeStep(benchmark::State& state) {
  auto model = fused_model(AggregationMethod::AAF);
  std::vector<Tensor> trainable;
  for (auto& e : model.parameters())
    if (e.info.group == ParamGroup::Fusion && !e.info.fixed) {
      e.tensor.set_requires_grad(true);
      trainable.push_back(e.tensor);
    }
  const auto bench = default_benchmark(desk().tasks);
  std::vector<Utterance> batch;
  for (std::uint64_t i = 0; i < 32; ++i) batch.push_back(generate_utterance(bench.train_tasks[i % 3], Split::Train, i));
  for (auto _ : state) {
    Tape::active().clear();
    for (auto& t : trainable) t.zero_grad();
    Tensor total;
    for (const auto& u : batch) {
      Tensor l = rnnt_loss(model.head, model.encode(u.features), u.labels);
      total = total.defined() ? total + l : l;
    }
    backward(div_scalar(total, 32.0));
  }
  Tape::active().clear();
}
BENCHMARK(BM_ComposeStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
