#include <benchmark/benchmark.h>

#include "wmark/attacks.hpp"
#include "wmark/codec.hpp"
#include "wmark/metrics.hpp"
#include "wmark/nn.hpp"

using namespace wmark;

namespace {

const Dataset& corpus() {
  static const Dataset ds = synth_dataset(10, 8, 32, 7);
  return ds;
}

std::vector<const ImageU8*> batch_of(size_t n) {
  std::vector<const ImageU8*> out;
  for (size_t i = 0; i < n; ++i) out.push_back(&corpus()[i % corpus().size()].image);
  return out;
}

}  // namespace

static void BM_Dct8x8(benchmark::State& state) {
  CoeffBlock b{};
  for (int i = 0; i < 64; ++i) b[i] = (i * 37 % 255) - 128.0;
  for (auto _ : state) {
    auto c = dct8x8(b);
    benchmark::DoNotOptimize(idct8x8(c));
  }
}
BENCHMARK(BM_Dct8x8);

static void BM_CompressImage(benchmark::State& state) {
  const auto& img = corpus()[0].image;
  const int factor = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(compress_image(img, factor));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_CompressImage)->Arg(50)->Arg(90);

static void BM_Ssim(benchmark::State& state) {
  const auto& a = corpus()[0].image;
  auto b = compress_image(a, 90);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim);

static void BM_Attack(benchmark::State& state) {
  auto kind = in_house_kinds()[static_cast<size_t>(state.range(0))];
  auto spec = default_spec(kind);
  state.SetLabel(attack_name(kind));
  SeededRng rng(3);
  const auto& img = corpus()[1].image;
  for (auto _ : state) benchmark::DoNotOptimize(apply_attack(spec, img, rng));
}
BENCHMARK(BM_Attack)->DenseRange(0, 7);

static void BM_Forward(benchmark::State& state) {
  Net<float> net(Arch::cnn2hp, 10, 32);
  SeededRng rng(1);
  net.init_he_uniform(rng);
  auto batch = batch_of(static_cast<size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(64);

static void BM_ForwardBackward(benchmark::State& state) {
  Net<float> net(Arch::cnn2hp, 10, 32);
  SeededRng rng(1);
  net.init_he_uniform(rng);
  const size_t B = static_cast<size_t>(state.range(0));
  auto batch = batch_of(B);
  std::vector<int> labels;
  for (size_t i = 0; i < B; ++i) labels.push_back(corpus()[i % corpus().size()].label);
  for (auto _ : state) {
    auto pass = net.forward(batch, true);
    auto ce = cross_entropy(pass.logits, labels, 10);
    benchmark::DoNotOptimize(net.backward(pass, ce.grad, nullptr));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(104);

BENCHMARK_MAIN();
