#include <random>

#include <benchmark/benchmark.h>

#include "vseg/loss.hpp"
#include "vseg/network.hpp"
#include "vseg/ops.hpp"
#include "vseg/phantom.hpp"

using namespace vseg;

namespace {

// Args: channels, dilation, extent (cubic volume).
void BM_Conv3dForward(benchmark::State& state) {
  const std::int64_t c = state.range(0), dil = state.range(1), e = state.range(2);
  std::mt19937_64 rng(1);
  const ConvSpec s = ConvSpec::same(c, c, 3, dil);
  const Tensor x = Tensor::normal({1, c, e, e, e}, rng);
  const Tensor w = Tensor::normal(s.weight_shape(), rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv3d(x, w, {}, s));
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(c * c * 27 * e * e * e),
                                               benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3dForward)
    ->Args({8, 1, 32})
    ->Args({16, 1, 16})
    ->Args({32, 2, 16})
    ->Args({64, 4, 8})
    ->Args({16, 8, 32})
    ->Unit(benchmark::kMillisecond);

void BM_Conv3dBackward(benchmark::State& state) {
  const std::int64_t c = state.range(0), e = state.range(1);
  std::mt19937_64 rng(2);
  const ConvSpec s = ConvSpec::same(c, c, 3);
  const Tensor x = Tensor::normal({1, c, e, e, e}, rng);
  const Tensor w = Tensor::normal(s.weight_shape(), rng);
  const Tensor g = Tensor::normal(x.shape(), rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv3d_backward_input(g, w, s, x.shape()));
    benchmark::DoNotOptimize(conv3d_backward_params(x, g, s));
  }
}
BENCHMARK(BM_Conv3dBackward)->Args({8, 32})->Args({32, 16})->Unit(benchmark::kMillisecond);

// One training step (forward, loss, backward) of a default-width network on
// a 16x32x32 phantom patch. Arg: 1 for the full model, 0 for the baseline.
void BM_NetworkStep(benchmark::State& state) {
  NetConfig cfg;
  if (state.range(0) == 0) {
    cfg.encoder_attention = AttentionKind::kNone;
    cfg.bottleneck = PyramidKind::kNone;
  }
  Network net(cfg, 1);
  const VolumeSample s = generate_phantom(PhantomSpec{}, 3);
  const Tensor x = normalize_input(cfg, s.image);
  const Tensor ref = s.lesion_mask.to_tensor();
  for (auto _ : state) {
    Tape tape(NormMode::kTrain);
    Var loss = ad::combined_loss(net.forward(tape.input(x)), ref).combined;
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.gradients(net.params()));
  }
  state.SetLabel(cfg.label());
}
BENCHMARK(BM_NetworkStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
