// OpenMP kernels vs the serial reference.

#include <benchmark/benchmark.h>

#include <vector>

#include "hgru/kernels.hpp"
#include "hgru/random.hpp"

using namespace hgru;

namespace {

struct Buffers {
  ConvDims d;
  std::vector<float> in, w, b, out;

  explicit Buffers(std::size_t c, std::size_t hw, std::size_t k) : d{c, c, hw, hw, k} {
    Rng rng(7);
    auto fill = [&](std::vector<float>& v, std::size_t n) {
      v.resize(n);
      for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    };
    fill(in, d.input_size());
    fill(w, d.weight_size());
    fill(b, c);
    out.assign(d.output_size(), 0.0f);
  }
};

template <bool Fast>
void BM_conv_forward(benchmark::State& state) {
  Buffers buf(state.range(0), state.range(1), state.range(2));
  for (auto _ : state) {
    if constexpr (Fast)
      kernels::conv2d_forward<float>(buf.d, buf.in, buf.w, buf.b, buf.out);
    else
      reference::conv2d_forward<float>(buf.d, buf.in, buf.w, buf.b, buf.out);
    benchmark::DoNotOptimize(buf.out.data());
  }
  state.SetItemsProcessed(state.iterations() * buf.d.output_size() * buf.d.in_channels * buf.d.kernel * buf.d.kernel);
}

template <bool Fast>
void BM_conv_backward_input(benchmark::State& state) {
  Buffers buf(state.range(0), state.range(1), state.range(2));
  std::vector<float> gin(buf.d.input_size());
  for (auto _ : state) {
    if constexpr (Fast)
      kernels::conv2d_backward_input<float>(buf.d, buf.out, buf.w, gin);
    else
      reference::conv2d_backward_input<float>(buf.d, buf.out, buf.w, gin);
    benchmark::DoNotOptimize(gin.data());
  }
}

template <bool Fast>
void BM_conv_backward_params(benchmark::State& state) {
  Buffers buf(state.range(0), state.range(1), state.range(2));
  std::vector<float> gw(buf.d.weight_size()), gb(buf.d.out_channels);
  for (auto _ : state) {
    if constexpr (Fast)
      kernels::conv2d_backward_params<float>(buf.d, buf.out, buf.in, gw, gb);
    else
      reference::conv2d_backward_params<float>(buf.d, buf.out, buf.in, gw, gb);
    benchmark::DoNotOptimize(gw.data());
  }
}

void shapes(benchmark::internal::Benchmark* b) {
  for (long hw : {16, 32, 64}) b->Args({36, hw, 3});
  b->Args({16, 32, 5});
  b->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(BM_conv_forward<true>)->Name("kernels/conv_forward")->Apply(shapes);
BENCHMARK(BM_conv_forward<false>)->Name("reference/conv_forward")->Apply(shapes);
BENCHMARK(BM_conv_backward_input<true>)->Name("kernels/conv_backward_input")->Apply(shapes);
BENCHMARK(BM_conv_backward_input<false>)->Name("reference/conv_backward_input")->Apply(shapes);
BENCHMARK(BM_conv_backward_params<true>)->Name("kernels/conv_backward_params")->Apply(shapes);
BENCHMARK(BM_conv_backward_params<false>)->Name("reference/conv_backward_params")->Apply(shapes);

BENCHMARK_MAIN();
