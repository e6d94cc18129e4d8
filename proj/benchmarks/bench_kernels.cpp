#include <benchmark/benchmark.h>

#include <random>

#include "futu/layers.hpp"
#include "futu/metrics.hpp"
#include "futu/ops.hpp"

using namespace futu;

namespace {

Tensor random_tensor(Shape shape, std::uint32_t seed) {
    Tensor t(std::move(shape));
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    for (auto& v : t.data()) v = d(rng);
    return t;
}

void BM_matmul(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Tensor a = random_tensor({n, n}, 1);
    Tensor b = random_tensor({n, n}, 2);
    Tape tape(false);
    for (auto _ : state) {
        Tensor c = ops::matmul(tape, a, b);
        benchmark::DoNotOptimize(c.ptr());
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * 2 * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(128)->Arg(256)->Arg(512);

void BM_conv2d_encoder_stage1(benchmark::State& state) {
    // the heaviest convolution of the full-size network: 256x256x32 -> 32
    std::mt19937 rng(3);
    Tensor x = random_tensor({1, 256, 256, 32}, 4);
    auto p = layers::Conv2DParamsT<float>::he_init(3, 3, 32, 32, rng);
    Tape tape(false);
    for (auto _ : state) {
        Tensor y = conv2d(tape, x, p);
        benchmark::DoNotOptimize(y.ptr());
    }
}
BENCHMARK(BM_conv2d_encoder_stage1)->Unit(benchmark::kMillisecond);

void BM_maxpool(benchmark::State& state) {
    Tensor x = random_tensor({1, 256, 256, 32}, 5);
    Tape tape(false);
    for (auto _ : state) {
        Tensor y = layers::maxpool2x2(tape, x);
        benchmark::DoNotOptimize(y.ptr());
    }
}
BENCHMARK(BM_maxpool)->Unit(benchmark::kMillisecond);

void BM_softmax_attention_rows(benchmark::State& state) {
    Tensor x = random_tensor({8, 256, 256}, 6); // one full-size attention score block
    Tape tape(false);
    for (auto _ : state) {
        Tensor y = ops::softmax(tape, x, 2);
        benchmark::DoNotOptimize(y.ptr());
    }
}
BENCHMARK(BM_softmax_attention_rows)->Unit(benchmark::kMillisecond);

void BM_dice_iou(benchmark::State& state) {
    std::mt19937 rng(7);
    metrics::Mask a(256 * 256), b(256 * 256);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng() & 1;
        b[i] = rng() & 1;
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(metrics::dice(a, b));
        benchmark::DoNotOptimize(metrics::iou(a, b));
    }
}
BENCHMARK(BM_dice_iou)->Unit(benchmark::kMicrosecond);

} // namespace
