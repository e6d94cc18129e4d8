#include <benchmark/benchmark.h>

#include <random>

#include "futu/metrics.hpp"
#include "futu/model.hpp"
#include "futu/training.hpp"

using namespace futu;

namespace {

Tensor random_image(Shape shape, std::uint32_t seed) {
    Tensor t(std::move(shape));
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> d(0.0f, 1.0f);
    for (auto& v : t.data()) v = d(rng);
    return t;
}

void BM_scaled_forward(benchmark::State& state) {
    auto w = model::ModelWeightsT<float>::init(model::ModelConfig::scaled(), 1);
    w.set_mode(layers::Mode::infer);
    Tensor image = random_image({1, 64, 64, 3}, 2);
    for (auto _ : state) {
        Tape tape(false);
        Tensor probs = model::forward(tape, image, w);
        benchmark::DoNotOptimize(probs.ptr());
    }
}
BENCHMARK(BM_scaled_forward)->Unit(benchmark::kMillisecond);

void BM_scaled_train_step(benchmark::State& state) {
    auto w = model::ModelWeightsT<float>::init(model::ModelConfig::scaled(), 3);
    w.set_mode(layers::Mode::train);
    Tensor images = random_image({2, 64, 64, 3}, 4);
    Tensor masks({2, 64, 64, 1});
    std::mt19937 rng(5);
    for (auto& v : masks.data()) v = rng() % 5 == 0 ? 1.0f : 0.0f;

    auto named = w.named_parameters();
    std::vector<Tensor> params;
    for (auto& [name, t] : named) params.push_back(t);
    training::AdamState adam(std::move(params), 1e-3);

    for (auto _ : state) {
        Tape tape(true);
        Tensor probs = model::forward(tape, images, w);
        Tensor loss = metrics::bce_loss(tape, probs, masks);
        tape.backward(loss);
        adam.step();
        adam.zero_grads();
        benchmark::DoNotOptimize(loss.value());
    }
}
BENCHMARK(BM_scaled_train_step)->Unit(benchmark::kMillisecond);

void BM_full_size_forward(benchmark::State& state) {
    auto w = model::ModelWeightsT<float>::init(model::ModelConfig::paper(), 6);
    w.set_mode(layers::Mode::infer);
    Tensor image = random_image({1, 256, 256, 3}, 7);
    for (auto _ : state) {
        Tape tape(false);
        Tensor probs = model::forward(tape, image, w);
        benchmark::DoNotOptimize(probs.ptr());
    }
}
BENCHMARK(BM_full_size_forward)->Unit(benchmark::kMillisecond)->Iterations(2);

} // namespace
