#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "futu/grad_check.hpp"
#include "futu/metrics.hpp"
#include "testutil.hpp"

using namespace futu;
using namespace futu::metrics;

TEST_CASE("binarize: strict threshold, idempotence, contract") {
    Mask m = binarize({0.49f, 0.51f, 0.5f, 0.0f, 1.0f});
    CHECK(m == Mask{0, 1, 0, 0, 1});

    // idempotent: masks re-thresholded stay put
    std::vector<float> as_float(m.begin(), m.end());
    CHECK(binarize(as_float) == m);

    CHECK_THROWS_AS(binarize({1.2f}), ContractError);
    CHECK_THROWS_AS(binarize({-0.1f}), ContractError);
}

TEST_CASE("dice: identity with epsilon, disjoint, superset case") {
    Mask eight(16, 0);
    for (int i = 0; i < 8; ++i) eight[i] = 1;
    CHECK(dice(eight, eight) == doctest::Approx(16.0 / (16.0 + 1e-6)).epsilon(1e-12));

    Mask other(16, 0);
    for (int i = 8; i < 16; ++i) other[i] = 1;
    CHECK(dice(eight, other) == 0.0);

    Mask all(16, 1);
    CHECK(dice(all, eight) == doctest::Approx(16.0 / (24.0 + 1e-6)).epsilon(1e-12));

    CHECK_THROWS_AS(dice(all, Mask(8, 1)), ShapeError);
}

TEST_CASE("iou: identity, superset case, empty-vs-empty") {
    Mask eight(16, 0);
    for (int i = 0; i < 8; ++i) eight[i] = 1;
    CHECK(iou(eight, eight) == doctest::Approx(1.0).epsilon(1e-6));

    Mask all(16, 1);
    CHECK(iou(all, eight) == doctest::Approx(8.0 / (16.0 + 1e-6)).epsilon(1e-12));

    Mask empty(16, 0);
    CHECK(iou(empty, empty) == 0.0); // 0 / eps, not 0/0
}

TEST_CASE("pixel_accuracy: identity, complement, hand-counted confusion") {
    Mask a{1, 1, 0, 0};
    CHECK(pixel_accuracy(a, a) == 1.0);
    Mask b{0, 0, 1, 1};
    CHECK(pixel_accuracy(a, b) == 0.0);

    // 4x4 with tp=2, tn=10, fp=3, fn=1
    Mask pred(16, 0), truth(16, 0);
    pred[0] = pred[1] = 1;
    truth[0] = truth[1] = 1;        // tp = 2
    pred[2] = pred[3] = pred[4] = 1; // fp = 3
    truth[5] = 1;                    // fn = 1
    ConfusionCounts c;
    const double acc = pixel_accuracy(pred, truth, &c);
    CHECK(c.tp == 2);
    CHECK(c.tn == 10);
    CHECK(c.fp == 3);
    CHECK(c.fn == 1);
    CHECK(c.total() == 16);
    CHECK(acc == doctest::Approx(12.0 / 16.0));
}

TEST_CASE("dice-iou consistency: dice == 2*iou/(1+iou) within 1e-9") {
    std::mt19937 rng(99);
    std::uniform_int_distribution<int> bit(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        Mask a(64), b(64);
        bool any = false;
        for (int i = 0; i < 64; ++i) {
            a[i] = static_cast<std::uint8_t>(bit(rng));
            b[i] = static_cast<std::uint8_t>(bit(rng));
            any = any || a[i] || b[i];
        }
        if (!any) a[0] = 1; // nonempty union
        const double d = dice(a, b);
        const double j = iou(a, b);
        CHECK(std::abs(d - 2.0 * j / (1.0 + j)) < 1e-9);
        CHECK(d >= 0.0);
        CHECK(d <= 1.0);
        CHECK(j >= 0.0);
        CHECK(j <= 1.0);
    }
    // instantiated at the reported numbers: IoU 0.7780 -> Dice 0.8751
    CHECK(2.0 * 0.7780 / 1.7780 == doctest::Approx(0.8751).epsilon(1e-4));
}

TEST_CASE("dice and iou grow with the intersection at fixed mask sizes") {
    // |pred| = |true| = 8 over 32 pixels; slide the overlap from 0 to 8
    double prev_d = -1, prev_j = -1;
    for (int k = 0; k <= 8; ++k) {
        Mask pred(32, 0), truth(32, 0);
        for (int i = 0; i < 8; ++i) truth[i] = 1;
        for (int i = 0; i < 8; ++i) pred[8 - k + i] = 1; // k pixels overlap
        const double d = dice(pred, truth);
        const double j = iou(pred, truth);
        CHECK(d >= prev_d);
        CHECK(j >= prev_j);
        prev_d = d;
        prev_j = j;
    }
}

TEST_CASE("bce_loss: closed forms") {
    Tape tape(false);
    Tensor half = Tensor::full({2, 4}, 0.5f);
    Tensor y({2, 4}, {0, 1, 0, 1, 1, 1, 0, 0});
    CHECK(bce_loss(tape, half, y).value() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    // perfect prediction: clamp-limited optimum, about 1e-7
    Tensor exact = y.clone();
    const float at_optimum = bce_loss(tape, exact, y).value();
    CHECK(at_optimum > 0.0f);
    CHECK(at_optimum < 2e-7f);

    Tensor p9 = Tensor::full({1}, 0.9f);
    Tensor one = Tensor::ones({1});
    CHECK(bce_loss(tape, p9, one).value() == doctest::Approx(0.105361).epsilon(1e-5));

    CHECK_THROWS_AS(bce_loss(tape, Tensor::full({2}, 1.5f), Tensor::ones({2})), ContractError);
    CHECK_THROWS_AS(bce_loss(tape, half, Tensor::full({2, 4}, 0.3f)), ContractError);
    CHECK_THROWS_AS(bce_loss(tape, half, Tensor::ones({8})), ShapeError);
}

TEST_CASE("bce_loss: gradient matches finite differences away from the clamp") {
    std::mt19937 rng(7);
    Tensor64 prob = testutil::random_tensor<double>({3, 3}, rng, true, 0.1, 0.9);
    Tensor64 target({3, 3});
    std::uniform_int_distribution<int> bit(0, 1);
    for (auto& v : target.data()) v = bit(rng);
    auto fn = [&](Tape64& tape) { return bce_loss(tape, prob, target); };
    auto rep = grad_check(fn, {&prob}, 1e-5, 1e-4);
    INFO("err=", rep.max_rel_err);
    CHECK(rep.pass);
}

TEST_CASE("accumulator: perfect predictor and constant-0.5 predictor") {
    // two 4x4 one-channel images with an 8-pixel foreground each
    Tensor masks({2, 4, 4, 1});
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < 8; ++i) masks.data()[b * 16 + i] = 1.0f;

    MetricAccumulator perfect;
    perfect.add_batch(masks, masks); // probabilities equal to the labels
    auto r = perfect.report();
    CHECK(r.accuracy == 1.0);
    CHECK(r.dice == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.iou == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.loss < 2e-7);

    MetricAccumulator constant;
    constant.add_batch(Tensor::full({2, 4, 4, 1}, 0.5f), masks);
    auto c = constant.report();
    // strict threshold: everything predicted background
    CHECK(c.accuracy == doctest::Approx(0.5)); // background fraction
    CHECK(c.dice == doctest::Approx(0.0));
    CHECK(c.iou == doctest::Approx(0.0));
    CHECK(c.loss == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    MetricAccumulator empty;
    CHECK_THROWS_AS(empty.report(), ContractError);
}

TEST_CASE("evaluate: runs a real model over batches and stays in [0,1] bounds") {
    auto w = model::ModelWeightsT<float>::init(model::ModelConfig::scaled(), 21);
    std::mt19937 rng(22);
    std::vector<Batch> batches;
    for (int i = 0; i < 2; ++i) {
        Batch b;
        b.images = testutil::random_tensor<float>({2, 64, 64, 3}, rng, false, 0.0, 1.0);
        b.masks = Tensor({2, 64, 64, 1});
        for (auto& v : b.masks.data()) v = rng() % 4 == 0 ? 1.0f : 0.0f;
        batches.push_back(std::move(b));
    }
    auto r = evaluate(w, batches);
    CHECK(r.loss >= 0.0);
    CHECK(r.accuracy >= 0.0);
    CHECK(r.accuracy <= 1.0);
    CHECK(r.dice >= 0.0);
    CHECK(r.dice <= 1.0);
    CHECK(r.iou >= 0.0);
    CHECK(r.iou <= 1.0);
    CHECK(r.dice >= r.iou); // dice dominates iou pointwise

    CHECK_THROWS_AS(evaluate(w, {}), ContractError);
}
