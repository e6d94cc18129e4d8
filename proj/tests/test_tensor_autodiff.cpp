#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "futu/grad_check.hpp"
#include "futu/layers.hpp"
#include "futu/ops.hpp"
#include "futu/tape.hpp"
#include "futu/tensor.hpp"
#include "testutil.hpp"

using namespace futu;

TEST_CASE("matmul: A * I == A exactly") {
    std::mt19937 rng(7);
    Tensor a = testutil::random_tensor<float>({3, 3}, rng);
    Tensor eye({3, 3});
    for (std::size_t i = 0; i < 3; ++i) eye.at({i, i}) = 1.0f;
    Tape tape(false);
    Tensor c = ops::matmul(tape, a, eye);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(c.data()[i] == a.data()[i]);
}

TEST_CASE("matmul: hand case and triple-loop oracle") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {5, 6, 7, 8});
    Tape tape(false);
    Tensor c = ops::matmul(tape, a, b);
    CHECK(c.at({0, 0}) == doctest::Approx(19));
    CHECK(c.at({0, 1}) == doctest::Approx(22));
    CHECK(c.at({1, 0}) == doctest::Approx(43));
    CHECK(c.at({1, 1}) == doctest::Approx(50));

    std::mt19937 rng(11);
    Tensor x = testutil::random_tensor<float>({4, 6}, rng);
    Tensor y = testutil::random_tensor<float>({6, 5}, rng);
    Tensor got = ops::matmul(tape, x, y);
    Tensor want = testutil::matmul_oracle(x, y);
    for (std::size_t i = 0; i < got.numel(); ++i)
        CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-5));
}

TEST_CASE("matmul: dimension mismatch names both shapes") {
    Tensor a({2, 3});
    Tensor b({2, 3});
    Tape tape(false);
    CHECK_THROWS_WITH_AS(ops::matmul(tape, a, b),
                         doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("batched matmul matches per-slice oracle, both b layouts") {
    std::mt19937 rng(12);
    Tensor a = testutil::random_tensor<float>({3, 2, 4}, rng);
    Tensor b = testutil::random_tensor<float>({3, 4, 5}, rng);
    Tensor bt = testutil::random_tensor<float>({3, 5, 4}, rng);
    Tape tape(false);
    Tensor c = ops::batched_matmul(tape, a, b);
    Tensor ct = ops::batched_matmul(tape, a, bt, /*transpose_b=*/true);
    REQUIRE(c.shape() == Shape{3, 2, 5});
    REQUIRE(ct.shape() == Shape{3, 2, 5});
    for (std::size_t g = 0; g < 3; ++g)
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 5; ++j) {
                float acc = 0, acct = 0;
                for (std::size_t k = 0; k < 4; ++k) {
                    acc += a.at({g, i, k}) * b.at({g, k, j});
                    acct += a.at({g, i, k}) * bt.at({g, j, k});
                }
                CHECK(c.at({g, i, j}) == doctest::Approx(acc).epsilon(1e-5));
                CHECK(ct.at({g, i, j}) == doctest::Approx(acct).epsilon(1e-5));
            }
}

TEST_CASE("pointwise: definitions") {
    Tape tape(false);
    Tensor x({4}, {-2.0f, 3.0f, 0.0f, 1.0f});
    Tensor r = ops::relu(tape, x);
    CHECK(r.data()[0] == 0.0f);
    CHECK(r.data()[1] == 3.0f);
    Tensor s = ops::sigmoid(tape, x);
    CHECK(s.data()[2] == doctest::Approx(0.5));
    // gelu(1.0) against an erf-free quadrature oracle for x*Phi(x)
    Tensor g = ops::gelu(tape, x);
    const double want = 1.0 * testutil::phi_simpson(1.0);
    CHECK(g.data()[3] == doctest::Approx(want).epsilon(1e-6));
    CHECK(g.data()[3] == doctest::Approx(0.841345).epsilon(1e-5));
}

TEST_CASE("pointwise: non-finite input detected") {
    Tape tape(false);
    Tensor x({2}, {1.0f, std::numeric_limits<float>::infinity()});
    CHECK_THROWS_AS(ops::relu(tape, x), ContractError);
}

TEST_CASE("softmax: closed forms and normalization") {
    Tape tape(false);
    Tensor c = Tensor::full({5}, 3.25f);
    Tensor u = ops::softmax(tape, c, 0);
    for (float v : u.data()) CHECK(v == doctest::Approx(0.2));

    Tensor two({2}, {0.0f, std::log(3.0f)});
    Tensor p = ops::softmax(tape, two, 0);
    CHECK(p.data()[0] == doctest::Approx(0.25));
    CHECK(p.data()[1] == doctest::Approx(0.75));

    std::mt19937 rng(3);
    Tensor m = testutil::random_tensor<float>({8, 8}, rng, false, -4.0, 4.0);
    for (std::size_t axis = 0; axis < 2; ++axis) {
        Tensor sm = ops::softmax(tape, m, axis);
        for (std::size_t i = 0; i < 8; ++i) {
            double sum = 0;
            for (std::size_t k = 0; k < 8; ++k)
                sum += axis == 0 ? sm.at({k, i}) : sm.at({i, k});
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }

    CHECK_THROWS_AS(ops::softmax(tape, m, 2), ShapeError);
}

TEST_CASE("softmax: invariant to adding a constant per slice") {
    std::mt19937 rng(5);
    Tape tape(false);
    Tensor x = testutil::random_tensor<float>({3, 6}, rng);
    Tensor shifted = x.clone();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < 6; ++k) shifted.at({i, k}) += 2.5f;
    Tensor a = ops::softmax(tape, x, 1);
    Tensor b = ops::softmax(tape, shifted, 1);
    for (std::size_t i = 0; i < a.numel(); ++i)
        CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-6));
}

TEST_CASE("backward: sum of squares gives 2x") {
    std::mt19937 rng(17);
    Tensor x = testutil::random_tensor<float>({2, 3}, rng, true);
    Tape tape;
    Tensor sq = ops::mul(tape, x, x);
    Tensor loss = ops::sum_all(tape, sq);
    tape.backward(loss);
    REQUIRE(x.has_grad());
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(x.grad()[i] == doctest::Approx(2.0f * x.data()[i]));
}

TEST_CASE("backward: sum gives all-ones; non-scalar loss rejected") {
    Tensor x = Tensor::full({4}, 0.5f, true);
    Tape tape;
    Tensor loss = ops::sum_all(tape, x);
    tape.backward(loss);
    for (float g : x.grad()) CHECK(g == 1.0f);

    Tensor y = Tensor::full({4}, 0.5f, true);
    Tape tape2;
    Tensor notloss = ops::mul(tape2, y, y);
    CHECK_THROWS_AS(tape2.backward(notloss), ContractError);
}

TEST_CASE("backward: fan-in accumulates per-path gradients") {
    std::mt19937 rng(23);
    Tensor x = testutil::random_tensor<float>({5}, rng, true);
    Tape tape;
    // x feeds two consumers; d/dx = 2 + 2x
    Tensor u = ops::scale(tape, x, 2.0f);
    Tensor v = ops::mul(tape, x, x);
    Tensor loss = ops::sum_all(tape, ops::add(tape, u, v));
    tape.backward(loss);
    for (std::size_t i = 0; i < x.numel(); ++i)
        CHECK(x.grad()[i] == doctest::Approx(2.0f + 2.0f * x.data()[i]).epsilon(1e-6));
}

TEST_CASE("tape: ops are recorded in topological order") {
    Tensor x = Tensor::full({3}, 1.5f, true);
    Tape tape;
    Tensor a = ops::scale(tape, x, 2.0f);
    Tensor b = ops::mul(tape, a, a);
    Tensor loss = ops::sum_all(tape, b);
    REQUIRE(tape.size() == 3);
    std::set<const void*> produced{x.id()};
    for (std::size_t i = 0; i < tape.size(); ++i) {
        for (const auto& in : tape.op(i).inputs) CHECK(produced.count(in.id()) == 1);
        produced.insert(tape.op(i).output.id());
    }
    CHECK(tape.op(tape.size() - 1).output.id() == loss.id());
}

TEST_CASE("grad_check: linear map is exact to roundoff") {
    std::mt19937 rng(29);
    Tensor64 x = testutil::random_tensor<double>({3, 3}, rng, true);
    auto fn = [&](Tape64& tape) { return ops::sum_all(tape, ops::scale(tape, x, 3.5)); };
    auto report = grad_check(fn, {&x}, 1e-4, 1e-4);
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("grad_check: composite conv -> relu -> sum matches finite differences") {
    std::mt19937 rng(31);
    Tensor64 x = testutil::random_tensor<double>({1, 4, 4, 2}, rng, true);
    auto conv = layers::Conv2DParamsT<double>::he_init(3, 3, 2, 3, rng);
    auto fn = [&](Tape64& tape) {
        return ops::sum_all(tape, ops::relu(tape, layers::conv2d(tape, x, conv)));
    };
    auto report = grad_check(fn, {&x, &conv.weights, &conv.bias}, 1e-4, 1e-4);
    INFO("max_rel_err=", report.max_rel_err);
    CHECK(report.pass);
}

TEST_CASE("grad_check: corrupted backward rule is caught") {
    std::mt19937 rng(37);
    Tensor64 x = testutil::random_tensor<double>({4}, rng, true, 0.5, 1.5);
    // square with a deliberately wrong pullback (3x instead of 2x)
    auto broken_square = [](Tape64& tape, const Tensor64& in) {
        Tensor64 out(in.shape(), in.requires_grad());
        for (std::size_t i = 0; i < in.numel(); ++i)
            out.data()[i] = in.data()[i] * in.data()[i];
        tape.record("broken_square", {in}, out, [in, out]() mutable {
            for (std::size_t i = 0; i < in.numel(); ++i)
                in.grad()[i] += out.grad()[i] * 3.0 * in.data()[i];
        });
        return out;
    };
    auto fn = [&](Tape64& tape) { return ops::sum_all(tape, broken_square(tape, x)); };
    auto report = grad_check(fn, {&x}, 1e-4, 1e-4);
    CHECK_FALSE(report.pass);
}

TEST_CASE("grad_check: non-finite numeric gradient is reported with its index") {
    // log(x) with x just above zero: the x-h probe goes negative -> NaN
    Tensor64 x({2}, {5.0, 1e-6}, true);
    auto log_op = [](Tape64& tape, const Tensor64& in) {
        Tensor64 out(in.shape(), in.requires_grad());
        for (std::size_t i = 0; i < in.numel(); ++i) out.data()[i] = std::log(in.data()[i]);
        tape.record("log", {in}, out, [in, out]() mutable {
            for (std::size_t i = 0; i < in.numel(); ++i)
                in.grad()[i] += out.grad()[i] / in.data()[i];
        });
        return out;
    };
    auto fn = [&](Tape64& tape) { return ops::sum_all(tape, log_op(tape, x)); };
    auto report = grad_check(fn, {&x}, 1e-4, 1e-4);
    CHECK_FALSE(report.pass);
    CHECK(report.note.find("non-finite") != std::string::npos);
    CHECK(report.worst_offset == 1);
}

TEST_CASE("row-major indexing round-trips coordinates") {
    const Shape shape{3, 4, 5};
    Tensor t(shape);
    std::size_t flat = 0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t k = 0; k < 5; ++k) {
                CHECK(t.offset({i, j, k}) == flat);
                // invert: coordinates back from the flat index
                std::size_t rem = flat;
                const std::size_t kk = rem % 5;
                rem /= 5;
                const std::size_t jj = rem % 4;
                const std::size_t ii = rem / 4;
                CHECK(ii == i);
                CHECK(jj == j);
                CHECK(kk == k);
                ++flat;
            }
}

TEST_CASE("reshape, concat and head split/merge backward bookkeeping") {
    std::mt19937 rng(41);
    Tensor64 x = testutil::random_tensor<double>({2, 3, 4}, rng, true);
    Tensor64 y = testutil::random_tensor<double>({2, 3, 2}, rng, true);
    auto fn = [&](Tape64& tape) {
        Tensor64 cat = ops::concat_last_axis(tape, x, y);     // [2,3,6]
        Tensor64 heads = ops::split_heads(tape, cat, 2);      // [2,2,3,3]
        Tensor64 merged = ops::merge_heads(tape, heads);      // [2,3,6]
        Tensor64 flat = ops::reshape(tape, merged, {6, 6});
        return ops::sum_all(tape, ops::mul(tape, flat, flat));
    };
    auto report = grad_check(fn, {&x, &y}, 1e-5, 1e-4);
    INFO("max_rel_err=", report.max_rel_err);
    CHECK(report.pass);

    // split/merge round trip is the identity
    Tape tape(false);
    Tensor z = testutil::random_tensor<float>({2, 4, 6}, rng);
    Tensor rt = ops::merge_heads(tape, ops::split_heads(tape, z, 3));
    for (std::size_t i = 0; i < z.numel(); ++i) CHECK(rt.data()[i] == z.data()[i]);
}
