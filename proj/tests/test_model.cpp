#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "futu/grad_check.hpp"
#include "futu/model.hpp"
#include "testutil.hpp"

using namespace futu;
using namespace futu::model;

namespace {

std::filesystem::path temp_path(const char* stem) {
    return std::filesystem::temp_directory_path() / stem;
}

} // namespace

TEST_CASE("encode: paper-config feature shapes follow the halving/doubling schedule") {
    auto w = ModelWeightsT<float>::init(ModelConfig::paper(), 1);
    Tensor image = Tensor::full({1, 256, 256, 3}, 0.5f);
    Tape tape(false);
    auto f = encode(tape, image, w);
    CHECK(f.c1.shape() == Shape{1, 256, 256, 32});
    CHECK(f.c2.shape() == Shape{1, 128, 128, 64});
    CHECK(f.c3.shape() == Shape{1, 64, 64, 128});
    CHECK(f.c4.shape() == Shape{1, 32, 32, 256});
    CHECK(f.p4.shape() == Shape{1, 16, 16, 256});
    for (const auto* t : {&f.c1, &f.c2, &f.c3, &f.c4, &f.p4})
        for (float v : t->data())
            if (v < 0.0f) FAIL("encoder features must be nonnegative (blocks end in ReLU)");
}

TEST_CASE("encode: scaled config gives p4 of 4x4x64; wrong input shape rejected") {
    auto w = ModelWeightsT<float>::init(ModelConfig::scaled(), 2);
    std::mt19937 rng(3);
    Tensor image = testutil::random_tensor<float>({2, 64, 64, 3}, rng, false, 0.0, 1.0);
    Tape tape(false);
    auto f = encode(tape, image, w);
    CHECK(f.p4.shape() == Shape{2, 4, 4, 64});

    Tensor wrong({1, 32, 32, 3});
    CHECK_THROWS_AS(encode(tape, wrong, w), ShapeError);
}

TEST_CASE("decode: concat widths follow the schedule; output strictly in (0,1)") {
    // shape-walk oracle over the stated schedule, upsample + skip widths
    const ModelConfig cfg = ModelConfig::paper();
    std::size_t in_ch = cfg.encoder_filters[3];
    std::size_t expect_concat[4];
    for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t up_ch = cfg.decoder_filters[i];  // transposed conv output
        expect_concat[i] = up_ch + cfg.encoder_filters[3 - i];
        in_ch = cfg.decoder_filters[i];
    }
    CHECK(expect_concat[0] == 512);
    CHECK(expect_concat[1] == 256);
    CHECK(expect_concat[2] == 128);
    CHECK(expect_concat[3] == 64);
    auto w = ModelWeightsT<float>::init(cfg, 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(w.dec[i].conv1.weights.dim(2) == expect_concat[i]);
        CHECK(w.up[i].weights.dim(3) == cfg.decoder_filters[i]);
    }

    // probabilities strictly inside (0,1) on a scaled forward
    auto ws = ModelWeightsT<float>::init(ModelConfig::scaled(), 5);
    ws.set_mode(layers::Mode::infer);
    std::mt19937 rng(6);
    Tensor image = testutil::random_tensor<float>({1, 64, 64, 3}, rng, false, 0.0, 1.0);
    Tape tape(false);
    Tensor probs = forward(tape, image, ws);
    REQUIRE(probs.shape() == Shape{1, 64, 64, 1});
    for (float v : probs.data()) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
}

TEST_CASE("forward: trace shapes at scaled config; identical images give identical maps") {
    auto w = ModelWeightsT<float>::init(ModelConfig::scaled(), 7);
    w.set_mode(layers::Mode::infer);
    std::mt19937 rng(8);
    Tensor one = testutil::random_tensor<float>({1, 64, 64, 3}, rng, false, 0.0, 1.0);
    Tensor batch({2, 64, 64, 3});
    std::copy(one.data().begin(), one.data().end(), batch.data().begin());
    std::copy(one.data().begin(), one.data().end(), batch.data().begin() + one.numel());

    Tape tape(false);
    std::size_t layer_calls = 0;
    auto trace = forward_full(tape, batch, w, &layer_calls);
    CHECK(layer_calls == 2); // scaled transformer depth
    CHECK(trace.bottleneck.shape() == Shape{2, 4, 4, 64});
    CHECK(trace.dec[0].shape() == Shape{2, 8, 8, 64});
    CHECK(trace.dec[1].shape() == Shape{2, 16, 16, 32});
    CHECK(trace.dec[2].shape() == Shape{2, 32, 32, 16});
    CHECK(trace.dec[3].shape() == Shape{2, 64, 64, 8});
    CHECK(trace.probs.shape() == Shape{2, 64, 64, 1});
    const std::size_t half = trace.probs.numel() / 2;
    for (std::size_t i = 0; i < half; ++i)
        CHECK(trace.probs.data()[i] == trace.probs.data()[half + i]);

    // infer-mode forward is a pure function: byte-identical across calls
    Tensor again = forward(tape, batch, w);
    for (std::size_t i = 0; i < again.numel(); ++i)
        CHECK(again.data()[i] == trace.probs.data()[i]);
}

TEST_CASE("decode: standalone decoder path reproduces the forward probabilities") {
    auto w = model::ModelWeightsT<float>::init(ModelConfig::scaled(), 30);
    w.set_mode(layers::Mode::infer);
    std::mt19937 rng(31);
    Tensor image = testutil::random_tensor<float>({1, 64, 64, 3}, rng, false, 0.0, 1.0);
    Tape tape(false);
    auto trace = forward_full(tape, image, w);
    Tensor probs = decode(tape, trace.bottleneck, trace.enc, w);
    REQUIRE(probs.shape() == trace.probs.shape());
    for (std::size_t i = 0; i < probs.numel(); ++i)
        CHECK(probs.data()[i] == trace.probs.data()[i]);

    // a skip of the wrong spatial size names the failing stage
    auto bad = trace.enc;
    bad.c3 = Tensor({1, 8, 8, 32});
    CHECK_THROWS_WITH_AS(decode(tape, trace.bottleneck, bad, w), doctest::Contains("stage 2"),
                         ShapeError);
}

TEST_CASE("forward: nearest-neighbor upsampling variant runs and matches shapes") {
    ModelConfig cfg = ModelConfig::scaled();
    cfg.upsample_kind = UpsampleKind::nearest;
    auto w = ModelWeightsT<float>::init(cfg, 9);
    w.set_mode(layers::Mode::infer);
    std::mt19937 rng(10);
    Tensor image = testutil::random_tensor<float>({1, 64, 64, 3}, rng, false, 0.0, 1.0);
    Tape tape(false);
    CHECK(forward(tape, image, w).shape() == Shape{1, 64, 64, 1});
    // no transposed-conv parameters in this variant
    for (auto& [name, t] : w.named_parameters()) CHECK(name.find(".up.") == std::string::npos);
}

TEST_CASE("count_params: itemization matches the constructed model exactly") {
    for (const ModelConfig& cfg : {ModelConfig::paper(), ModelConfig::scaled()}) {
        auto pc = count_params(cfg);
        auto w = ModelWeightsT<float>::init(cfg, 11);
        auto named = w.named_parameters();
        REQUIRE(pc.items.size() == named.size());
        std::size_t sum = 0;
        for (std::size_t i = 0; i < named.size(); ++i) {
            CHECK(pc.items[i].first == named[i].first);
            CHECK(pc.items[i].second == named[i].second.numel());
            sum += pc.items[i].second;
        }
        CHECK(sum == pc.total);
    }
}

TEST_CASE("count_params: hand arithmetic for known layers") {
    auto pc = count_params(ModelConfig::paper());
    std::size_t enc1_conv1 = 0, head = 0;
    for (const auto& [name, n] : pc.items) {
        if (name == "enc1.conv1.weight" || name == "enc1.conv1.bias") enc1_conv1 += n;
        if (name == "head.weight" || name == "head.bias") head += n;
    }
    CHECK(enc1_conv1 == 3 * 3 * 3 * 32 + 32); // 896
    CHECK(head == 32 + 1);                    // single 1x1 filter + bias
}

TEST_CASE("save/load: bit-exact round trip and error taxonomy") {
    auto w = ModelWeightsT<float>::init(ModelConfig::scaled(), 12);
    const auto path = temp_path("roundtrip.futw");
    save_model(w, path);

    auto w2 = ModelWeightsT<float>::init(ModelConfig::scaled(), 999); // different init
    load_model(w2, path);
    auto a = w.named_tensors();
    auto b = w2.named_tensors();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].second.numel() == b[i].second.numel());
        for (std::size_t j = 0; j < a[i].second.numel(); ++j)
            CHECK(a[i].second.data()[j] == b[i].second.data()[j]);
    }

    // truncated payload -> size mismatch
    const auto trunc = temp_path("truncated.futw");
    {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        std::ofstream out(trunc, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_WITH_AS(load_weights(trunc), doctest::Contains("size mismatch"), IoError);

    // foreign magic
    const auto badmagic = temp_path("badmagic.futw");
    {
        std::ofstream out(badmagic, std::ios::binary);
        out.write("NOPE\x01\x00\x00\x00", 8);
    }
    CHECK_THROWS_WITH_AS(load_weights(badmagic), doctest::Contains("magic"), IoError);

    // future version
    const auto badver = temp_path("badversion.futw");
    {
        std::ofstream out(badver, std::ios::binary);
        out.write("FUTU", 4);
        const std::uint32_t v = 77, n = 0;
        out.write(reinterpret_cast<const char*>(&v), 4);
        out.write(reinterpret_cast<const char*>(&n), 4);
    }
    CHECK_THROWS_WITH_AS(load_weights(badver), doctest::Contains("version"), IoError);

    std::filesystem::remove(path);
    std::filesystem::remove(trunc);
    std::filesystem::remove(badmagic);
    std::filesystem::remove(badver);
}

TEST_CASE("save/load: forward outputs identical before save and after load") {
    auto w = ModelWeightsT<float>::init(ModelConfig::scaled(), 13);
    w.set_mode(layers::Mode::infer);
    std::mt19937 rng(14);
    Tensor image = testutil::random_tensor<float>({1, 64, 64, 3}, rng, false, 0.0, 1.0);
    Tape tape(false);
    Tensor before = forward(tape, image, w);

    const auto path = temp_path("forward_roundtrip.futw");
    save_model(w, path);
    auto w2 = ModelWeightsT<float>::init(ModelConfig::scaled(), 4242);
    load_model(w2, path);
    w2.set_mode(layers::Mode::infer);
    Tensor after = forward(tape, image, w2);
    for (std::size_t i = 0; i < before.numel(); ++i)
        CHECK(before.data()[i] == after.data()[i]);
    std::filesystem::remove(path);
}

TEST_CASE("init: same seed reproduces identical weights") {
    auto a = ModelWeightsT<float>::init(ModelConfig::scaled(), 77);
    auto b = ModelWeightsT<float>::init(ModelConfig::scaled(), 77);
    auto na = a.named_tensors();
    auto nb = b.named_tensors();
    for (std::size_t i = 0; i < na.size(); ++i)
        for (std::size_t j = 0; j < na[i].second.numel(); ++j)
            CHECK(na[i].second.data()[j] == nb[i].second.data()[j]);
}

TEST_CASE("config validation rejects broken schedules") {
    ModelConfig cfg = ModelConfig::paper();
    cfg.encoder_filters = {32, 64, 100, 256};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    ModelConfig odd = ModelConfig::paper();
    odd.input_hw = 250;
    CHECK_THROWS_AS(odd.validate(), ConfigError);
}

TEST_CASE("end-to-end gradient check on a miniature model (all parameters)") {
    // full finite differences are feasible only at a miniature configuration;
    // the scaled model is covered by the sampled acceptance check
    ModelConfig cfg;
    cfg.input_hw = 16;
    cfg.input_channels = 2;
    cfg.encoder_filters = {2, 4, 8, 16};
    cfg.decoder_filters = {16, 8, 4, 2};
    cfg.transformer.depth = 1;
    cfg.transformer.heads = 2;
    cfg.transformer.model_dim = 8;
    cfg.transformer.mlp_hidden = 16;
    cfg.transformer.patch_size = 16;
    cfg.transformer.input_hw = 16;
    cfg.transformer.token_channels = 16;
    auto w = ModelWeightsT<double>::init(cfg, 15);
    w.set_mode(layers::Mode::infer);
    std::mt19937 rng(16);
    for (auto& blk : w.enc) {
        testutil::fill_random(blk.bn1.running_mean, rng, -0.2, 0.2);
        testutil::fill_random(blk.bn1.running_var, rng, 0.5, 1.5);
        testutil::fill_random(blk.bn2.running_mean, rng, -0.2, 0.2);
        testutil::fill_random(blk.bn2.running_var, rng, 0.5, 1.5);
    }
    Tensor64 image = testutil::random_tensor<double>({1, 16, 16, 2}, rng, false, 0.0, 1.0);
    image.set_requires_grad(true);
    Tensor64 probe_w = testutil::random_tensor<double>({1, 16, 16, 1}, rng);
    auto fn = [&](Tape64& tape) {
        return testutil::probe_loss(tape, forward(tape, image, w), probe_w);
    };
    // named_parameters returns handles aliasing the stored tensors; keep the
    // vector alive while grad_check holds pointers into it
    std::vector<std::pair<std::string, Tensor64>> named = w.named_parameters();
    std::vector<Tensor64*> inputs{&image};
    for (auto& [name, t] : named) {
        if (name.find("attn.k.bias") != std::string::npos) continue; // exact null direction
        inputs.push_back(&t);
    }
    auto rep = grad_check(fn, inputs, 1e-4, 1e-4, /*max_elems_per_tensor=*/24, /*seed=*/17);
    INFO("err=", rep.max_rel_err, " checked=", rep.checked_elements);
    CHECK(rep.pass);
}
