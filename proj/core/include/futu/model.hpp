#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "futu/layers.hpp"
#include "futu/transformer.hpp"
#include "futu/weights_io.hpp"

// Assembly of the full encoder-transformer-decoder segmentation network.
namespace futu::model {

enum class UpsampleKind { transposed, nearest };

struct ModelConfig {
    std::size_t input_hw = 256;
    std::size_t input_channels = 3;
    std::array<std::size_t, 4> encoder_filters{32, 64, 128, 256};
    std::array<std::size_t, 4> decoder_filters{256, 128, 64, 32};
    transformer::TransformerConfig transformer;
    UpsampleKind upsample_kind = UpsampleKind::transposed;

    // 256x256x3 input, filters 32..256, 6-layer 8-head transformer at D=256.
    static ModelConfig paper() { return ModelConfig{}; }

    // Desk-scale configuration for fast experiments: 64x64 input, filters
    // [8,16,32,64], transformer depth 2 / heads 4 / D=64.
    static ModelConfig scaled() {
        ModelConfig cfg;
        cfg.input_hw = 64;
        cfg.encoder_filters = {8, 16, 32, 64};
        cfg.decoder_filters = {64, 32, 16, 8};
        cfg.transformer.depth = 2;
        cfg.transformer.heads = 4;
        cfg.transformer.model_dim = 64;
        cfg.transformer.mlp_hidden = 256;
        cfg.transformer.input_hw = 64;
        cfg.transformer.token_channels = 64;
        return cfg;
    }

    void validate() const {
        if (input_hw % 16 != 0)
            throw ConfigError("input_hw must be divisible by 2^4, got " +
                              std::to_string(input_hw));
        for (std::size_t i = 1; i < 4; ++i) {
            if (encoder_filters[i] != 2 * encoder_filters[i - 1])
                throw ConfigError("encoder filters must double per stage");
            if (decoder_filters[i - 1] != 2 * decoder_filters[i])
                throw ConfigError("decoder filters must mirror the encoder schedule");
        }
        if (encoder_filters[3] != decoder_filters[0])
            throw ConfigError("deepest encoder and first decoder widths must agree");
        if (transformer.input_hw != input_hw)
            throw ConfigError("transformer input_hw must match the model input");
        if (transformer.token_channels != encoder_filters[3])
            throw ConfigError("transformer token channels must match the deepest filters");
        // the pooled bottleneck map must provide exactly N token positions
        const std::size_t pooled = input_hw / 16;
        if (pooled * pooled != transformer.num_tokens())
            throw ConfigError("pooled map positions " + std::to_string(pooled * pooled) +
                              " do not match " + std::to_string(transformer.num_tokens()) +
                              " patch tokens");
        transformer.validate();
    }
};

// Skip-connection maps c1..c4 and the pooled transformer input p4.
template <typename S>
struct EncoderFeaturesT {
    TensorT<S> c1, c2, c3, c4, p4;
};

template <typename S>
struct ForwardTraceT {
    EncoderFeaturesT<S> enc;
    TensorT<S> bottleneck;        // transformer output, p4-shaped
    std::array<TensorT<S>, 4> dec; // decoder conv_block outputs, dec[3] feeds the head
    TensorT<S> logits;            // pre-sigmoid head output [B,H,W,1]
    TensorT<S> probs;             // sigmoid(logits)
};

template <typename S>
struct ModelWeightsT {
    ModelConfig config;
    std::array<layers::ConvBlockParamsT<S>, 4> enc;
    transformer::TransformerParamsT<S> bottleneck;
    std::array<layers::Conv2DParamsT<S>, 4> up; // transposed convs; empty for nearest
    std::array<layers::ConvBlockParamsT<S>, 4> dec;
    layers::Conv2DParamsT<S> head;

    static ModelWeightsT init(const ModelConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        std::mt19937 rng(static_cast<std::uint32_t>(mix_seed(seed, 0x6d6f64656cULL)));
        ModelWeightsT w;
        w.config = cfg;
        std::size_t ch = cfg.input_channels;
        for (std::size_t i = 0; i < 4; ++i) {
            w.enc[i] = layers::ConvBlockParamsT<S>::he_init(ch, cfg.encoder_filters[i], rng);
            ch = cfg.encoder_filters[i];
        }
        w.bottleneck = transformer::TransformerParamsT<S>::he_init(cfg.transformer, rng);
        std::size_t in_ch = cfg.encoder_filters[3]; // bottleneck output channels
        for (std::size_t i = 0; i < 4; ++i) {
            std::size_t up_ch = in_ch;
            if (cfg.upsample_kind == UpsampleKind::transposed) {
                up_ch = cfg.decoder_filters[i];
                w.up[i] = layers::Conv2DParamsT<S>::he_init(2, 2, in_ch, up_ch, rng, 2);
            }
            const std::size_t skip_ch = cfg.encoder_filters[3 - i];
            w.dec[i] = layers::ConvBlockParamsT<S>::he_init(up_ch + skip_ch,
                                                            cfg.decoder_filters[i], rng);
            in_ch = cfg.decoder_filters[i];
        }
        w.head = layers::Conv2DParamsT<S>::he_init(1, 1, cfg.decoder_filters[3], 1, rng);
        return w;
    }

    void set_mode(layers::Mode mode) {
        for (auto& b : enc) b.set_mode(mode);
        for (auto& b : dec) b.set_mode(mode);
    }

    // Learnable parameters in a fixed, deterministic order. Handles alias the
    // stored tensors, so optimizers mutate the model in place.
    std::vector<std::pair<std::string, TensorT<S>>> named_parameters() {
        std::vector<std::pair<std::string, TensorT<S>>> out;
        auto add_conv = [&](const std::string& prefix, layers::Conv2DParamsT<S>& c) {
            out.emplace_back(prefix + ".weight", c.weights);
            out.emplace_back(prefix + ".bias", c.bias);
        };
        auto add_bn = [&](const std::string& prefix, layers::BatchNormStateT<S>& bn) {
            out.emplace_back(prefix + ".gamma", bn.gamma);
            out.emplace_back(prefix + ".beta", bn.beta);
        };
        auto add_block = [&](const std::string& prefix, layers::ConvBlockParamsT<S>& b) {
            add_conv(prefix + ".conv1", b.conv1);
            add_bn(prefix + ".bn1", b.bn1);
            add_conv(prefix + ".conv2", b.conv2);
            add_bn(prefix + ".bn2", b.bn2);
        };
        auto add_linear = [&](const std::string& prefix, layers::LinearParamsT<S>& l) {
            out.emplace_back(prefix + ".weight", l.weights);
            out.emplace_back(prefix + ".bias", l.bias);
        };
        for (std::size_t i = 0; i < 4; ++i) add_block("enc" + std::to_string(i + 1), enc[i]);
        add_linear("transformer.proj", bottleneck.proj);
        out.emplace_back("transformer.pos", bottleneck.pos.table);
        for (std::size_t i = 0; i < bottleneck.layer.size(); ++i) {
            const std::string p = "transformer.layer" + std::to_string(i);
            auto& l = bottleneck.layer[i];
            add_linear(p + ".attn.q", l.attn.wq);
            add_linear(p + ".attn.k", l.attn.wk);
            add_linear(p + ".attn.v", l.attn.wv);
            add_linear(p + ".attn.out", l.attn.wo);
            out.emplace_back(p + ".ln1.gamma", l.ln1.gamma);
            out.emplace_back(p + ".ln1.beta", l.ln1.beta);
            add_linear(p + ".mlp1", l.mlp1);
            add_linear(p + ".mlp2", l.mlp2);
            out.emplace_back(p + ".ln2.gamma", l.ln2.gamma);
            out.emplace_back(p + ".ln2.beta", l.ln2.beta);
        }
        add_linear("transformer.back_proj", bottleneck.back_proj);
        for (std::size_t i = 0; i < 4; ++i) {
            const std::string p = "dec" + std::to_string(i + 1);
            if (config.upsample_kind == UpsampleKind::transposed)
                add_conv(p + ".up", up[i]);
            add_block(p, dec[i]);
        }
        add_conv("head", head);
        return out;
    }

    // Non-learnable inference statistics (serialized alongside parameters).
    std::vector<std::pair<std::string, TensorT<S>>> named_buffers() {
        std::vector<std::pair<std::string, TensorT<S>>> out;
        auto add_block = [&](const std::string& prefix, layers::ConvBlockParamsT<S>& b) {
            out.emplace_back(prefix + ".bn1.running_mean", b.bn1.running_mean);
            out.emplace_back(prefix + ".bn1.running_var", b.bn1.running_var);
            out.emplace_back(prefix + ".bn2.running_mean", b.bn2.running_mean);
            out.emplace_back(prefix + ".bn2.running_var", b.bn2.running_var);
        };
        for (std::size_t i = 0; i < 4; ++i) add_block("enc" + std::to_string(i + 1), enc[i]);
        for (std::size_t i = 0; i < 4; ++i) add_block("dec" + std::to_string(i + 1), dec[i]);
        return out;
    }

    std::vector<std::pair<std::string, TensorT<S>>> named_tensors() {
        auto out = named_parameters();
        auto bufs = named_buffers();
        out.insert(out.end(), bufs.begin(), bufs.end());
        return out;
    }
};

template <typename S>
EncoderFeaturesT<S> encode(TapeT<S>& tape, const TensorT<S>& image, ModelWeightsT<S>& w) {
    const ModelConfig& cfg = w.config;
    if (image.rank() != 4 || image.dim(1) != cfg.input_hw || image.dim(2) != cfg.input_hw ||
        image.dim(3) != cfg.input_channels)
        throw ShapeError("encode: expected [Bx" + std::to_string(cfg.input_hw) + "x" +
                         std::to_string(cfg.input_hw) + "x" +
                         std::to_string(cfg.input_channels) + "] input, got " +
                         shape_str(image.shape()));
    EncoderFeaturesT<S> f;
    f.c1 = layers::conv_block(tape, image, w.enc[0]);
    TensorT<S> p1 = layers::maxpool2x2(tape, f.c1);
    f.c2 = layers::conv_block(tape, p1, w.enc[1]);
    TensorT<S> p2 = layers::maxpool2x2(tape, f.c2);
    f.c3 = layers::conv_block(tape, p2, w.enc[2]);
    TensorT<S> p3 = layers::maxpool2x2(tape, f.c3);
    f.c4 = layers::conv_block(tape, p3, w.enc[3]);
    f.p4 = layers::maxpool2x2(tape, f.c4);
    return f;
}

namespace detail {

// upsample -> concat skip -> conv_block for one decoder stage, plus the head.
// Returns the trace entries it fills.
template <typename S>
void decode_into(TapeT<S>& tape, const TensorT<S>& bottleneck, const EncoderFeaturesT<S>& f,
                 ModelWeightsT<S>& w, ForwardTraceT<S>& trace) {
    const std::array<const TensorT<S>*, 4> skips{&f.c4, &f.c3, &f.c2, &f.c1};
    TensorT<S> x = bottleneck;
    for (std::size_t i = 0; i < 4; ++i) {
        TensorT<S> upsampled = w.config.upsample_kind == UpsampleKind::transposed
                                   ? layers::transposed_conv2x2(tape, x, w.up[i])
                                   : layers::nearest_upsample2x(tape, x);
        const TensorT<S>& skip = *skips[i];
        if (upsampled.dim(1) != skip.dim(1) || upsampled.dim(2) != skip.dim(2))
            throw ShapeError("decode stage " + std::to_string(i + 1) +
                             ": upsampled map " + shape_str(upsampled.shape()) +
                             " does not match skip " + shape_str(skip.shape()));
        TensorT<S> cat = layers::concat_channels(tape, upsampled, skip);
        x = layers::conv_block(tape, cat, w.dec[i]);
        trace.dec[i] = x;
    }
    trace.logits = layers::conv2d(tape, x, w.head); // 1x1 head, then sigmoid
    trace.probs = ops::sigmoid(tape, trace.logits);
}

} // namespace detail

// Decoder path alone: 4 x (upsample -> concat skip [c4,c3,c2,c1] -> block),
// then the 1x1 sigmoid head. Output values lie in (0,1).
template <typename S>
TensorT<S> decode(TapeT<S>& tape, const TensorT<S>& bottleneck, const EncoderFeaturesT<S>& feats,
                  ModelWeightsT<S>& w) {
    ForwardTraceT<S> trace;
    detail::decode_into(tape, bottleneck, feats, w, trace);
    return trace.probs;
}

// Full forward pass keeping every intermediate for probes and Grad-CAM.
template <typename S>
ForwardTraceT<S> forward_full(TapeT<S>& tape, const TensorT<S>& image, ModelWeightsT<S>& w,
                              std::size_t* transformer_layer_calls = nullptr) {
    ForwardTraceT<S> trace;
    trace.enc = encode(tape, image, w);
    trace.bottleneck =
        transformer::transformer_bottleneck(tape, trace.enc.p4, w.bottleneck,
                                            transformer_layer_calls);
    detail::decode_into(tape, trace.bottleneck, trace.enc, w, trace);
    return trace;
}

// Probability map [B x H x W x 1] for a batch of [B x H x W x 3] images.
template <typename S>
TensorT<S> forward(TapeT<S>& tape, const TensorT<S>& image, ModelWeightsT<S>& w) {
    return forward_full(tape, image, w).probs;
}

// Exact learnable-scalar count, itemized per parameter tensor; computed from
// the configuration alone.
struct ParamCount {
    std::vector<std::pair<std::string, std::size_t>> items;
    std::size_t total = 0;
};

ParamCount count_params(const ModelConfig& cfg);

// Serialization of a float model to the ".futw" container and back. The
// container carries a meta.config entry describing the architecture, so a
// file can be loaded without knowing the configuration up front.
void save_model(ModelWeightsT<float>& weights, const std::filesystem::path& path);
void load_model(ModelWeightsT<float>& weights, const std::filesystem::path& path);
ModelWeightsT<float> load_model_auto(const std::filesystem::path& path);

} // namespace futu::model
