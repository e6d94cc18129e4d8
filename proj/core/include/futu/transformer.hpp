#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "futu/layers.hpp"
#include "futu/ops.hpp"
#include "futu/tape.hpp"
#include "futu/tensor.hpp"

// Vision-transformer bottleneck: tokenization of the pooled feature map,
// learnable positional embeddings, a stack of post-norm encoder layers with
// multi-head self-attention and GELU MLPs, and the back-projection to a
// spatial map.
namespace futu::transformer {

struct TransformerConfig {
    std::size_t depth = 6;
    std::size_t heads = 8;
    std::size_t model_dim = 256;      // embedding width D
    std::size_t mlp_hidden = 1024;    // MLP inner width (4*D)
    std::size_t patch_size = 16;      // P, in network-input pixels
    std::size_t input_hw = 256;       // H = W of the network input
    std::size_t token_channels = 256; // channels of the pooled map entering tokenize

    // N = (H/P) * (W/P). Each token is one spatial position of the pooled
    // bottleneck map and covers one P x P region of the input.
    std::size_t num_tokens() const;

    void validate() const {
        if (model_dim == 0 || heads == 0 || model_dim % heads != 0)
            throw ConfigError("model_dim " + std::to_string(model_dim) +
                              " must be divisible by heads " + std::to_string(heads));
        if (mlp_hidden == 0) throw ConfigError("mlp_hidden must be positive");
        num_tokens(); // divisibility check
    }
};

inline std::size_t patch_count(std::size_t h, std::size_t w, std::size_t p) {
    if (p == 0 || h % p != 0 || w % p != 0)
        throw ConfigError("patch size " + std::to_string(p) + " must divide " +
                          std::to_string(h) + "x" + std::to_string(w));
    return (h / p) * (w / p);
}

inline std::size_t TransformerConfig::num_tokens() const {
    return patch_count(input_hw, input_hw, patch_size);
}

template <typename S>
struct PositionalEmbeddingT {
    TensorT<S> table; // [N x D], learnable

    static PositionalEmbeddingT init(std::size_t num_tokens, std::size_t model_dim,
                                     std::mt19937& rng) {
        PositionalEmbeddingT p;
        p.table = TensorT<S>(Shape{num_tokens, model_dim}, true);
        fill_gaussian(p.table, S(0), S(0.02), rng);
        return p;
    }
};

template <typename S>
struct MhsaParamsT {
    layers::LinearParamsT<S> wq, wk, wv, wo; // each D -> D

    static MhsaParamsT he_init(std::size_t d, std::mt19937& rng) {
        MhsaParamsT p;
        p.wq = layers::LinearParamsT<S>::he_init(d, d, rng);
        p.wk = layers::LinearParamsT<S>::he_init(d, d, rng);
        p.wv = layers::LinearParamsT<S>::he_init(d, d, rng);
        p.wo = layers::LinearParamsT<S>::he_init(d, d, rng);
        return p;
    }
};

template <typename S>
struct EncoderLayerParamsT {
    MhsaParamsT<S> attn;
    layers::LayerNormParamsT<S> ln1, ln2;
    layers::LinearParamsT<S> mlp1, mlp2;

    static EncoderLayerParamsT he_init(std::size_t d, std::size_t mlp_hidden,
                                       std::mt19937& rng) {
        EncoderLayerParamsT p;
        p.attn = MhsaParamsT<S>::he_init(d, rng);
        p.ln1 = layers::LayerNormParamsT<S>::init(d);
        p.ln2 = layers::LayerNormParamsT<S>::init(d);
        p.mlp1 = layers::LinearParamsT<S>::he_init(d, mlp_hidden, rng);
        p.mlp2 = layers::LinearParamsT<S>::he_init(mlp_hidden, d, rng);
        return p;
    }
};

template <typename S>
struct TransformerParamsT {
    TransformerConfig config;
    layers::LinearParamsT<S> proj; // token_channels -> D
    PositionalEmbeddingT<S> pos;
    std::vector<EncoderLayerParamsT<S>> layer;
    layers::LinearParamsT<S> back_proj; // D -> token_channels

    static TransformerParamsT he_init(const TransformerConfig& cfg, std::mt19937& rng) {
        cfg.validate();
        TransformerParamsT p;
        p.config = cfg;
        p.proj = layers::LinearParamsT<S>::he_init(cfg.token_channels, cfg.model_dim, rng);
        p.pos = PositionalEmbeddingT<S>::init(cfg.num_tokens(), cfg.model_dim, rng);
        p.layer.reserve(cfg.depth);
        for (std::size_t i = 0; i < cfg.depth; ++i)
            p.layer.push_back(EncoderLayerParamsT<S>::he_init(cfg.model_dim, cfg.mlp_hidden, rng));
        p.back_proj = layers::LinearParamsT<S>::he_init(cfg.model_dim, cfg.token_channels, rng);
        return p;
    }
};

// Turns each spatial position of the pooled map into one token: flatten to a
// [B x N x C] sequence, project linearly to D, add positional embeddings.
// Token k corresponds to spatial position (k / w, k % w) of the pooled map.
template <typename S>
TensorT<S> tokenize(TapeT<S>& tape, const TensorT<S>& p4,
                    const layers::LinearParamsT<S>& proj, const PositionalEmbeddingT<S>& pos) {
    if (p4.rank() != 4)
        throw ShapeError("tokenize: expected [B,h,w,C] input, got " + shape_str(p4.shape()));
    const std::size_t B = p4.dim(0), h = p4.dim(1), w = p4.dim(2), c = p4.dim(3);
    const std::size_t n = pos.table.dim(0);
    if (h * w != n)
        throw ConfigError("tokenize: " + std::to_string(h * w) +
                          " spatial positions do not match " + std::to_string(n) + " tokens");
    TensorT<S> seq = ops::reshape(tape, p4, Shape{B, h * w, c});
    TensorT<S> tokens = layers::linear(tape, seq, proj);
    return ops::add_broadcast0(tape, tokens, pos.table);
}

// Scaled dot-product attention with `heads` parallel heads of width D/heads;
// head outputs are concatenated and passed through the output projection.
// When attn_out is given it receives the [B*heads x N x N] weight rows.
template <typename S>
TensorT<S> mhsa(TapeT<S>& tape, const TensorT<S>& tokens, std::size_t heads,
                const MhsaParamsT<S>& params, TensorT<S>* attn_out = nullptr) {
    if (tokens.rank() != 3)
        throw ShapeError("mhsa: expected [B,N,D] tokens, got " + shape_str(tokens.shape()));
    const std::size_t B = tokens.dim(0), N = tokens.dim(1), D = tokens.dim(2);
    if (heads == 0 || D % heads != 0)
        throw ConfigError("mhsa: model dim " + std::to_string(D) + " not divisible by heads " +
                          std::to_string(heads));
    const std::size_t hd = D / heads;

    TensorT<S> q = layers::linear(tape, tokens, params.wq);
    TensorT<S> k = layers::linear(tape, tokens, params.wk);
    TensorT<S> v = layers::linear(tape, tokens, params.wv);
    q = ops::reshape(tape, ops::split_heads(tape, q, heads), Shape{B * heads, N, hd});
    k = ops::reshape(tape, ops::split_heads(tape, k, heads), Shape{B * heads, N, hd});
    v = ops::reshape(tape, ops::split_heads(tape, v, heads), Shape{B * heads, N, hd});

    TensorT<S> scores = ops::batched_matmul(tape, q, k, /*transpose_b=*/true);
    scores = ops::scale(tape, scores, static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd))));
    TensorT<S> weights = ops::softmax(tape, scores, 2);
    if (attn_out) *attn_out = weights;
    TensorT<S> ctx = ops::batched_matmul(tape, weights, v);
    ctx = ops::merge_heads(tape, ops::reshape(tape, ctx, Shape{B, heads, N, hd}));
    return layers::linear(tape, ctx, params.wo);
}

// Post-norm residual layer: x1 = LN(x + MHSA(x)); out = LN(x1 + MLP(x1)).
template <typename S>
TensorT<S> encoder_layer(TapeT<S>& tape, const TensorT<S>& tokens, std::size_t heads,
                         const EncoderLayerParamsT<S>& params) {
    TensorT<S> attended = mhsa(tape, tokens, heads, params.attn);
    TensorT<S> x1 = layers::layernorm(tape, ops::add(tape, tokens, attended), params.ln1);
    TensorT<S> hidden = ops::gelu(tape, layers::linear(tape, x1, params.mlp1));
    TensorT<S> mlp_out = layers::linear(tape, hidden, params.mlp2);
    return layers::layernorm(tape, ops::add(tape, x1, mlp_out), params.ln2);
}

// tokenize -> depth x encoder_layer -> back-projection -> spatial reshape.
// Output shape equals the input shape. layer_calls, when given, counts the
// encoder-layer applications of this invocation.
template <typename S>
TensorT<S> transformer_bottleneck(TapeT<S>& tape, const TensorT<S>& p4,
                                  const TransformerParamsT<S>& params,
                                  std::size_t* layer_calls = nullptr) {
    const TransformerConfig& cfg = params.config;
    if (p4.rank() != 4 || p4.dim(3) != cfg.token_channels ||
        p4.dim(1) * p4.dim(2) != cfg.num_tokens())
        throw ConfigError("transformer_bottleneck: input " + shape_str(p4.shape()) +
                          " does not match config (" + std::to_string(cfg.num_tokens()) +
                          " tokens of " + std::to_string(cfg.token_channels) + " channels)");
    if (layer_calls) *layer_calls = 0;
    TensorT<S> tokens = tokenize(tape, p4, params.proj, params.pos);
    for (const auto& lp : params.layer) {
        tokens = encoder_layer(tape, tokens, cfg.heads, lp);
        if (layer_calls) ++*layer_calls;
    }
    TensorT<S> back = layers::linear(tape, tokens, params.back_proj);
    return ops::reshape(tape, back, p4.shape());
}

} // namespace futu::transformer
