#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "futu/gemm.hpp"
#include "futu/ops.hpp"
#include "futu/random.hpp"
#include "futu/tape.hpp"
#include "futu/tensor.hpp"

// Convolutional and normalization building blocks over NHWC tensors.
namespace futu::layers {

enum class Padding { same, valid };
enum class Mode { train, infer };

template <typename S>
struct Conv2DParamsT {
    TensorT<S> weights; // [kh x kw x Cin x Cout]
    TensorT<S> bias;    // [Cout]
    std::size_t stride = 1;
    Padding padding = Padding::same;

    std::size_t kh() const { return weights.dim(0); }
    std::size_t kw() const { return weights.dim(1); }
    std::size_t cin() const { return weights.dim(2); }
    std::size_t cout() const { return weights.dim(3); }

    static Conv2DParamsT he_init(std::size_t kh, std::size_t kw, std::size_t cin,
                                 std::size_t cout, std::mt19937& rng,
                                 std::size_t stride = 1, Padding padding = Padding::same) {
        Conv2DParamsT p;
        p.weights = TensorT<S>(Shape{kh, kw, cin, cout}, true);
        fill_he_uniform(p.weights, kh * kw * cin, rng);
        p.bias = TensorT<S>(Shape{cout}, true);
        p.stride = stride;
        p.padding = padding;
        p.validate();
        return p;
    }

    void validate() const {
        if (weights.rank() != 4)
            throw ConfigError("conv weights must be rank-4 [kh,kw,cin,cout], got " +
                              shape_str(weights.shape()));
        if (kh() < 1 || kh() > 3 || kw() < 1 || kw() > 3)
            throw ConfigError("conv kernel sides must be in {1,2,3}, got " +
                              std::to_string(kh()) + "x" + std::to_string(kw()));
        if (cout() < 1 || bias.rank() != 1 || bias.dim(0) != cout())
            throw ConfigError("conv bias must be [cout]");
        if (stride < 1) throw ConfigError("conv stride must be positive");
    }
};

namespace detail {

struct ConvGeom {
    std::size_t out_h, out_w;
    long long pad_top, pad_left;
};

inline ConvGeom conv_geometry(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                              std::size_t stride, Padding padding) {
    ConvGeom g{};
    if (padding == Padding::same) {
        g.out_h = (h + stride - 1) / stride;
        g.out_w = (w + stride - 1) / stride;
        const long long pad_h =
            std::max<long long>(0, static_cast<long long>((g.out_h - 1) * stride + kh) -
                                       static_cast<long long>(h));
        const long long pad_w =
            std::max<long long>(0, static_cast<long long>((g.out_w - 1) * stride + kw) -
                                       static_cast<long long>(w));
        g.pad_top = pad_h / 2;
        g.pad_left = pad_w / 2;
    } else {
        if (h < kh || w < kw)
            throw ShapeError("conv2d: input " + std::to_string(h) + "x" + std::to_string(w) +
                             " smaller than kernel");
        g.out_h = (h - kh) / stride + 1;
        g.out_w = (w - kw) / stride + 1;
        g.pad_top = 0;
        g.pad_left = 0;
    }
    return g;
}

// Gathers one image's receptive fields into col [out_h*out_w, kh*kw*cin];
// zeros outside the padded border. Layout matches the row-major weight
// flattening (ky, kx, ci) so the convolution is a single GEMM.
template <typename S>
void im2col(const S* in, std::size_t h, std::size_t w, std::size_t cin, std::size_t kh,
            std::size_t kw, std::size_t stride, const ConvGeom& g, S* col) {
    const std::size_t patch = kh * kw * cin;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            S* dst = col + (oy * g.out_w + ox) * patch;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                const long long iy = static_cast<long long>(oy * stride + ky) - g.pad_top;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const long long ix = static_cast<long long>(ox * stride + kx) - g.pad_left;
                    S* cell = dst + (ky * kw + kx) * cin;
                    if (iy < 0 || iy >= static_cast<long long>(h) || ix < 0 ||
                        ix >= static_cast<long long>(w)) {
                        std::fill(cell, cell + cin, S(0));
                    } else {
                        const S* src = in + (static_cast<std::size_t>(iy) * w +
                                             static_cast<std::size_t>(ix)) * cin;
                        std::copy(src, src + cin, cell);
                    }
                }
            }
        }
    }
}

// Scatter-add of col-layout gradients back onto the input image.
template <typename S>
void col2im_add(const S* col, std::size_t h, std::size_t w, std::size_t cin, std::size_t kh,
                std::size_t kw, std::size_t stride, const ConvGeom& g, S* din) {
    const std::size_t patch = kh * kw * cin;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const S* src = col + (oy * g.out_w + ox) * patch;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                const long long iy = static_cast<long long>(oy * stride + ky) - g.pad_top;
                if (iy < 0 || iy >= static_cast<long long>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const long long ix = static_cast<long long>(ox * stride + kx) - g.pad_left;
                    if (ix < 0 || ix >= static_cast<long long>(w)) continue;
                    S* dst = din + (static_cast<std::size_t>(iy) * w +
                                    static_cast<std::size_t>(ix)) * cin;
                    const S* cell = src + (ky * kw + kx) * cin;
                    for (std::size_t c = 0; c < cin; ++c) dst[c] += cell[c];
                }
            }
        }
    }
}

} // namespace detail

// Cross-correlation of a zero-padded NHWC batch with [kh,kw,cin,cout] weights.
template <typename S>
TensorT<S> conv2d(TapeT<S>& tape, const TensorT<S>& input, const Conv2DParamsT<S>& params) {
    params.validate();
    if (input.rank() != 4)
        throw ShapeError("conv2d: expected [B,H,W,C] input, got " + shape_str(input.shape()));
    if (input.dim(3) != params.cin())
        throw ShapeError("conv2d: input channels " + std::to_string(input.dim(3)) +
                         " do not match kernel cin " + std::to_string(params.cin()) +
                         " (input " + shape_str(input.shape()) + ", weights " +
                         shape_str(params.weights.shape()) + ")");
    const std::size_t B = input.dim(0), H = input.dim(1), W = input.dim(2);
    const std::size_t kh = params.kh(), kw = params.kw(), cin = params.cin(), cout = params.cout();
    const auto geom = detail::conv_geometry(H, W, kh, kw, params.stride, params.padding);
    const std::size_t out_hw = geom.out_h * geom.out_w;
    const std::size_t patch = kh * kw * cin;

    const TensorT<S>& wt = params.weights;
    const TensorT<S>& bias = params.bias;
    TensorT<S> out(Shape{B, geom.out_h, geom.out_w, cout},
                   any_requires_grad<S>({&input, &wt, &bias}));

    std::vector<S> col(out_hw * patch);
    for (std::size_t b = 0; b < B; ++b) {
        detail::im2col(input.ptr() + b * H * W * cin, H, W, cin, kh, kw, params.stride, geom,
                       col.data());
        S* ob = out.ptr() + b * out_hw * cout;
        futu::detail::gemm_nn(out_hw, cout, patch, col.data(), wt.ptr(), ob, false);
        for (std::size_t r = 0; r < out_hw; ++r)
            for (std::size_t c = 0; c < cout; ++c) ob[r * cout + c] += bias.ptr()[c];
    }

    if (tape.recording() && out.requires_grad()) {
        const std::size_t stride = params.stride;
        const Padding padding = params.padding;
        tape.record("conv2d", {input, wt, bias}, out,
                    [input, wt, bias, out, B, H, W, cin, cout, kh, kw, stride, padding]() mutable {
            const auto geom = detail::conv_geometry(H, W, kh, kw, stride, padding);
            const std::size_t out_hw = geom.out_h * geom.out_w;
            const std::size_t patch = kh * kw * cin;
            const S* g = out.grad().data();
            std::vector<S> col(out_hw * patch);
            std::vector<S> dcol;
            if (input.requires_grad()) dcol.resize(out_hw * patch);
            for (std::size_t b = 0; b < B; ++b) {
                const S* gb = g + b * out_hw * cout;
                if (wt.requires_grad() || bias.requires_grad()) {
                    if (wt.requires_grad()) {
                        detail::im2col(input.ptr() + b * H * W * cin, H, W, cin, kh, kw, stride,
                                       geom, col.data());
                        futu::detail::gemm_tn(out_hw, cout, patch, col.data(), gb,
                                              wt.grad().data(), true);
                    }
                    if (bias.requires_grad()) {
                        auto& db = bias.grad();
                        for (std::size_t r = 0; r < out_hw; ++r)
                            for (std::size_t c = 0; c < cout; ++c) db[c] += gb[r * cout + c];
                    }
                }
                if (input.requires_grad()) {
                    futu::detail::gemm_nt(out_hw, patch, cout, gb, wt.ptr(), dcol.data(), false);
                    detail::col2im_add(dcol.data(), H, W, cin, kh, kw, stride, geom,
                                       input.grad().data() + b * H * W * cin);
                }
            }
        });
    }
    return out;
}

template <typename S>
struct BatchNormStateT {
    TensorT<S> gamma, beta;               // learnable [C]
    TensorT<S> running_mean, running_var; // inference statistics [C]
    S momentum = S(0.9);
    S eps = S(1e-5);
    Mode mode = Mode::train;

    static BatchNormStateT init(std::size_t channels) {
        BatchNormStateT s;
        s.gamma = TensorT<S>::ones(Shape{channels}, true);
        s.beta = TensorT<S>(Shape{channels}, true);
        s.running_mean = TensorT<S>(Shape{channels});
        s.running_var = TensorT<S>::ones(Shape{channels});
        return s;
    }

    std::size_t channels() const { return gamma.dim(0); }
};

// Per-channel normalization over (B,H,W). Train mode uses current batch
// statistics (biased variance) and folds them into the running averages;
// infer mode is a pure function of the running statistics.
template <typename S>
TensorT<S> batchnorm(TapeT<S>& tape, const TensorT<S>& input, BatchNormStateT<S>& state) {
    if (input.rank() != 4)
        throw ShapeError("batchnorm: expected [B,H,W,C] input, got " + shape_str(input.shape()));
    const std::size_t C = input.dim(3);
    if (C != state.channels())
        throw ShapeError("batchnorm: channels " + std::to_string(C) + " do not match state " +
                         std::to_string(state.channels()));
    const std::size_t m = input.numel() / C; // reduction size B*H*W
    if (m == 0) throw ContractError("batchnorm: zero-size batch");

    std::vector<S> mean(C), invstd(C);
    if (state.mode == Mode::train) {
        std::vector<double> sum(C, 0.0), sq(C, 0.0);
        const S* px = input.ptr();
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < C; ++c) sum[c] += px[r * C + c];
        for (std::size_t c = 0; c < C; ++c) mean[c] = static_cast<S>(sum[c] / m);
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < C; ++c) {
                const double d = px[r * C + c] - mean[c];
                sq[c] += d * d;
            }
        for (std::size_t c = 0; c < C; ++c) {
            const S var = static_cast<S>(sq[c] / m);
            invstd[c] = S(1) / std::sqrt(var + state.eps);
            state.running_mean.data()[c] =
                state.momentum * state.running_mean.data()[c] + (S(1) - state.momentum) * mean[c];
            state.running_var.data()[c] =
                state.momentum * state.running_var.data()[c] + (S(1) - state.momentum) * var;
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = state.running_mean.data()[c];
            invstd[c] = S(1) / std::sqrt(state.running_var.data()[c] + state.eps);
        }
    }

    const TensorT<S>& gamma = state.gamma;
    const TensorT<S>& beta = state.beta;
    TensorT<S> out(input.shape(), any_requires_grad<S>({&input, &gamma, &beta}));
    {
        const S* px = input.ptr();
        S* po = out.ptr();
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < C; ++c)
                po[r * C + c] =
                    gamma.ptr()[c] * (px[r * C + c] - mean[c]) * invstd[c] + beta.ptr()[c];
    }

    if (tape.recording() && out.requires_grad()) {
        const bool train = state.mode == Mode::train;
        tape.record("batchnorm", {input, gamma, beta}, out,
                    [input, gamma, beta, out, mean, invstd, m, C, train]() mutable {
            const auto& g = out.grad();
            const S* px = input.ptr();
            std::vector<double> sum_dy(C, 0.0), sum_dyx(C, 0.0);
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < C; ++c) {
                    const S xh = (px[r * C + c] - mean[c]) * invstd[c];
                    sum_dy[c] += g[r * C + c];
                    sum_dyx[c] += g[r * C + c] * xh;
                }
            if (gamma.requires_grad()) {
                auto& dg = gamma.grad();
                for (std::size_t c = 0; c < C; ++c) dg[c] += static_cast<S>(sum_dyx[c]);
            }
            if (beta.requires_grad()) {
                auto& db = beta.grad();
                for (std::size_t c = 0; c < C; ++c) db[c] += static_cast<S>(sum_dy[c]);
            }
            if (input.requires_grad()) {
                auto& dx = input.grad();
                if (train) {
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < C; ++c) {
                            const S xh = (px[r * C + c] - mean[c]) * invstd[c];
                            dx[r * C + c] += gamma.ptr()[c] * invstd[c] *
                                             (g[r * C + c] - static_cast<S>(sum_dy[c]) / m -
                                              xh * static_cast<S>(sum_dyx[c]) / m);
                        }
                } else {
                    // Running statistics are constants here.
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < C; ++c)
                            dx[r * C + c] += g[r * C + c] * gamma.ptr()[c] * invstd[c];
                }
            }
        });
    }
    return out;
}

// Max over disjoint 2x2 windows; gradient routes to the first occurrence of
// the maximum in row-major window order.
template <typename S>
TensorT<S> maxpool2x2(TapeT<S>& tape, const TensorT<S>& input) {
    if (input.rank() != 4)
        throw ShapeError("maxpool2x2: expected [B,H,W,C] input, got " + shape_str(input.shape()));
    const std::size_t B = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
    if (H % 2 != 0 || W % 2 != 0)
        throw ShapeError("maxpool2x2: spatial dims must be even, got " + shape_str(input.shape()));
    const std::size_t oh = H / 2, ow = W / 2;
    TensorT<S> out(Shape{B, oh, ow, C}, input.requires_grad());
    std::vector<std::uint32_t> argmax(out.numel());
    const S* px = input.ptr();
    S* po = out.ptr();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x)
                for (std::size_t c = 0; c < C; ++c) {
                    std::size_t best = ((b * H + 2 * y) * W + 2 * x) * C + c;
                    S bv = px[best];
                    for (std::size_t dy = 0; dy < 2; ++dy)
                        for (std::size_t dx = 0; dx < 2; ++dx) {
                            const std::size_t idx =
                                ((b * H + 2 * y + dy) * W + 2 * x + dx) * C + c;
                            if (px[idx] > bv) { // strict: ties keep first occurrence
                                bv = px[idx];
                                best = idx;
                            }
                        }
                    const std::size_t oidx = ((b * oh + y) * ow + x) * C + c;
                    po[oidx] = bv;
                    argmax[oidx] = static_cast<std::uint32_t>(best);
                }
    if (tape.recording() && out.requires_grad()) {
        tape.record("maxpool2x2", {input}, out, [input, out, argmax = std::move(argmax)]() mutable {
            const auto& g = out.grad();
            auto& dx = input.grad();
            for (std::size_t i = 0; i < g.size(); ++i) dx[argmax[i]] += g[i];
        });
    }
    return out;
}

// 2x2 stride-2 transposed convolution: exactly doubles spatial dims. With
// stride == kernel the scatter windows are disjoint, so each output pixel
// receives a single term.
template <typename S>
TensorT<S> transposed_conv2x2(TapeT<S>& tape, const TensorT<S>& input,
                              const Conv2DParamsT<S>& params) {
    if (params.kh() != 2 || params.kw() != 2 || params.stride != 2)
        throw ConfigError("transposed_conv2x2 requires a 2x2 kernel with stride 2, got " +
                          std::to_string(params.kh()) + "x" + std::to_string(params.kw()) +
                          " stride " + std::to_string(params.stride));
    if (input.rank() != 4)
        throw ShapeError("transposed_conv2x2: expected [B,H,W,C] input");
    if (input.dim(3) != params.cin())
        throw ShapeError("transposed_conv2x2: input channels " + std::to_string(input.dim(3)) +
                         " do not match kernel cin " + std::to_string(params.cin()));
    const std::size_t B = input.dim(0), H = input.dim(1), W = input.dim(2);
    const std::size_t cin = params.cin(), cout = params.cout();
    const TensorT<S>& wt = params.weights;
    const TensorT<S>& bias = params.bias;
    TensorT<S> out(Shape{B, 2 * H, 2 * W, cout}, any_requires_grad<S>({&input, &wt, &bias}));
    const S* px = input.ptr();
    S* po = out.ptr();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const S* cell = px + ((b * H + y) * W + x) * cin;
                for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        S* dst = po + ((b * 2 * H + 2 * y + dy) * 2 * W + 2 * x + dx) * cout;
                        const S* wrow = wt.ptr() + (dy * 2 + dx) * cin * cout;
                        for (std::size_t co = 0; co < cout; ++co) dst[co] = bias.ptr()[co];
                        for (std::size_t ci = 0; ci < cin; ++ci) {
                            const S v = cell[ci];
                            const S* wcell = wrow + ci * cout;
                            for (std::size_t co = 0; co < cout; ++co) dst[co] += v * wcell[co];
                        }
                    }
            }
    if (tape.recording() && out.requires_grad()) {
        tape.record("transposed_conv2x2", {input, wt, bias}, out,
                    [input, wt, bias, out, B, H, W, cin, cout]() mutable {
            const auto& g = out.grad();
            const S* px = input.ptr();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x) {
                        const std::size_t in_off = ((b * H + y) * W + x) * cin;
                        for (std::size_t dy = 0; dy < 2; ++dy)
                            for (std::size_t dx = 0; dx < 2; ++dx) {
                                const S* grow =
                                    g.data() +
                                    ((b * 2 * H + 2 * y + dy) * 2 * W + 2 * x + dx) * cout;
                                const S* wrow = wt.ptr() + (dy * 2 + dx) * cin * cout;
                                if (input.requires_grad()) {
                                    auto& dx_in = input.grad();
                                    for (std::size_t ci = 0; ci < cin; ++ci) {
                                        S acc = S(0);
                                        const S* wcell = wrow + ci * cout;
                                        for (std::size_t co = 0; co < cout; ++co)
                                            acc += grow[co] * wcell[co];
                                        dx_in[in_off + ci] += acc;
                                    }
                                }
                                if (wt.requires_grad()) {
                                    S* dwrow = wt.grad().data() + (dy * 2 + dx) * cin * cout;
                                    for (std::size_t ci = 0; ci < cin; ++ci) {
                                        const S v = px[in_off + ci];
                                        S* dwcell = dwrow + ci * cout;
                                        for (std::size_t co = 0; co < cout; ++co)
                                            dwcell[co] += v * grow[co];
                                    }
                                }
                                if (bias.requires_grad()) {
                                    auto& db = bias.grad();
                                    for (std::size_t co = 0; co < cout; ++co) db[co] += grow[co];
                                }
                            }
                    }
        });
    }
    return out;
}

// Non-learnable 2x replication upsampling (the alternative decoder path).
template <typename S>
TensorT<S> nearest_upsample2x(TapeT<S>& tape, const TensorT<S>& input) {
    if (input.rank() != 4)
        throw ShapeError("nearest_upsample2x: expected [B,H,W,C] input");
    const std::size_t B = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
    TensorT<S> out(Shape{B, 2 * H, 2 * W, C}, input.requires_grad());
    const S* px = input.ptr();
    S* po = out.ptr();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = 0; y < 2 * H; ++y)
            for (std::size_t x = 0; x < 2 * W; ++x)
                std::copy(px + ((b * H + y / 2) * W + x / 2) * C,
                          px + ((b * H + y / 2) * W + x / 2) * C + C,
                          po + ((b * 2 * H + y) * 2 * W + x) * C);
    if (tape.recording() && out.requires_grad()) {
        tape.record("nearest_upsample2x", {input}, out, [input, out, B, H, W, C]() mutable {
            const auto& g = out.grad();
            auto& dx = input.grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t y = 0; y < 2 * H; ++y)
                    for (std::size_t x = 0; x < 2 * W; ++x) {
                        const S* gp = g.data() + ((b * 2 * H + y) * 2 * W + x) * C;
                        S* dp = dx.data() + ((b * H + y / 2) * W + x / 2) * C;
                        for (std::size_t c = 0; c < C; ++c) dp[c] += gp[c];
                    }
        });
    }
    return out;
}

// Channel concatenation of two NHWC maps with identical B,H,W.
template <typename S>
TensorT<S> concat_channels(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rank() != 4 || b.rank() != 4)
        throw ShapeError("concat_channels: expected [B,H,W,C] inputs, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
    return ops::concat_last_axis(tape, a, b);
}

template <typename S>
struct LayerNormParamsT {
    TensorT<S> gamma, beta; // [D]
    S eps = S(1e-5);

    static LayerNormParamsT init(std::size_t d) {
        LayerNormParamsT p;
        p.gamma = TensorT<S>::ones(Shape{d}, true);
        p.beta = TensorT<S>(Shape{d}, true);
        return p;
    }
};

// Normalizes each trailing-axis slice (token) to zero mean / unit variance,
// then applies the gamma/beta affine.
template <typename S>
TensorT<S> layernorm(TapeT<S>& tape, const TensorT<S>& x, const LayerNormParamsT<S>& params) {
    const TensorT<S>& gamma = params.gamma;
    const TensorT<S>& beta = params.beta;
    if (x.rank() == 0 || gamma.rank() != 1 || x.shape().back() != gamma.dim(0) ||
        beta.shape() != gamma.shape())
        throw ShapeError("layernorm: gamma/beta " + shape_str(gamma.shape()) +
                         " do not match trailing dim of " + shape_str(x.shape()));
    const std::size_t D = gamma.dim(0);
    const std::size_t rows = x.numel() / D;
    const S eps = params.eps;
    TensorT<S> out(x.shape(), any_requires_grad<S>({&x, &gamma, &beta}));
    std::vector<S> mean(rows), invstd(rows);
    const S* px = x.ptr();
    S* po = out.ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (std::size_t j = 0; j < D; ++j) sum += px[r * D + j];
        const S mu = static_cast<S>(sum / D);
        double sq = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            const double d = px[r * D + j] - mu;
            sq += d * d;
        }
        mean[r] = mu;
        invstd[r] = S(1) / std::sqrt(static_cast<S>(sq / D) + eps);
        for (std::size_t j = 0; j < D; ++j)
            po[r * D + j] = gamma.ptr()[j] * (px[r * D + j] - mu) * invstd[r] + beta.ptr()[j];
    }
    if (tape.recording() && out.requires_grad()) {
        tape.record("layernorm", {x, gamma, beta}, out,
                    [x, gamma, beta, out, mean = std::move(mean), invstd = std::move(invstd), rows,
                     D]() mutable {
            const auto& g = out.grad();
            const S* px = x.ptr();
            for (std::size_t r = 0; r < rows; ++r) {
                double sum_dh = 0.0, sum_dhx = 0.0;
                for (std::size_t j = 0; j < D; ++j) {
                    const S xh = (px[r * D + j] - mean[r]) * invstd[r];
                    const S dh = g[r * D + j] * gamma.ptr()[j];
                    sum_dh += dh;
                    sum_dhx += dh * xh;
                }
                if (x.requires_grad()) {
                    auto& dx = x.grad();
                    for (std::size_t j = 0; j < D; ++j) {
                        const S xh = (px[r * D + j] - mean[r]) * invstd[r];
                        const S dh = g[r * D + j] * gamma.ptr()[j];
                        dx[r * D + j] += invstd[r] * (dh - static_cast<S>(sum_dh) / D -
                                                      xh * static_cast<S>(sum_dhx) / D);
                    }
                }
                if (gamma.requires_grad()) {
                    auto& dg = gamma.grad();
                    for (std::size_t j = 0; j < D; ++j)
                        dg[j] += g[r * D + j] * (px[r * D + j] - mean[r]) * invstd[r];
                }
                if (beta.requires_grad()) {
                    auto& db = beta.grad();
                    for (std::size_t j = 0; j < D; ++j) db[j] += g[r * D + j];
                }
            }
        });
    }
    return out;
}

template <typename S>
struct LinearParamsT {
    TensorT<S> weights; // [Din x Dout]
    TensorT<S> bias;    // [Dout]

    static LinearParamsT he_init(std::size_t din, std::size_t dout, std::mt19937& rng) {
        LinearParamsT p;
        p.weights = TensorT<S>(Shape{din, dout}, true);
        fill_he_uniform(p.weights, din, rng);
        p.bias = TensorT<S>(Shape{dout}, true);
        return p;
    }
};

// x[... x Din] * W + b, applied independently per token.
template <typename S>
TensorT<S> linear(TapeT<S>& tape, const TensorT<S>& x, const LinearParamsT<S>& params) {
    if (params.weights.rank() != 2 || x.rank() == 0 ||
        x.shape().back() != params.weights.dim(0))
        throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weights " +
                         shape_str(params.weights.shape()));
    const std::size_t din = params.weights.dim(0), dout = params.weights.dim(1);
    const std::size_t rows = x.numel() / din;
    TensorT<S> flat = ops::reshape(tape, x, Shape{rows, din});
    TensorT<S> y = ops::matmul(tape, flat, params.weights);
    y = ops::add_bias(tape, y, params.bias);
    Shape out_shape = x.shape();
    out_shape.back() = dout;
    return ops::reshape(tape, y, std::move(out_shape));
}

template <typename S>
struct ConvBlockParamsT {
    Conv2DParamsT<S> conv1, conv2;
    BatchNormStateT<S> bn1, bn2;

    static ConvBlockParamsT he_init(std::size_t cin, std::size_t filters, std::mt19937& rng) {
        ConvBlockParamsT p;
        p.conv1 = Conv2DParamsT<S>::he_init(3, 3, cin, filters, rng);
        p.conv2 = Conv2DParamsT<S>::he_init(3, 3, filters, filters, rng);
        p.bn1 = BatchNormStateT<S>::init(filters);
        p.bn2 = BatchNormStateT<S>::init(filters);
        return p;
    }

    void set_mode(Mode mode) {
        bn1.mode = mode;
        bn2.mode = mode;
    }
};

// conv(3x3,same) -> BN -> ReLU -> conv(3x3,same) -> BN -> ReLU.
// Spatial dimensions are preserved.
template <typename S>
TensorT<S> conv_block(TapeT<S>& tape, const TensorT<S>& input, ConvBlockParamsT<S>& params) {
    for (const auto* conv : {&params.conv1, &params.conv2})
        if (conv->kh() != 3 || conv->kw() != 3 || conv->padding != Padding::same ||
            conv->stride != 1)
            throw ConfigError("conv_block requires 3x3 same-padded stride-1 convolutions");
    TensorT<S> h = conv2d(tape, input, params.conv1);
    h = batchnorm(tape, h, params.bn1);
    h = ops::relu(tape, h);
    h = conv2d(tape, h, params.conv2);
    h = batchnorm(tape, h, params.bn2);
    return ops::relu(tape, h);
}

// 1x1 single-channel projection head; per-pixel probability in (0,1).
template <typename S>
TensorT<S> conv1x1_sigmoid(TapeT<S>& tape, const TensorT<S>& input,
                           const Conv2DParamsT<S>& params) {
    if (params.kh() != 1 || params.kw() != 1)
        throw ConfigError("conv1x1_sigmoid requires a 1x1 kernel");
    if (params.cout() != 1)
        throw ConfigError("conv1x1_sigmoid requires cout=1, got " + std::to_string(params.cout()));
    return ops::sigmoid(tape, conv2d(tape, input, params));
}

} // namespace futu::layers
