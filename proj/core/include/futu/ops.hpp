#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "futu/errors.hpp"
#include "futu/gemm.hpp"
#include "futu/tape.hpp"
#include "futu/tensor.hpp"

// Differentiable primitive operations. Every op computes its forward value
// eagerly and, when the tape is recording and an input carries grad, appends
// a backward rule that accumulates into the input gradient buffers.
namespace futu::ops {

namespace detail {

template <typename S>
inline void require_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

template <typename S>
inline void add_to(std::vector<S>& dst, const std::vector<S>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

} // namespace detail

enum class Act { relu, gelu, sigmoid };

template <typename S>
TensorT<S> add(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_same_shape(a, b, "add");
    TensorT<S> out(a.shape(), any_requires_grad<S>({&a, &b}));
    const S* pa = a.ptr();
    const S* pb = b.ptr();
    S* po = out.ptr();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
    if (tape.recording() && out.requires_grad()) {
        tape.record("add", {a, b}, out, [a, b, out]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) detail::add_to(a.grad(), g);
            if (b.requires_grad()) detail::add_to(b.grad(), g);
        });
    }
    return out;
}

template <typename S>
TensorT<S> mul(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
    detail::require_same_shape(a, b, "mul");
    TensorT<S> out(a.shape(), any_requires_grad<S>({&a, &b}));
    const S* pa = a.ptr();
    const S* pb = b.ptr();
    S* po = out.ptr();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
    if (tape.recording() && out.requires_grad()) {
        tape.record("mul", {a, b}, out, [a, b, out]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& da = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * b.ptr()[i];
            }
            if (b.requires_grad()) {
                auto& db = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * a.ptr()[i];
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> scale(TapeT<S>& tape, const TensorT<S>& x, S c) {
    TensorT<S> out(x.shape(), x.requires_grad());
    const S* px = x.ptr();
    S* po = out.ptr();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = px[i] * c;
    if (tape.recording() && out.requires_grad()) {
        tape.record("scale", {x}, out, [x, out, c]() mutable {
            const auto& g = out.grad();
            auto& dx = x.grad();
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * c;
        });
    }
    return out;
}

// x[... x D] + bias[D], broadcast over all leading axes.
template <typename S>
TensorT<S> add_bias(TapeT<S>& tape, const TensorT<S>& x, const TensorT<S>& bias) {
    if (bias.rank() != 1 || x.rank() == 0 || x.shape().back() != bias.dim(0))
        throw ShapeError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match trailing dim of " + shape_str(x.shape()));
    const std::size_t d = bias.dim(0);
    const std::size_t rows = x.numel() / d;
    TensorT<S> out(x.shape(), any_requires_grad<S>({&x, &bias}));
    const S* px = x.ptr();
    const S* pb = bias.ptr();
    S* po = out.ptr();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) po[r * d + j] = px[r * d + j] + pb[j];
    if (tape.recording() && out.requires_grad()) {
        tape.record("add_bias", {x, bias}, out, [x, bias, out, rows, d]() mutable {
            const auto& g = out.grad();
            if (x.requires_grad()) detail::add_to(x.grad(), g);
            if (bias.requires_grad()) {
                auto& db = bias.grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) db[j] += g[r * d + j];
            }
        });
    }
    return out;
}

// x[B x ...] + t[...], t broadcast over the leading axis.
template <typename S>
TensorT<S> add_broadcast0(TapeT<S>& tape, const TensorT<S>& x, const TensorT<S>& t) {
    if (x.rank() != t.rank() + 1 ||
        !std::equal(t.shape().begin(), t.shape().end(), x.shape().begin() + 1))
        throw ShapeError("add_broadcast0: " + shape_str(t.shape()) +
                         " does not broadcast over " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), n = t.numel();
    TensorT<S> out(x.shape(), any_requires_grad<S>({&x, &t}));
    const S* px = x.ptr();
    const S* pt = t.ptr();
    S* po = out.ptr();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < n; ++i) po[b * n + i] = px[b * n + i] + pt[i];
    if (tape.recording() && out.requires_grad()) {
        tape.record("add_broadcast0", {x, t}, out, [x, t, out, B, n]() mutable {
            const auto& g = out.grad();
            if (x.requires_grad()) detail::add_to(x.grad(), g);
            if (t.requires_grad()) {
                auto& dt = t.grad();
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t i = 0; i < n; ++i) dt[i] += g[b * n + i];
            }
        });
    }
    return out;
}

// a[M x K] * b[K x N] -> [M x N]
template <typename S>
TensorT<S> matmul(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
    TensorT<S> out(Shape{M, N}, any_requires_grad<S>({&a, &b}));
    futu::detail::gemm_nn(M, N, K, a.ptr(), b.ptr(), out.ptr(), false);
    if (tape.recording() && out.requires_grad()) {
        tape.record("matmul", {a, b}, out, [a, b, out, M, K, N]() mutable {
            const S* g = out.grad().data();
            if (a.requires_grad())
                futu::detail::gemm_nt(M, K, N, g, b.ptr(), a.grad().data(), true);
            if (b.requires_grad())
                futu::detail::gemm_tn(M, N, K, a.ptr(), g, b.grad().data(), true);
        });
    }
    return out;
}

// a[G x M x K] * b[G x K x N] -> [G x M x N]; with transpose_b, b is [G x N x K].
template <typename S>
TensorT<S> batched_matmul(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b,
                          bool transpose_b = false) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0))
        throw ShapeError("batched_matmul: incompatible shapes " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    const std::size_t G = a.dim(0), M = a.dim(1), K = a.dim(2);
    const std::size_t N = transpose_b ? b.dim(1) : b.dim(2);
    const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
    if (bk != K)
        throw ShapeError("batched_matmul: inner dims disagree " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    TensorT<S> out(Shape{G, M, N}, any_requires_grad<S>({&a, &b}));
    for (std::size_t g = 0; g < G; ++g) {
        const S* pa = a.ptr() + g * M * K;
        const S* pb = b.ptr() + g * K * N;
        S* po = out.ptr() + g * M * N;
        if (transpose_b)
            futu::detail::gemm_nt(M, N, K, pa, pb, po, false);
        else
            futu::detail::gemm_nn(M, N, K, pa, pb, po, false);
    }
    if (tape.recording() && out.requires_grad()) {
        tape.record("batched_matmul", {a, b}, out,
                    [a, b, out, G, M, K, N, transpose_b]() mutable {
            for (std::size_t g = 0; g < G; ++g) {
                const S* pg = out.grad().data() + g * M * N;
                const S* pa = a.ptr() + g * M * K;
                const S* pb = b.ptr() + g * K * N;
                if (a.requires_grad()) {
                    S* da = a.grad().data() + g * M * K;
                    if (transpose_b)
                        futu::detail::gemm_nn(M, K, N, pg, pb, da, true);
                    else
                        futu::detail::gemm_nt(M, K, N, pg, pb, da, true);
                }
                if (b.requires_grad()) {
                    S* db = b.grad().data() + g * K * N;
                    if (transpose_b)
                        futu::detail::gemm_tn(M, K, N, pg, pa, db, true);
                    else
                        futu::detail::gemm_tn(M, N, K, pa, pg, db, true);
                }
            }
        });
    }
    return out;
}

namespace detail {

template <typename S>
inline S gauss_cdf(S x) {
    return S(0.5) * (S(1) + std::erf(x * S(0.7071067811865475)));
}
template <typename S>
inline S gauss_pdf(S x) {
    return S(0.3989422804014327) * std::exp(S(-0.5) * x * x);
}

} // namespace detail

// Elementwise activation. gelu uses the exact Gaussian-CDF form x * Phi(x).
template <typename S>
TensorT<S> pointwise(TapeT<S>& tape, Act kind, const TensorT<S>& x) {
    if (!x.all_finite()) throw ContractError("pointwise: non-finite input value");
    TensorT<S> out(x.shape(), x.requires_grad());
    const S* px = x.ptr();
    S* po = out.ptr();
    const std::size_t n = out.numel();
    switch (kind) {
        case Act::relu:
            for (std::size_t i = 0; i < n; ++i) po[i] = px[i] > S(0) ? px[i] : S(0);
            break;
        case Act::gelu:
            for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * detail::gauss_cdf(px[i]);
            break;
        case Act::sigmoid:
            for (std::size_t i = 0; i < n; ++i) po[i] = S(1) / (S(1) + std::exp(-px[i]));
            break;
    }
    if (tape.recording() && out.requires_grad()) {
        tape.record("pointwise", {x}, out, [x, out, kind]() mutable {
            const auto& g = out.grad();
            auto& dx = x.grad();
            const S* px = x.ptr();
            const S* py = out.ptr();
            switch (kind) {
                case Act::relu:
                    for (std::size_t i = 0; i < g.size(); ++i)
                        if (px[i] > S(0)) dx[i] += g[i];
                    break;
                case Act::gelu:
                    for (std::size_t i = 0; i < g.size(); ++i)
                        dx[i] += g[i] * (detail::gauss_cdf(px[i]) + px[i] * detail::gauss_pdf(px[i]));
                    break;
                case Act::sigmoid:
                    for (std::size_t i = 0; i < g.size(); ++i)
                        dx[i] += g[i] * py[i] * (S(1) - py[i]);
                    break;
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> relu(TapeT<S>& tape, const TensorT<S>& x) {
    return pointwise(tape, Act::relu, x);
}
template <typename S>
TensorT<S> gelu(TapeT<S>& tape, const TensorT<S>& x) {
    return pointwise(tape, Act::gelu, x);
}
template <typename S>
TensorT<S> sigmoid(TapeT<S>& tape, const TensorT<S>& x) {
    return pointwise(tape, Act::sigmoid, x);
}

// Numerically stable softmax along `axis`: exp(x - max) / sum(exp(x - max)).
template <typename S>
TensorT<S> softmax(TapeT<S>& tape, const TensorT<S>& x, std::size_t axis) {
    if (axis >= x.rank())
        throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(x.shape()));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    const std::size_t n = x.dim(axis);

    TensorT<S> out(x.shape(), x.requires_grad());
    const S* px = x.ptr();
    S* po = out.ptr();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            S mx = px[base];
            for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, px[base + k * inner]);
            S sum = S(0);
            for (std::size_t k = 0; k < n; ++k) {
                const S e = std::exp(px[base + k * inner] - mx);
                po[base + k * inner] = e;
                sum += e;
            }
            const S inv = S(1) / sum;
            for (std::size_t k = 0; k < n; ++k) po[base + k * inner] *= inv;
        }
    }
    if (tape.recording() && out.requires_grad()) {
        tape.record("softmax", {x}, out, [x, out, outer, inner, n]() mutable {
            const auto& g = out.grad();
            auto& dx = x.grad();
            const S* py = out.ptr();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * n * inner + in;
                    S dot = S(0);
                    for (std::size_t k = 0; k < n; ++k)
                        dot += g[base + k * inner] * py[base + k * inner];
                    for (std::size_t k = 0; k < n; ++k) {
                        const std::size_t idx = base + k * inner;
                        dx[idx] += py[idx] * (g[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

template <typename S>
TensorT<S> sum_all(TapeT<S>& tape, const TensorT<S>& x) {
    S acc = S(0);
    const S* px = x.ptr();
    for (std::size_t i = 0; i < x.numel(); ++i) acc += px[i];
    TensorT<S> out = TensorT<S>::scalar(acc, x.requires_grad());
    if (tape.recording() && out.requires_grad()) {
        tape.record("sum_all", {x}, out, [x, out]() mutable {
            const S g = out.grad()[0];
            auto& dx = x.grad();
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g;
        });
    }
    return out;
}

template <typename S>
TensorT<S> mean_all(TapeT<S>& tape, const TensorT<S>& x) {
    return scale(tape, sum_all(tape, x), S(1) / static_cast<S>(x.numel()));
}

// Row-major reinterpretation; shares the value buffer with the input.
template <typename S>
TensorT<S> reshape(TapeT<S>& tape, const TensorT<S>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
    TensorT<S> out(std::move(new_shape), x.data(), x.requires_grad());
    if (tape.recording() && out.requires_grad()) {
        tape.record("reshape", {x}, out, [x, out]() mutable {
            detail::add_to(x.grad(), out.grad());
        });
    }
    return out;
}

// [B x N x D] -> [B x H x N x d] with d = D / H (head split for attention).
template <typename S>
TensorT<S> split_heads(TapeT<S>& tape, const TensorT<S>& x, std::size_t heads) {
    if (x.rank() != 3) throw ShapeError("split_heads: expected rank-3, got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), N = x.dim(1), D = x.dim(2);
    if (D % heads != 0)
        throw ConfigError("split_heads: model dim " + std::to_string(D) +
                          " not divisible by heads " + std::to_string(heads));
    const std::size_t d = D / heads;
    TensorT<S> out(Shape{B, heads, N, d}, x.requires_grad());
    const S* px = x.ptr();
    S* po = out.ptr();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t t = 0; t < N; ++t)
                for (std::size_t j = 0; j < d; ++j)
                    po[((b * heads + h) * N + t) * d + j] = px[(b * N + t) * D + h * d + j];
    if (tape.recording() && out.requires_grad()) {
        tape.record("split_heads", {x}, out, [x, out, B, N, D, heads, d]() mutable {
            const auto& g = out.grad();
            auto& dx = x.grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t t = 0; t < N; ++t)
                        for (std::size_t j = 0; j < d; ++j)
                            dx[(b * N + t) * D + h * d + j] += g[((b * heads + h) * N + t) * d + j];
        });
    }
    return out;
}

// [B x H x N x d] -> [B x N x H*d], inverse of split_heads.
template <typename S>
TensorT<S> merge_heads(TapeT<S>& tape, const TensorT<S>& x) {
    if (x.rank() != 4) throw ShapeError("merge_heads: expected rank-4, got " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), H = x.dim(1), N = x.dim(2), d = x.dim(3);
    const std::size_t D = H * d;
    TensorT<S> out(Shape{B, N, D}, x.requires_grad());
    const S* px = x.ptr();
    S* po = out.ptr();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t t = 0; t < N; ++t)
                for (std::size_t j = 0; j < d; ++j)
                    po[(b * N + t) * D + h * d + j] = px[((b * H + h) * N + t) * d + j];
    if (tape.recording() && out.requires_grad()) {
        tape.record("merge_heads", {x}, out, [x, out, B, H, N, d, D]() mutable {
            const auto& g = out.grad();
            auto& dx = x.grad();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t h = 0; h < H; ++h)
                    for (std::size_t t = 0; t < N; ++t)
                        for (std::size_t j = 0; j < d; ++j)
                            dx[((b * H + h) * N + t) * d + j] += g[(b * N + t) * D + h * d + j];
        });
    }
    return out;
}

// Concatenate along the last axis; all leading axes must agree.
template <typename S>
TensorT<S> concat_last_axis(TapeT<S>& tape, const TensorT<S>& a, const TensorT<S>& b) {
    if (a.rank() != b.rank() || a.rank() == 0)
        throw ShapeError("concat: rank mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    for (std::size_t i = 0; i + 1 < a.rank(); ++i)
        if (a.dim(i) != b.dim(i))
            throw ShapeError("concat: leading dims disagree " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const std::size_t ca = a.shape().back(), cb = b.shape().back();
    Shape out_shape = a.shape();
    out_shape.back() = ca + cb;
    std::size_t rows = 1; // product of leading dims (back() may be zero)
    for (std::size_t i = 0; i + 1 < a.rank(); ++i) rows *= a.dim(i);
    TensorT<S> out(out_shape, any_requires_grad<S>({&a, &b}));
    const S* pa = a.ptr();
    const S* pb = b.ptr();
    S* po = out.ptr();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(pa + r * ca, pa + (r + 1) * ca, po + r * (ca + cb));
        std::copy(pb + r * cb, pb + (r + 1) * cb, po + r * (ca + cb) + ca);
    }
    if (tape.recording() && out.requires_grad()) {
        tape.record("concat", {a, b}, out, [a, b, out, rows, ca, cb]() mutable {
            const auto& g = out.grad();
            if (a.requires_grad()) {
                auto& da = a.grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < ca; ++j) da[r * ca + j] += g[r * (ca + cb) + j];
            }
            if (b.requires_grad()) {
                auto& db = b.grad();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < cb; ++j) db[r * cb + j] += g[r * (ca + cb) + ca + j];
            }
        });
    }
    return out;
}

} // namespace futu::ops
