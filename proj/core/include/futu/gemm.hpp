#pragma once

#include <cstddef>

namespace futu::detail {

// Row-major GEMM kernels shared by matmul and the im2col convolution path.
// Parallelism is over output rows only: each output element is reduced in a
// fixed sequential k-order, so results are bit-identical to the serial loop
// for any thread count.

// C[M x N] (+)= A[M x K] * B[K x N]
template <typename S>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const S* A, const S* B, S* C,
             bool accumulate) {
#pragma omp parallel for schedule(static)
    for (long long im = 0; im < static_cast<long long>(M); ++im) {
        const std::size_t m = static_cast<std::size_t>(im);
        S* crow = C + m * N;
        if (!accumulate)
            for (std::size_t n = 0; n < N; ++n) crow[n] = S(0);
        const S* arow = A + m * K;
        for (std::size_t k = 0; k < K; ++k) {
            const S a = arow[k];
            if (a == S(0)) continue;
            const S* brow = B + k * N;
            for (std::size_t n = 0; n < N; ++n) crow[n] += a * brow[n];
        }
    }
}

// C[M x N] (+)= A[M x K] * B[N x K]^T
template <typename S>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const S* A, const S* B, S* C,
             bool accumulate) {
#pragma omp parallel for schedule(static)
    for (long long im = 0; im < static_cast<long long>(M); ++im) {
        const std::size_t m = static_cast<std::size_t>(im);
        const S* arow = A + m * K;
        S* crow = C + m * N;
        for (std::size_t n = 0; n < N; ++n) {
            const S* brow = B + n * K;
            S acc = S(0);
            for (std::size_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
            crow[n] = accumulate ? crow[n] + acc : acc;
        }
    }
}

// C[K x N] (+)= A[M x K]^T * B[M x N]
template <typename S>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const S* A, const S* B, S* C,
             bool accumulate) {
#pragma omp parallel for schedule(static)
    for (long long ik = 0; ik < static_cast<long long>(K); ++ik) {
        const std::size_t k = static_cast<std::size_t>(ik);
        S* crow = C + k * N;
        if (!accumulate)
            for (std::size_t n = 0; n < N; ++n) crow[n] = S(0);
        for (std::size_t m = 0; m < M; ++m) {
            const S a = A[m * K + k];
            if (a == S(0)) continue;
            const S* brow = B + m * N;
            for (std::size_t n = 0; n < N; ++n) crow[n] += a * brow[n];
        }
    }
}

} // namespace futu::detail
