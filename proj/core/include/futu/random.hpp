#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "futu/tensor.hpp"

namespace futu {

// Derives an independent stream seed from (seed, stream); splitmix64 finalizer.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

template <typename S>
void fill_uniform(TensorT<S>& t, S lo, S hi, std::mt19937& rng) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (S& v : t.data()) v = static_cast<S>(dist(rng));
}

template <typename S>
void fill_gaussian(TensorT<S>& t, S mean, S sigma, std::mt19937& rng) {
    std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(sigma));
    for (S& v : t.data()) v = static_cast<S>(dist(rng));
}

// He-uniform: U(-limit, limit) with limit = sqrt(6 / fan_in).
template <typename S>
void fill_he_uniform(TensorT<S>& t, std::size_t fan_in, std::mt19937& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    fill_uniform(t, static_cast<S>(-limit), static_cast<S>(limit), rng);
}

} // namespace futu
