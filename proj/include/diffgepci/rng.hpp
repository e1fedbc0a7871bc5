#pragma once

#include <cstdint>
#include <random>

#include "image.hpp"

namespace diffgepci {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent generator for the stream identified by (seed, a, b).
///
/// Slice-level work derives its stream from (seed, phase, index) so the
/// result does not depend on which worker runs it or in what order.
inline Rng make_stream(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ mix64(a + 0x632be59bd9b4e019ULL));
    h = mix64(h ^ mix64(b + 0x8cb92ba72f3d8dd7ULL));
    std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    return Rng(seq);
}

inline Image standard_normal(std::size_t rows, std::size_t cols, std::size_t channels, Rng& rng) {
    Image out(rows, cols, channels);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (float& v : out.values()) v = normal(rng);
    return out;
}

inline Image standard_normal_like(const Image& like, Rng& rng) {
    return standard_normal(like.rows(), like.cols(), like.channels(), rng);
}

} // namespace diffgepci
