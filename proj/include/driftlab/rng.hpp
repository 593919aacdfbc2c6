#pragma once

#include <cstdint>
#include <random>

namespace driftlab {

using Rng = std::mt19937_64;

/// Independent noise sources of one simulated path.
enum class StreamTag : std::uint64_t {
    drift = 1,
    returns = 2,
    arrivals = 3,
    expert = 4,
    jexpert = 5,
    thinning = 6,
    sampling = 7,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Engine for (seed, path, tag). Depends only on the triple, so results do
/// not change with the order in which workers pick up paths.
inline Rng make_stream(std::uint64_t seed, std::uint64_t path_index, StreamTag tag) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ path_index);
    h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
    std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                      static_cast<std::uint32_t>(path_index),
                      static_cast<std::uint32_t>(tag)};
    return Rng(seq);
}

}  // namespace driftlab
