#pragma once

#include <cstdint>
#include <random>

namespace metasysid {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30U)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27U)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31U);
}

constexpr std::uint64_t combine_seed(std::uint64_t acc, std::uint64_t value) noexcept {
    return mix64(acc ^ mix64(value + 0x632be59bd9b4e019ULL));
}

/// Seed spaces keep training and evaluation datasets disjoint.
enum class SeedSpace : std::uint64_t {
    Train = 0x7472616eULL,
    Eval = 0x6576616cULL,
    Init = 0x696e6974ULL,
    Noise = 0x6e6f6973ULL,
};

/// Counter-based per-dataset seed, a pure function of its arguments.
constexpr std::uint64_t dataset_seed(std::uint64_t global_seed, SeedSpace space, std::uint64_t iteration,
                                     std::uint64_t slot) noexcept {
    std::uint64_t s = mix64(global_seed);
    s = combine_seed(s, static_cast<std::uint64_t>(space));
    s = combine_seed(s, iteration);
    s = combine_seed(s, slot);
    return s;
}

}  // namespace metasysid
