#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedafa {

/// splitmix64 step; used to derive independent seed streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Deterministic sub-seed for a labelled stream, e.g.
/// derive_seed(seed, {kClientStream, round, client_id}). Every consumer of
/// randomness gets its own stream so that execution order (including
/// parallel scheduling) cannot change results.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = splitmix64(base);
    for (std::uint64_t p : path) {
        s = splitmix64(s ^ p);
    }
    return s;
}

// Stream labels. Arbitrary distinct constants.
inline constexpr std::uint64_t kDataStream = 0x64617461;
inline constexpr std::uint64_t kSplitStream = 0x73706c69;
inline constexpr std::uint64_t kLongtailStream = 0x6c6f6e67;
inline constexpr std::uint64_t kPartitionStream = 0x70617274;
inline constexpr std::uint64_t kClientSplitStream = 0x63737074;
inline constexpr std::uint64_t kInitStream = 0x696e6974;
inline constexpr std::uint64_t kSampleStream = 0x73616d70;
inline constexpr std::uint64_t kClientStream = 0x636c6e74;
inline constexpr std::uint64_t kPersonalizeStream = 0x70657273;
inline constexpr std::uint64_t kAugmentStream = 0x61756700;
inline constexpr std::uint64_t kOriBatchStream = 0x6f726900;
inline constexpr std::uint64_t kGenBatchStream = 0x67656e00;

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) {
    return Rng(seed);
}

/// Uniform pick in [0, n). n must be positive.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

} // namespace fedafa
