#pragma once

#include <cstdint>
#include <random>

namespace snmm {

// SplitMix64 finalizer. Used to derive independent-looking streams from a
// master seed plus one or two stream indices, so parallel and serial runs of
// the same configuration draw identical numbers.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stream derivation: derive(seed, r) seeds the RNG of replicate r;
// derive(seed, r, attempt) is used when a replicate has to be redrawn.
inline std::uint64_t derive_stream(std::uint64_t seed, std::uint64_t index,
                                   std::uint64_t sub_index = 0) {
    return mix64(mix64(seed ^ mix64(index + 1)) ^ mix64(sub_index));
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t index,
                                std::uint64_t sub_index = 0) {
    return std::mt19937_64(derive_stream(seed, index, sub_index));
}

}  // namespace snmm
