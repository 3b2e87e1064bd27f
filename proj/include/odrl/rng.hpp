#pragma once

#include <cstdint>
#include <random>

namespace odrl {

// Deterministic random source. std::mt19937_64 is fully specified by the
// standard, so identical seeds give identical streams on every platform.
//
// Draw protocol (relied on by reproducibility tests that re-simulate
// consumers step by step):
//   - uniform01 and next_u64 consume exactly one engine output.
//   - uniform_int consumes exactly one engine output (Lemire multiply-shift,
//     no rejection loop).
//   - uniform(lo, hi) consumes exactly one engine output.
// Consumers document their own draw order on top of this.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform in {0, ..., n-1}. n must be >= 1. Multiply-shift keeps the
    // draw count fixed at one; the bias for n << 2^64 is negligible.
    std::uint32_t uniform_int(std::uint32_t n) {
        const unsigned __int128 m =
            static_cast<unsigned __int128>(engine_()) * n;
        return static_cast<std::uint32_t>(m >> 64);
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    bool operator==(const Rng& other) const { return engine_ == other.engine_; }

private:
    std::mt19937_64 engine_;
};

// Cheap seed derivation for independent sub-streams (per-episode
// environments, eval rollouts). splitmix64 finalizer over the xor of the
// inputs; collisions across the handful of tags used here are not a concern.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

}  // namespace odrl
