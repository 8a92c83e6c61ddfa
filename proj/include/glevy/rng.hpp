#pragma once

#include <cmath>
#include <cstdint>

namespace glevy {

// Deterministic counter-style RNG (splitmix64 sequence). The generator and
// every distribution below are spelled out here so that streams are stable
// across platforms and library versions; nothing is delegated to <random>.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform on (0, 1]: ((x >> 11) + 1) * 2^-53. Never returns 0, so logs
    // below are always finite.
    double uniform01() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // Exponential with unit rate.
    double exponential() { return -std::log(uniform01()); }

    // Standard normal via Box-Muller (no caching; consumption order is two
    // uniforms per call, which keeps the stream layout easy to reason about).
    double normal() {
        const double u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    std::uint64_t state_;
};

inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Splitting rule for replicate streams, stable across versions:
//   stream(master, k) seeds a fresh Rng with mix64(master ^ mix64(k + 1)).
// Replicate k of an experiment always sees the same randomness no matter how
// replicates are batched across workers.
inline Rng replicate_stream(std::uint64_t master_seed, std::uint64_t replicate) {
    return Rng(mix64(master_seed ^ mix64(replicate + 1)));
}

}  // namespace glevy
