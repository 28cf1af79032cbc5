#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace clfno {

// Deterministic, platform-independent RNG. All stochastic pieces of the
// toolkit (weight init, data generation, shuffling, reservoir decisions,
// RFF frequencies) draw from seeds derived here, never from std::
// distributions, so trajectories are bit-identical across builds.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        // modulo bias is negligible for n << 2^64 and keeps the stream simple
        return next_u64() % n;
    }

    /// Standard normal via Box-Muller; one value per call, pair cached.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

private:
    uint64_t state_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

/// FNV-1a over a tag string, used to split seed streams by purpose.
inline uint64_t hash_tag(std::string_view tag) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

/// Derive an independent child seed from (seed, tag, index).
inline uint64_t derive_seed(uint64_t seed, std::string_view tag, uint64_t index = 0) {
    Rng mix(seed ^ hash_tag(tag) ^ (0x9e3779b97f4a7c15ull * (index + 1)));
    return mix.next_u64();
}

} // namespace clfno
