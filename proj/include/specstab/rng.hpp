#pragma once

// Self-contained counter-based RNG so that simulation output is bit-identical
// across platforms and across serial/parallel execution.  Stream derivation
// rule (documented, relied on by the reproducibility tests):
//
//   stream(master, index):
//     sm = SplitMix64 state = master XOR (0x9E3779B97F4A7C15 * (index + 1))
//     xoshiro256** state = next four SplitMix64 outputs
//
// Uniform doubles use the top 53 bits, offset to the open interval (0,1).
// Gaussians use Box-Muller on two uniforms (one cached value per pair).

#include <cmath>
#include <cstdint>

namespace specstab {

struct SplitMix64 {
    std::uint64_t state;

    explicit SplitMix64(std::uint64_t seed) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }
};

class Rng {
public:
    Rng(std::uint64_t master_seed, std::uint64_t stream_index) {
        SplitMix64 sm(master_seed ^ (0x9E3779B97F4A7C15ull * (stream_index + 1)));
        for (auto& s : s_) s = sm.next();
        have_cached_gauss_ = false;
        cached_gauss_ = 0.0;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform double strictly inside (0,1).
    double uniform01() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller.
    double gaussian() {
        if (have_cached_gauss_) {
            have_cached_gauss_ = false;
            return cached_gauss_;
        }
        const double u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_gauss_ = r * std::sin(a);
        have_cached_gauss_ = true;
        return r * std::cos(a);
    }

    /// Index sampled from a cumulative row (last entry treated as 1).
    template <class Cum>
    int sample_cumulative(const Cum& cum, int n) {
        const double u = uniform01();
        for (int j = 0; j < n - 1; ++j) {
            if (u < cum[j]) return j;
        }
        return n - 1;
    }

    static constexpr const char* kAlgorithmId =
        "xoshiro256** / splitmix64 per-stream seeding / box-muller";

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t s_[4];
    bool have_cached_gauss_;
    double cached_gauss_;
};

} // namespace specstab
