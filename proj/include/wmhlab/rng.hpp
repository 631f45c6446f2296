#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace wmhlab {

// Deterministic PRNG with fully specified sampling routines so that generated
// datasets are byte-identical across platforms and thread counts (std::
// distributions are implementation-defined). xoshiro256** seeded via splitmix64.
namespace rngdetail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

} // namespace rngdetail

// Mixes a seed with stream identifiers; used to derive independent substreams
// (per-scan, per-epoch, per-purpose) from one master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL + stream * 0xd1342543de82ef95ULL);
    rngdetail::splitmix64(s);
    return rngdetail::splitmix64(s);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) {
        std::uint64_t s = seed;
        for (auto& word : state_) word = rngdetail::splitmix64(s);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rngdetail::rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rngdetail::rotl(state_[3], 45);
        return result;
    }

    // uniform in [0,1) with 53 significant bits
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    // integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // rejection-free modulo would bias; n here is small, use rejection
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    bool bernoulli(double p) {
        return uniform01() < p;
    }

    // Box-Muller; second deviate cached.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double std) {
        return mean + std * normal();
    }

    double lognormal(double log_mean, double log_std) {
        return std::exp(normal(log_mean, log_std));
    }

    // Knuth multiplication method; fine for the small means used here.
    int poisson(double mean) {
        if (mean <= 0.0) return 0;
        const double limit = std::exp(-mean);
        int k = 0;
        double prod = uniform01();
        while (prod > limit) {
            ++k;
            prod *= uniform01();
        }
        return k;
    }

private:
    std::array<std::uint64_t, 4> state_{};
    double cached_ = 0.0;
    bool have_cached_ = false;
};

// Stateless per-counter normal deviate. Lets voxel-parallel loops draw i.i.d.
// noise deterministically regardless of thread schedule.
inline double counter_normal(std::uint64_t seed, std::uint64_t counter) {
    std::uint64_t s = seed ^ (counter * 0x9e3779b97f4a7c15ULL + 0x7f4a7c15ULL);
    const std::uint64_t a = rngdetail::splitmix64(s);
    const std::uint64_t b = rngdetail::splitmix64(s);
    double u1 = static_cast<double>(a >> 11) * 0x1.0p-53;
    const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

} // namespace wmhlab
