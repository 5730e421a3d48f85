#pragma once

// Deterministic random streams. Every consumer derives its own stream from
// (seed, stream id) so results do not depend on thread scheduling, and all
// transformations from raw 64-bit draws are spelled out here rather than
// delegated to std distributions, whose sequences vary across standard
// library implementations.

#include <cmath>
#include <cstdint>
#include <random>

namespace glvm {

/// SplitMix64 step, used to hash seeds and stream ids together.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(splitmix64(seed)) {}

    /// Independent stream for a sub-task (replication, fold, ...).
    static Rng stream(std::uint64_t seed, std::uint64_t id) {
        return Rng(splitmix64(seed) ^ splitmix64(0x5851F42D4C957F2DULL + id));
    }

    std::uint64_t bits() { return gen_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1), safe as a log/denominator argument.
    double uniform_pos() {
        double u;
        do { u = uniform(); } while (u <= 0.0);
        return u;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; the spare value is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform_pos();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Poisson count by uniform products, splitting large means so the
    /// product never underflows.
    long poisson(double mean) {
        if (mean <= 0.0) return 0;
        if (mean > 30.0) {
            long half = poisson(mean / 2.0);
            return half + poisson(mean - mean / 2.0);
        }
        double limit = std::exp(-mean);
        long k = 0;
        double prod = uniform();
        while (prod > limit) {
            ++k;
            prod *= uniform();
        }
        return k;
    }

  private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace glvm
