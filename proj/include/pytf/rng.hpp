#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace pytf {

// splitmix64 finalizer; used for seed derivation and stream splitting.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

// Deterministic RNG: mt19937_64 (bit-stable per the standard) with hand-rolled
// distributions so results do not depend on the standard library's
// implementation-defined distribution algorithms.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range, modulo-rejection so the stream stays unbiased.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<int64_t>(gen_());  // full 64-bit range
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t v;
        do {
            v = gen_();
        } while (v >= limit);
        return lo + static_cast<int64_t>(v % span);
    }

    // Box-Muller; draws two uniforms per pair, caches the spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Resampled truncation at +-2 standard deviations.
    double trunc_normal(double mean, double stddev) {
        double v;
        do {
            v = normal();
        } while (std::abs(v) > 2.0);
        return mean + stddev * v;
    }

    // Derive an independent child stream from a base seed.
    static Rng from(uint64_t seed, uint64_t stream) { return Rng(mix64(seed, stream)); }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace pytf
