#pragma once

#include <cmath>
#include <cstdint>

namespace nmaipw {

// Counter-based substream RNG. Every stream is keyed by (seed, id...) through
// a splitmix64 avalanche, so replicate b of a parallel loop draws the same
// numbers no matter which thread runs it or in which order.

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

inline std::uint64_t mix64(std::uint64_t x) {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a,
                                std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t k = mix64(seed ^ 0x5bf03635u);
    k = mix64(k ^ mix64(a));
    k = mix64(k ^ mix64(b));
    k = mix64(k ^ mix64(c));
    return k;
}

class RngStream {
public:
    explicit RngStream(std::uint64_t key) : state_(key) {}
    RngStream(std::uint64_t seed, std::uint64_t id) : state_(stream_key(seed, id)) {}

    std::uint64_t next_u64() {
        state_ += kGolden;
        return mix64(state_ - kGolden);
    }

    /// Uniform on (0,1); 53-bit resolution, never exactly 0 or 1.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; pairs are cached.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Binomial by direct Bernoulli counting; n is small in this artifact.
    long binomial(long n, double p) {
        long count = 0;
        for (long i = 0; i < n; ++i) {
            if (uniform() < p) ++count;
        }
        return count;
    }

private:
    std::uint64_t state_;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace nmaipw
