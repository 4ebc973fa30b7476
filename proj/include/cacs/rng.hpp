#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace cacs {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Deterministic random stream. Wraps std::mt19937_64 (whose output sequence
/// is pinned by the standard) and implements its own distributions, because
/// the std distribution objects are implementation-defined and would break
/// the byte-identical reproducibility contract.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed), seed_(seed) {}

    /// Independent substream keyed by (this stream's seed, tag).
    Rng derive(uint64_t tag) const { return Rng(splitmix64(seed_ ^ splitmix64(tag))); }

    uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        if (lo > hi) throw std::invalid_argument("uniform_int: empty range");
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        const auto v = static_cast<uint64_t>(
            (static_cast<unsigned __int128>(engine_()) * span) >> 64);
        return lo + static_cast<int64_t>(v);
    }

    size_t index(size_t n) {
        return static_cast<size_t>(uniform_int(0, static_cast<int64_t>(n) - 1));
    }

    /// Standard normal via Box-Muller, second value cached.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    uint64_t seed() const { return seed_; }

private:
    std::mt19937_64 engine_;
    uint64_t seed_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace cacs
