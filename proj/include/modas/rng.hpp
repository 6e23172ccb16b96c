#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace modas {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives a sub-seed from a base seed and a path of tags. Used so that every
/// random decision in a run (batch shuffles, attack starts, initializations)
/// has its own independent, reproducible stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = splitmix64(seed ^ 0x5851f42d4c957f2dULL);
    for (std::uint64_t v : path) {
        s = splitmix64(s ^ splitmix64(v));
    }
    return s;
}

/// Deterministic random stream. All distributions are implemented by hand on
/// top of the raw mt19937_64 output so that sequences do not depend on the
/// standard library's (implementation-defined) distribution algorithms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform on [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (two draws per sample, no caching).
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    /// Uniform integer in [0, n), rejection-sampled so it is exactly uniform.
    int uniform_int(int n) {
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t bound = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t x;
        do {
            x = eng_();
        } while (x >= bound);
        return static_cast<int>(x % un);
    }

private:
    std::mt19937_64 eng_;
};

/// Fisher-Yates shuffle with a fixed visitation order.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
        const int j = rng.uniform_int(i + 1);
        std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
}

}  // namespace modas
