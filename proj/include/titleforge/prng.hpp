#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace titleforge {

/// Pinned 64-bit multiplicative generator (splitmix64). Every piece of
/// randomness in the pipeline flows through this so that runs are
/// reproducible across platforms; std:: distributions are deliberately
/// avoided because their output is implementation-defined.
class Prng {
public:
    explicit Prng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t next_below(std::uint64_t n) {
        // Multiply-shift bound; bias is < 2^-64 per draw, and more importantly
        // the result is identical on every platform.
        unsigned __int128 wide = static_cast<unsigned __int128>(next()) * n;
        return static_cast<std::uint64_t>(wide >> 64);
    }

    /// Uniform double in [0, 1).
    double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller (one value per call).
    double next_normal() {
        double u1 = next_unit();
        double u2 = next_unit();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::uint64_t state_;
};

/// Fisher-Yates shuffle driven by the pinned generator.
template <typename T>
void shuffle(std::vector<T>& items, Prng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(items[i - 1], items[j]);
    }
}

/// Identity permutation of size n shuffled in place.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, Prng& rng) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    shuffle(idx, rng);
    return idx;
}

}  // namespace titleforge
