#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mergelock/errors.hpp"
#include "mergelock/matrix.hpp"
#include "mergelock/permutation.hpp"

namespace mergelock {

// xorshift64* generator (Vigna 2016). The algorithm is part of the file
// format contract: keys and synthetic models are reproducible from a seed
// across implementations, so the update rule below must not change.
//
//   x ^= x >> 12; x ^= x << 25; x ^= x >> 27; return x * 0x2545F4914F6CDD1D
//
// A zero seed is remapped to the splitmix64 increment so the state never
// sticks at zero.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9E3779B97F4A7C15ull) {}

    std::uint64_t next_u64() {
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545F4914F6CDD1Dull;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Box-Muller; the second variate is cached so the stream consumes two
    // uniforms per pair.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] keeps the log finite.
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Uniform in {0, ..., n-1} via modulo; bias is irrelevant at these sizes
    // and the reduction is part of the documented stream contract.
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(next_u64() % static_cast<std::uint64_t>(n));
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline Matrix sample_gaussian(std::size_t rows, std::size_t cols, double std_dev, Rng& rng) {
    if (std_dev <= 0.0) throw ParameterError("sample_gaussian: std must be positive");
    Matrix m(rows, cols);
    for (std::size_t k = 0; k < m.size(); ++k) m.storage()[k] = std_dev * rng.gaussian();
    return m;
}

// Fisher-Yates from the top index down; one index() draw per swap.
inline Permutation sample_permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> map(n);
    for (std::size_t i = 0; i < n; ++i) map[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.index(i);
        std::swap(map[i - 1], map[j]);
    }
    return Permutation(std::move(map));
}

inline Matrix sample_diagonal(std::size_t n, double lo, double hi, Rng& rng) {
    if (!(0.0 < lo && lo <= hi)) throw ParameterError("sample_diagonal: need 0 < lo <= hi");
    Matrix d(n, n);
    for (std::size_t i = 0; i < n; ++i) d(i, i) = rng.uniform(lo, hi);
    return d;
}

}  // namespace mergelock
