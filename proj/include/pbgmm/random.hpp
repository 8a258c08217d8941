#ifndef PBGMM_RANDOM_HPP
#define PBGMM_RANDOM_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace pbgmm {

using Rng = std::mt19937_64;

/// Independent stream for (seed, a, b); same inputs give the same stream.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32), 0x9e3779b9u};
    return Rng(seq);
}

/// Box-Muller normal draw; unlike std::normal_distribution it keeps no
/// cached state, so streams stay reproducible across standard libraries.
inline double standard_normal(Rng& rng) {
    constexpr double two_pi = 6.283185307179586476925286766559;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u1 = unif(rng);
    while (u1 <= 0.0) {
        u1 = unif(rng);
    }
    const double u2 = unif(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

inline double uniform(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> unif(lo, hi);
    return unif(rng);
}

} // namespace pbgmm

#endif // PBGMM_RANDOM_HPP
