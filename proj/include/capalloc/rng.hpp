#pragma once

#include <cmath>
#include <cstdint>

namespace capalloc::rng {

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter), so parallel fills and on-demand row
// regeneration produce identical numbers in any execution order.

inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t draw_u64(std::uint64_t seed, std::uint64_t stream,
                                        std::uint64_t counter) {
    return mix64(counter + mix64(stream + mix64(seed)));
}

// Derives a sub-seed for an independent purpose ("mc", "table cell 3", ...).
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose) {
    return mix64(seed ^ mix64(purpose + 0x51ed2701u));
}

// Uniform on the open interval (0,1); never returns an endpoint.
inline double uniform01(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    const std::uint64_t bits = draw_u64(seed, stream, counter) >> 11;  // 53 bits
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

// Inverse standard normal CDF: Acklam's rational approximation refined
// with one Halley step against erfc, accurate to ~1e-15 on (0,1).
inline double inv_normal_cdf(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                   -2.759285104469687e+02, 1.383577518672690e+02,
                                   -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                   -1.556989798598866e+02, 6.680131188771972e+01,
                                   -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                   -2.400758277161838e+00, -2.549732539343734e+00,
                                   4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                   2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley refinement: e = Phi(x) - p.
    static const double sqrt2 = std::sqrt(2.0);
    static const double sqrt_2pi = std::sqrt(8.0 * std::atan(1.0));
    const double e = 0.5 * std::erfc(-x / sqrt2) - p;
    const double u = e * sqrt_2pi * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

inline double normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    return inv_normal_cdf(uniform01(seed, stream, counter));
}

}  // namespace capalloc::rng
