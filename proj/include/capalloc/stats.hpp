#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace capalloc::stats {

inline double mean(std::span<const double> x) {
    if (x.empty()) throw std::invalid_argument("mean of empty range");
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

// Sample standard deviation (n-1 denominator).
inline double sample_sd(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n < 2) throw std::invalid_argument("sample_sd needs at least 2 values");
    const double m = mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(n - 1));
}

inline double stderr_of_mean(std::span<const double> x) {
    return sample_sd(x) / std::sqrt(static_cast<double>(x.size()));
}

// Lag-k autocorrelation of a series (biased normalization, standard for
// MCMC diagnostics).
inline double autocorr(std::span<const double> x, std::size_t lag) {
    const std::size_t n = x.size();
    if (n <= lag + 1) throw std::invalid_argument("series too short for lag");
    const double m = mean(x);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) den += (x[i] - m) * (x[i] - m);
    for (std::size_t i = 0; i + lag < n; ++i) num += (x[i] - m) * (x[i + lag] - m);
    if (den == 0.0) return 0.0;
    return num / den;
}

// Two-sample Kolmogorov-Smirnov distance.
inline double ks_distance(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_distance: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double z = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= z) ++i;
        while (j < b.size() && b[j] <= z) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

}  // namespace capalloc::stats
