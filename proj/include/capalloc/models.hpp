#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "capalloc/batch.hpp"
#include "capalloc/discrete.hpp"
#include "capalloc/rng.hpp"

namespace capalloc {

/// X = a - exp(Y), Y ~ N(mu, sigma^2). Always below the shift a.
struct ShiftedLognormalAsset {
    double a = 0.0;
    double mu = 0.0;
    double sigma = 1.0;

    double mean() const { return a - std::exp(mu + 0.5 * sigma * sigma); }
    bool operator==(const ShiftedLognormalAsset&) const = default;
};

/// X = base - I * Y with I ~ Bernoulli(p_loss) and Y Pareto-tailed with
/// density (gamma/b) * (y/b + 1)^(-gamma-1) on y > 0.
struct BernoulliParetoAsset {
    double base = 0.5;
    double p_loss = 0.1;
    double gamma = 2.0;
    double b = 1.0;

    double mean() const { return base - p_loss * b / (gamma - 1.0); }
    bool operator==(const BernoulliParetoAsset&) const = default;
};

using AssetModel = std::variant<ShiftedLognormalAsset, BernoulliParetoAsset>;

inline double asset_mean(const AssetModel& m) {
    return std::visit([](const auto& a) { return a.mean(); }, m);
}

/// Shift a such that E[a - exp(Y)] equals the target mean.
inline double calibrate_a(double mu, double sigma, double target_mean) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be nonnegative");
    return target_mean + std::exp(mu + 0.5 * sigma * sigma);
}

inline ShiftedLognormalAsset make_lognormal_asset(double mu, double sigma, double target_mean) {
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
    return {calibrate_a(mu, sigma, target_mean), mu, sigma};
}

/// Pareto scale b such that E[base - I*Y] equals the target mean:
/// the loss branch has mean b/(gamma-1).
inline double calibrate_pareto_scale(double gamma, double p_loss, double base,
                                     double target_mean) {
    if (!(gamma > 1.0)) throw std::invalid_argument("gamma must exceed 1 (finite mean)");
    if (!(p_loss > 0.0 && p_loss < 1.0)) throw std::invalid_argument("p_loss must be in (0,1)");
    const double b = (base - target_mean) * (gamma - 1.0) / p_loss;
    if (!(b > 0.0)) throw std::invalid_argument("calibrated Pareto scale is not positive");
    return b;
}

inline BernoulliParetoAsset make_pareto_asset(double gamma, double p_loss, double base,
                                              double target_mean) {
    return {base, p_loss, gamma, calibrate_pareto_scale(gamma, p_loss, base, target_mean)};
}

/// Gaussian log-density of the latent Y of a shifted-lognormal asset.
inline double log_density_y(const ShiftedLognormalAsset& asset, double y) {
    const double z = (y - asset.mu) / asset.sigma;
    return -0.5 * z * z - std::log(asset.sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

// ---------------------------------------------------------------------------
// Portfolio specification.

/// A portfolio: per-asset models with weights, or one of the two special
/// dependence structures (the coupled two-asset example, a discrete joint
/// law sampled by inverse CDF).
struct PortfolioSpec {
    enum class Dependence { independent, example2_coupling, discrete_joint };

    Dependence dependence = Dependence::independent;
    std::vector<AssetModel> assets;   // independent mode
    DiscreteJointDistribution joint;  // discrete_joint mode
    WeightVector weights;             // defaults to ones when empty

    std::size_t n_assets() const {
        switch (dependence) {
            case Dependence::independent: return assets.size();
            case Dependence::example2_coupling: return 2;
            case Dependence::discrete_joint: return joint.n_assets;
        }
        return 0;
    }

    double weight(std::size_t i) const { return weights.empty() ? 1.0 : weights[i]; }

    /// Per-asset model means before portfolio weighting.
    std::vector<double> unweighted_means() const {
        std::vector<double> m;
        switch (dependence) {
            case Dependence::independent:
                for (const auto& a : assets) m.push_back(asset_mean(a));
                break;
            case Dependence::example2_coupling:
                // 3*X1 with X1 ~ U[-1,1], and the piecewise transform X2.
                m = {0.0, -0.25};
                break;
            case Dependence::discrete_joint:
                m.assign(joint.n_assets, 0.0);
                for (std::size_t a = 0; a < joint.atom_count(); ++a)
                    for (std::size_t i = 0; i < joint.n_assets; ++i)
                        m[i] += joint.probs[a] * joint.value(a, i);
                break;
        }
        return m;
    }

    /// Means of the weighted components (what the batch rows contain).
    std::vector<double> weighted_means() const {
        auto m = unweighted_means();
        for (std::size_t i = 0; i < m.size(); ++i) m[i] *= weight(i);
        return m;
    }

    void validate() const {
        const std::size_t n = n_assets();
        if (n == 0) throw std::invalid_argument("no assets");
        if (!weights.empty() && weights.size() != n)
            throw std::invalid_argument("weight vector length != asset count");
        for (std::size_t i = 0; i < weights.size(); ++i)
            if (!std::isfinite(weights[i]))
                throw std::invalid_argument("non-finite portfolio weight");
    }
};

/// Groups of parameter-identical assets (independent portfolios only);
/// returns one group id per asset. Exchangeable assets make the spread of
/// their allocation estimates a direct precision measure.
inline std::vector<std::size_t> asset_groups(const PortfolioSpec& spec) {
    std::vector<std::size_t> group(spec.n_assets());
    if (spec.dependence != PortfolioSpec::Dependence::independent) {
        for (std::size_t i = 0; i < group.size(); ++i) group[i] = i;
        return group;
    }
    std::vector<std::size_t> reps;
    for (std::size_t i = 0; i < spec.assets.size(); ++i) {
        std::size_t g = reps.size();
        for (std::size_t r = 0; r < reps.size(); ++r) {
            if (spec.assets[reps[r]] == spec.assets[i] &&
                spec.weight(reps[r]) == spec.weight(i)) {
                g = r;
                break;
            }
        }
        if (g == reps.size()) reps.push_back(i);
        group[i] = g;
    }
    return group;
}

// ---------------------------------------------------------------------------
// Sampling. Every component value is a pure function of (seed, row, asset),
// so rows can be filled in parallel and regenerated on demand. Each asset
// has up to four sub-draws per row (counter = 4*row + sub).

namespace detail {

inline constexpr std::uint64_t kDrawsPerRow = 4;

inline double sample_asset_value(const AssetModel& model, std::uint64_t seed,
                                 std::uint64_t stream, std::uint64_t row) {
    const std::uint64_t base = kDrawsPerRow * row;
    if (const auto* ln = std::get_if<ShiftedLognormalAsset>(&model)) {
        const double z = rng::normal(seed, stream, base);
        return ln->a - std::exp(ln->mu + ln->sigma * z);
    }
    const auto& pa = std::get<BernoulliParetoAsset>(model);
    const double u_ind = rng::uniform01(seed, stream, base);
    const double u_tail = rng::uniform01(seed, stream, base + 1);
    if (u_ind >= pa.p_loss) return pa.base;
    const double y = pa.b * (std::pow(1.0 - u_tail, -1.0 / pa.gamma) - 1.0);
    return pa.base - y;
}

}  // namespace detail

/// Deterministic row generator for a portfolio spec. `row` fills the
/// weighted components and returns their left-to-right sum; the same row
/// index always yields the same values.
class PortfolioSampler {
  public:
    PortfolioSampler(const PortfolioSpec& spec, std::uint64_t seed)
        : spec_(&spec), seed_(seed) {
        spec.validate();
        if (spec.dependence == PortfolioSpec::Dependence::discrete_joint) {
            cum_probs_.reserve(spec.joint.atom_count());
            double c = 0.0;
            for (double p : spec.joint.probs) {
                c += p;
                cum_probs_.push_back(c);
            }
            cum_probs_.back() = 1.0;
        }
    }

    std::size_t n_assets() const { return spec_->n_assets(); }
    std::uint64_t seed() const { return seed_; }
    const PortfolioSpec& spec() const { return *spec_; }

    double row(std::uint64_t j, std::span<double> out) const {
        const std::size_t n = n_assets();
        const bool weighted = !spec_->weights.empty();
        switch (spec_->dependence) {
            case PortfolioSpec::Dependence::independent:
                for (std::size_t i = 0; i < n; ++i) {
                    double v = detail::sample_asset_value(spec_->assets[i], seed_, i, j);
                    out[i] = weighted ? spec_->weights[i] * v : v;
                }
                break;
            case PortfolioSpec::Dependence::example2_coupling: {
                const double x1 = 2.0 * rng::uniform01(seed_, 0, detail::kDrawsPerRow * j) - 1.0;
                const double x2 = x1 <= 0.0 ? -x1 : -2.0 * x1;
                out[0] = spec_->weight(0) * 3.0 * x1;
                out[1] = spec_->weight(1) * x2;
                break;
            }
            case PortfolioSpec::Dependence::discrete_joint: {
                const double u = rng::uniform01(seed_, 0, detail::kDrawsPerRow * j);
                const std::size_t atom =
                    std::lower_bound(cum_probs_.begin(), cum_probs_.end(), u) -
                    cum_probs_.begin();
                for (std::size_t i = 0; i < n; ++i)
                    out[i] = spec_->weight(i) * spec_->joint.value(atom, i);
                break;
            }
        }
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += out[i];
        return total;
    }

    double total(std::uint64_t j) const {
        thread_local std::vector<double> scratch;
        scratch.resize(n_assets());
        return row(j, scratch);
    }

  private:
    const PortfolioSpec* spec_;
    std::uint64_t seed_;
    std::vector<double> cum_probs_;
};

/// m i.i.d. realizations of the portfolio; deterministic given the seed.
inline RealizationBatch sample_portfolio(const PortfolioSpec& spec, std::size_t m,
                                         std::uint64_t seed) {
    if (m < 1) throw std::invalid_argument("need at least one realization");
    PortfolioSampler sampler(spec, seed);
    const std::size_t n = sampler.n_assets();
    RealizationBatch batch;
    batch.n_assets = n;
    batch.seed = seed;
    batch.components.resize(m * n);
    batch.totals.resize(m);
    for (std::size_t j = 0; j < m; ++j)
        batch.totals[j] = sampler.row(j, {batch.components.data() + j * n, n});
    return batch;
}

}  // namespace capalloc
