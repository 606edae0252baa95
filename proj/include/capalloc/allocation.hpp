#pragma once

#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "capalloc/batch.hpp"
#include "capalloc/discrete.hpp"

namespace capalloc {

enum class Method { exact, fd, mc, is, mcmc };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::exact: return "exact";
        case Method::fd: return "fd";
        case Method::mc: return "MC";
        case Method::is: return "IS";
        case Method::mcmc: return "MCMC";
    }
    return "?";
}

/// Portfolio risk, per-asset Euler allocations and their uncertainty, and
/// the associated RORACs.
struct AllocationReport {
    double var_or_es = 0.0;
    std::vector<double> allocations;
    std::vector<double> stderrs;
    std::vector<double> expected_returns;
    std::vector<double> roracs;  // NaN where the allocation is zero
    double portfolio_return = 0.0;
    double portfolio_rorac = 0.0;
    Method method = Method::exact;
    std::map<std::string, double> diagnostics;
    std::vector<std::string> asset_names;

    std::size_t n_assets() const { return allocations.size(); }
};

// ---------------------------------------------------------------------------
// Band estimator for the VaR allocation.

enum class BandVariant { ratio_rescaled, plain };

/// Conditional-expectation estimate of -E[X_i | X = -VaR] from the 2b+1
/// order statistics around the band center. The ratio-rescaled variant
/// weights each band row by X^(c)/X^(c+j); the plain variant averages the
/// components directly.
inline std::vector<double> alloc_var_band(const SortedBatch& sorted, std::size_t b,
                                          BandVariant variant = BandVariant::ratio_rescaled) {
    const std::size_t m = sorted.size();
    const std::size_t c = sorted.level_index;
    if (c < b || c + b >= m) throw std::out_of_range("allocation band out of range");
    const std::size_t n = sorted.batch->n_assets;
    const double center_total = sorted.total_at(c);
    std::vector<double> acc(n, 0.0);
    for (std::size_t r = c - b; r <= c + b; ++r) {
        double scale = 1.0;
        if (variant == BandVariant::ratio_rescaled) {
            const double t = sorted.total_at(r);
            if (t == 0.0) throw std::runtime_error("zero total in band; rescaling undefined");
            scale = center_total / t;
        }
        for (std::size_t i = 0; i < n; ++i) acc[i] += scale * sorted.component_at(r, i);
    }
    const double inv = 1.0 / static_cast<double>(2 * b + 1);
    for (double& x : acc) x = -x * inv;
    return acc;
}

/// Tail estimate of -E[X_i | X <= -VaR]: minus the (weighted) average of
/// components over realizations at or below the lower-tail quantile cut.
/// Sums to es_empirical(tail form) by construction.
inline std::vector<double> alloc_es_tail(const SortedBatch& sorted, double alpha) {
    const std::size_t m = sorted.size();
    if (m == 0) throw std::invalid_argument("empty batch");
    const auto& batch = *sorted.batch;
    const std::size_t n = batch.n_assets;
    const double cut = batch.weighted() ? weighted_quantile(batch, 1.0 - alpha).value
                                        : sorted.total_at(detail::quantile_rank(1.0 - alpha, m));
    std::vector<double> acc(n, 0.0);
    double mass = 0.0;
    for (std::size_t r = 0; r < m && sorted.total_at(r) <= cut; ++r) {
        const double w = batch.weighted() ? batch.weights[sorted.order[r]] : 1.0;
        mass += w;
        for (std::size_t i = 0; i < n; ++i) acc[i] += w * sorted.component_at(r, i);
    }
    if (!(mass > 0.0)) throw std::runtime_error("empty tail event");
    for (double& x : acc) x = -x / mass;
    return acc;
}

/// ES allocations rescaled so they sum to the VaR of the portfolio:
/// the blended rho_VaR-ES capital allocation.
inline std::vector<double> alloc_blend_var_es(std::span<const double> es_allocs, double es_total,
                                              double var_total) {
    if (es_total == 0.0) throw std::invalid_argument("blend undefined: ES total is zero");
    const double scale = var_total / es_total;
    std::vector<double> out(es_allocs.begin(), es_allocs.end());
    for (double& x : out) x *= scale;
    return out;
}

// ---------------------------------------------------------------------------
// RORAC.

struct RoracResult {
    std::vector<double> per_asset;          // NaN where allocation == 0
    std::vector<bool> negative_allocation;  // sign flag per asset
    double portfolio = 0.0;
};

inline RoracResult rorac(std::span<const double> expected_returns,
                         std::span<const double> allocations, double portfolio_return,
                         double portfolio_risk) {
    if (expected_returns.size() != allocations.size())
        throw std::invalid_argument("rorac: mismatched vector lengths");
    if (portfolio_risk == 0.0) throw std::invalid_argument("rorac: zero portfolio risk");
    RoracResult r;
    r.per_asset.resize(allocations.size());
    r.negative_allocation.resize(allocations.size());
    for (std::size_t i = 0; i < allocations.size(); ++i) {
        if (!std::isfinite(allocations[i]))
            throw std::invalid_argument("rorac: non-finite allocation");
        r.negative_allocation[i] = allocations[i] < 0.0;
        r.per_asset[i] = allocations[i] != 0.0
                             ? expected_returns[i] / allocations[i]
                             : std::numeric_limits<double>::quiet_NaN();
    }
    r.portfolio = portfolio_return / portfolio_risk;
    return r;
}

// ---------------------------------------------------------------------------
// RORAC compatibility.

/// Weight-bumpable view of a portfolio: its risk as a function of asset
/// weights, the per-asset expected returns, and (optionally) an allocation
/// rule; when absent, allocations come from central finite differences.
struct PortfolioEvaluator {
    std::function<double(const WeightVector&)> risk;
    std::vector<double> mean_returns;
    std::function<std::vector<double>(const WeightVector&)> alloc;  // may be empty
};

struct RoracCompatibilityResult {
    bool pass = true;
    bool premise_holds = false;  // RORAC(X_i,X) > RORAC(X)
    double largest_eps = 0.0;    // largest grid h on which the implication held
    double failing_h = 0.0;      // first grid h violating it, when !pass
    double asset_rorac = 0.0;
    double portfolio_rorac = 0.0;
};

/// Checks on a finite grid of bump sizes h (positive, decreasing) that
/// RORAC(X_i,X) > RORAC(X) implies RORAC(X + h X_i) > RORAC(X).
inline RoracCompatibilityResult check_rorac_compatibility(const PortfolioEvaluator& model,
                                                          std::size_t asset,
                                                          std::span<const double> h_grid) {
    const std::size_t n = model.mean_returns.size();
    if (asset >= n) throw std::invalid_argument("asset index out of range");
    if (h_grid.empty()) throw std::invalid_argument("empty h grid");
    for (std::size_t k = 0; k + 1 < h_grid.size(); ++k)
        if (!(h_grid[k] > h_grid[k + 1] && h_grid[k + 1] > 0.0))
            throw std::invalid_argument("h grid must be positive and decreasing");

    const WeightVector u1 = unit_weights(n);
    const double f0 = model.risk(u1);
    double total_return = 0.0;
    for (double r : model.mean_returns) total_return += r;

    RoracCompatibilityResult out;
    out.portfolio_rorac = total_return / f0;
    std::vector<double> allocs =
        model.alloc ? model.alloc(u1) : fd_alloc(model.risk, u1, fd_default_step(f0));
    if (allocs[asset] == 0.0) throw std::runtime_error("asset allocation is zero");
    out.asset_rorac = model.mean_returns[asset] / allocs[asset];
    out.premise_holds = out.asset_rorac > out.portfolio_rorac;
    if (!out.premise_holds) return out;  // implication vacuously holds

    for (double h : h_grid) {
        WeightVector u = u1;
        u[asset] += h;
        const double bumped = (total_return + h * model.mean_returns[asset]) / model.risk(u);
        if (bumped > out.portfolio_rorac) {
            if (out.largest_eps == 0.0) out.largest_eps = h;
        } else {
            out.largest_eps = 0.0;  // must hold for ALL h below eps
            out.pass = false;
            out.failing_h = h;
        }
    }
    if (out.pass && out.largest_eps == 0.0) out.largest_eps = h_grid.front();
    return out;
}

// ---------------------------------------------------------------------------
// Report serialization.

inline void write_report_csv(const AllocationReport& rep, std::ostream& os) {
    os.precision(17);
    os << "# method," << method_name(rep.method) << '\n';
    os << "# risk," << rep.var_or_es << '\n';
    os << "# portfolio_return," << rep.portfolio_return << '\n';
    os << "# portfolio_rorac," << rep.portfolio_rorac << '\n';
    for (const auto& [k, v] : rep.diagnostics) os << "# " << k << ',' << v << '\n';
    os << "asset,allocation,stderr,expected_return,rorac\n";
    for (std::size_t i = 0; i < rep.n_assets(); ++i) {
        const std::string name =
            i < rep.asset_names.size() ? rep.asset_names[i] : "asset_" + std::to_string(i + 1);
        os << name << ',' << rep.allocations[i] << ','
           << (i < rep.stderrs.size() ? rep.stderrs[i] : 0.0) << ','
           << (i < rep.expected_returns.size() ? rep.expected_returns[i] : 0.0) << ','
           << (i < rep.roracs.size() ? rep.roracs[i] : 0.0) << '\n';
    }
}

inline void write_report_text(const AllocationReport& rep, std::ostream& os, int digits = 6) {
    os << "method: " << method_name(rep.method) << "\n";
    os << std::setprecision(digits);
    os << "portfolio risk: " << rep.var_or_es << "\n";
    os << "portfolio RORAC: " << rep.portfolio_rorac << "\n";
    os << std::left << std::setw(14) << "asset" << std::right << std::setw(14) << "allocation"
       << std::setw(14) << "stderr" << std::setw(14) << "return" << std::setw(14) << "rorac"
       << "\n";
    for (std::size_t i = 0; i < rep.n_assets(); ++i) {
        const std::string name =
            i < rep.asset_names.size() ? rep.asset_names[i] : "asset_" + std::to_string(i + 1);
        os << std::left << std::setw(14) << name << std::right << std::setw(14)
           << rep.allocations[i] << std::setw(14)
           << (i < rep.stderrs.size() ? rep.stderrs[i] : 0.0) << std::setw(14)
           << (i < rep.expected_returns.size() ? rep.expected_returns[i] : 0.0) << std::setw(14)
           << (i < rep.roracs.size() ? rep.roracs[i] : 0.0) << "\n";
    }
    if (!rep.diagnostics.empty()) {
        os << "diagnostics:\n";
        for (const auto& [k, v] : rep.diagnostics) os << "  " << k << " = " << v << "\n";
    }
}

}  // namespace capalloc
