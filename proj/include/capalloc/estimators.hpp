#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "capalloc/allocation.hpp"
#include "capalloc/batch.hpp"
#include "capalloc/models.hpp"
#include "capalloc/risk.hpp"
#include "capalloc/rng.hpp"
#include "capalloc/stats.hpp"

namespace capalloc {

// ---------------------------------------------------------------------------
// Operation accounting. Tallies cover the algorithm arithmetic (sampling
// transform, weights, ratio, state update, allocation accumulation) with
// random draws treated as primitives; bookkeeping for standard errors and
// diagnostics is not counted. Instrumented runs are single-threaded.

struct OpCounts {
    std::uint64_t adds = 0;
    std::uint64_t muls = 0;
    std::uint64_t exps = 0;
    std::uint64_t logs = 0;
    std::uint64_t cmps = 0;

    std::uint64_t total() const { return adds + muls + exps + logs; }
};

/// Analytic per-realization operation counts of the three algorithms.
struct OperationFormulas {
    double var_per_realization = 0.0;
    double alloc_per_realization = 0.0;
};

inline OperationFormulas count_operations(Method method, std::size_t n,
                                          std::size_t band_half_width = 0) {
    const double nd = static_cast<double>(n);
    const double band = static_cast<double>(2 * band_half_width + 1);
    switch (method) {
        case Method::mc: return {3.0 * nd, 3.0 * nd / band};
        case Method::is: return {6.0 * nd, 6.0 * nd / band};
        case Method::mcmc: return {0.0, 9.0};
        default: throw std::invalid_argument("operation counts exist for MC, IS and MCMC only");
    }
}

// ---------------------------------------------------------------------------
// Execution options shared by the estimators.

struct RunOptions {
    unsigned threads = 0;       // 0 = hardware concurrency
    OpCounts* tally = nullptr;  // forces a sequential instrumented run
    // When set, diagnostics["interval_hits"] counts realizations with a
    // total inside [first, second].
    std::optional<std::pair<double, double>> hit_interval;
    bool keep_trace = false;  // MCMC: retain the trace rows
};

struct MCConfig {
    std::size_t m = 0;
    std::size_t b = 0;  // band half-width
    double alpha = 0.99;
};

struct ISConfig {
    std::size_t m = 0;
    std::size_t b_is = 0;
    double alpha = 0.99;
    double shift = 0.0;     // proposal mean shift on every latent Y
    double sigma_is = 0.0;  // proposal scale; 0 keeps each asset's sigma
};

enum class RatioMode { paper_literal, jacobian_corrected };

struct MCMCConfig {
    std::size_t m = 0;      // retained samples
    std::size_t thin = 0;   // inner steps per retained sample; 0 = n
    double rho_prop = 0.3;  // proposal autocorrelation
    double var_level = std::numeric_limits<double>::quiet_NaN();
    std::size_t burn_in = kDefaultBurnIn;  // discarded initial steps; default 10n
    RatioMode ratio_mode = RatioMode::jacobian_corrected;

    static constexpr std::size_t kDefaultBurnIn = static_cast<std::size_t>(-1);
};

struct MCMCTraceRow {
    std::uint64_t step = 0;
    bool accepted = false;
    double total = 0.0;
    double asset_k1 = 0.0;
    double asset_k2 = 0.0;
};

namespace detail {

inline unsigned resolve_threads(unsigned requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

template <class Fn>
inline void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    threads = resolve_threads(threads);
    if (threads <= 1 || count < 2 * threads) {
        for (std::size_t j = 0; j < count; ++j) fn(j);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::size_t chunk = (count + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::size_t j = lo; j < hi; ++j) fn(j);
        });
    }
    for (auto& th : pool) th.join();
}

inline std::vector<std::size_t> argsort_stable(std::span<const double> keys) {
    std::vector<std::size_t> order(keys.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
    return order;
}

inline bool all_lognormal(const PortfolioSpec& spec) {
    if (spec.dependence != PortfolioSpec::Dependence::independent) return false;
    for (const auto& a : spec.assets)
        if (!std::holds_alternative<ShiftedLognormalAsset>(a)) return false;
    return true;
}

// Instrumented total of one row for lognormal portfolios; mirrors
// PortfolioSampler::row bit for bit.
inline double instrumented_lognormal_total(const PortfolioSpec& spec, std::uint64_t seed,
                                           std::uint64_t j, OpCounts& tally) {
    double total = 0.0;
    const bool weighted = !spec.weights.empty();
    for (std::size_t i = 0; i < spec.assets.size(); ++i) {
        const auto& ln = std::get<ShiftedLognormalAsset>(spec.assets[i]);
        const double z = rng::normal(seed, i, kDrawsPerRow * j);
        double v = ln.a - std::exp(ln.mu + ln.sigma * z);
        tally.exps += 1;
        tally.adds += 1;  // a - exp(.)
        if (weighted) {
            v = spec.weights[i] * v;
            tally.muls += 1;
        }
        total += v;
        tally.adds += 1;
    }
    return total;
}

// The ratio-rescaled band average over sorted ranks [center-b, center+b],
// regenerating component rows on demand. Matches alloc_var_band on a
// materialized batch.
inline std::vector<double> band_alloc_streamed(const PortfolioSampler& sampler,
                                               std::span<const double> totals,
                                               std::span<const std::size_t> order,
                                               std::size_t center, std::size_t b) {
    const std::size_t m = totals.size();
    if (center < b || center + b >= m) throw std::out_of_range("allocation band out of range");
    const std::size_t n = sampler.n_assets();
    const double center_total = totals[order[center]];
    std::vector<double> row(n), acc(n, 0.0);
    for (std::size_t r = center - b; r <= center + b; ++r) {
        const std::size_t j = order[r];
        const double t = sampler.row(j, row);
        if (t == 0.0) throw std::runtime_error("zero total in band; rescaling undefined");
        const double scale = center_total / t;
        for (std::size_t i = 0; i < n; ++i) acc[i] += scale * row[i];
    }
    const double inv = 1.0 / static_cast<double>(2 * b + 1);
    for (double& x : acc) x = -x * inv + 0.0;
    return acc;
}

// Tail conditional mean over sorted ranks with totals <= cut (weighted when
// weights are given); returns {per-asset allocations, tail risk}.
inline std::pair<std::vector<double>, double> tail_alloc_streamed(
    const PortfolioSampler& sampler, std::span<const double> totals,
    std::span<const std::size_t> order, std::span<const double> weights, double cut) {
    const std::size_t n = sampler.n_assets();
    std::vector<double> row(n), acc(n, 0.0);
    double mass = 0.0, tacc = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        const std::size_t j = order[r];
        if (totals[j] > cut) break;
        const double w = weights.empty() ? 1.0 : weights[j];
        sampler.row(j, row);
        mass += w;
        tacc += w * totals[j];
        for (std::size_t i = 0; i < n; ++i) acc[i] += w * row[i];
    }
    if (!(mass > 0.0)) throw std::runtime_error("empty tail event");
    for (double& x : acc) x = -x / mass + 0.0;
    return {std::move(acc), -tacc / mass};
}

// Split the rows into `parts` contiguous sub-batches and redo the whole
// estimator per part; the spread of the part estimates gives the standard
// error of the full run.
struct SplitEstimates {
    std::vector<std::vector<double>> allocs;  // one vector per part
    std::vector<double> risks;
};

template <class PartFn>
inline SplitEstimates split_estimates(std::size_t m, std::size_t parts, PartFn&& part_fn) {
    SplitEstimates out;
    if (parts < 2 || m < 4 * parts) return out;
    const std::size_t chunk = m / parts;
    for (std::size_t s = 0; s < parts; ++s) {
        const std::size_t lo = s * chunk;
        const std::size_t hi = s + 1 == parts ? m : lo + chunk;
        auto [alloc, risk] = part_fn(lo, hi);
        if (alloc.empty()) return {};  // a part failed; no split stderr
        out.allocs.push_back(std::move(alloc));
        out.risks.push_back(risk);
    }
    return out;
}

// Per-asset standard errors: the cross-sectional spread of parameter-
// identical assets where a group exists, otherwise the sub-batch spread
// scaled to the full run.
inline std::vector<double> combine_stderrs(const PortfolioSpec& spec,
                                           std::span<const double> allocations,
                                           const SplitEstimates& split,
                                           std::map<std::string, double>& diagnostics) {
    const std::size_t n = allocations.size();
    std::vector<double> errs(n, 0.0);
    if (!split.allocs.empty()) {
        const double parts = static_cast<double>(split.allocs.size());
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> vals;
            vals.reserve(split.allocs.size());
            for (const auto& a : split.allocs) vals.push_back(a[i]);
            errs[i] = stats::sample_sd(vals) / std::sqrt(parts);
        }
        diagnostics["risk_stderr"] = stats::sample_sd(split.risks) / std::sqrt(parts);
    }
    const auto groups = asset_groups(spec);
    const std::size_t n_groups = groups.empty() ? 0 : *std::max_element(groups.begin(),
                                                                        groups.end()) + 1;
    for (std::size_t g = 0; g < n_groups; ++g) {
        std::vector<double> members;
        for (std::size_t i = 0; i < n; ++i)
            if (groups[i] == g) members.push_back(allocations[i]);
        if (members.size() < 2) continue;
        const double sd = stats::sample_sd(members);
        const double mean = stats::mean(members);
        for (std::size_t i = 0; i < n; ++i)
            if (groups[i] == g) errs[i] = sd;
        const std::string tag = "group" + std::to_string(g);
        diagnostics[tag + "_alloc"] = mean;
        diagnostics[tag + "_sd"] = sd;
        diagnostics[tag + "_size"] = static_cast<double>(members.size());
    }
    return errs;
}

inline AllocationReport finalize_report(const PortfolioSpec& spec, Method method, double risk,
                                        std::vector<double> allocations,
                                        std::vector<double> stderrs,
                                        std::map<std::string, double> diagnostics) {
    AllocationReport rep;
    rep.method = method;
    rep.var_or_es = risk;
    rep.allocations = std::move(allocations);
    rep.stderrs = std::move(stderrs);
    rep.expected_returns = spec.weighted_means();
    rep.portfolio_return =
        std::accumulate(rep.expected_returns.begin(), rep.expected_returns.end(), 0.0);
    const auto rr = rorac(rep.expected_returns, rep.allocations, rep.portfolio_return, risk);
    rep.roracs = rr.per_asset;
    rep.portfolio_rorac = rr.portfolio;
    rep.diagnostics = std::move(diagnostics);
    return rep;
}

inline void count_interval_hits(std::span<const double> totals,
                                const std::optional<std::pair<double, double>>& interval,
                                std::map<std::string, double>& diagnostics) {
    if (!interval) return;
    std::size_t hits = 0;
    for (double t : totals)
        if (t >= interval->first && t <= interval->second) ++hits;
    diagnostics["interval_hits"] = static_cast<double>(hits);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Monte Carlo.

/// Plain Monte Carlo: sample, sort, read VaR off the level order statistic
/// and average the ratio-rescaled band for the per-asset allocations.
inline AllocationReport estimate_mc(const PortfolioSpec& spec, const MCConfig& cfg,
                                    std::uint64_t seed, const RunOptions& opts = {}) {
    spec.validate();
    if (cfg.m < 2) throw std::invalid_argument("need at least two realizations");
    const std::size_t c = level_index_for(cfg.alpha, cfg.m);
    if (c < cfg.b || c + cfg.b >= cfg.m)
        throw std::invalid_argument("band half-width does not fit at this level");

    PortfolioSampler sampler(spec, seed);
    std::vector<double> totals(cfg.m);
    if (opts.tally && detail::all_lognormal(spec)) {
        for (std::size_t j = 0; j < cfg.m; ++j)
            totals[j] = detail::instrumented_lognormal_total(spec, seed, j, *opts.tally);
    } else {
        detail::parallel_for(cfg.m, opts.tally ? 1 : opts.threads,
                             [&](std::size_t j) { totals[j] = sampler.total(j); });
    }
    const auto order = detail::argsort_stable(totals);
    const double var = -totals[order[c]] + 0.0;
    auto allocs = detail::band_alloc_streamed(sampler, totals, order, c, cfg.b);

    std::map<std::string, double> diag;
    diag["m"] = static_cast<double>(cfg.m);
    diag["b"] = static_cast<double>(cfg.b);
    diag["alpha"] = cfg.alpha;
    detail::count_interval_hits(totals, opts.hit_interval, diag);
    if (opts.tally) {
        diag["ops_total"] = static_cast<double>(opts.tally->total());
        diag["ops_per_realization"] = static_cast<double>(opts.tally->total()) /
                                      static_cast<double>(cfg.m);
    }

    auto split = detail::split_estimates(cfg.m, 10, [&](std::size_t lo, std::size_t hi)
                                                        -> std::pair<std::vector<double>, double> {
        const std::size_t ms = hi - lo;
        std::vector<double> sub(totals.begin() + lo, totals.begin() + hi);
        auto sub_order = detail::argsort_stable(sub);
        for (auto& r : sub_order) r += lo;  // back to global row ids
        const std::size_t cs = level_index_for(cfg.alpha, ms);
        const std::size_t bs = std::min({cfg.b / 10, cs, ms - 1 - cs});
        std::span<const std::size_t> global(sub_order);
        // totals span is global; ranks index sub_order whose entries are global rows
        std::vector<double> alloc;
        double risk = 0.0;
        try {
            alloc = detail::band_alloc_streamed(sampler, totals, global, cs, bs);
            risk = -totals[sub_order[cs]];
        } catch (const std::exception&) {
            return {{}, 0.0};
        }
        return {std::move(alloc), risk};
    });
    auto errs = detail::combine_stderrs(spec, allocs, split, diag);
    return detail::finalize_report(spec, Method::mc, var, std::move(allocs), std::move(errs),
                                   std::move(diag));
}

/// Monte Carlo ES: tail-conditional risk and allocations from the worst
/// realizations.
inline AllocationReport estimate_mc_es(const PortfolioSpec& spec, std::size_t m, double alpha,
                                       std::uint64_t seed, const RunOptions& opts = {}) {
    spec.validate();
    if (m < 2) throw std::invalid_argument("need at least two realizations");
    PortfolioSampler sampler(spec, seed);
    std::vector<double> totals(m);
    detail::parallel_for(m, opts.tally ? 1 : opts.threads,
                         [&](std::size_t j) { totals[j] = sampler.total(j); });
    const auto order = detail::argsort_stable(totals);
    const double cut = totals[order[detail::quantile_rank(1.0 - alpha, m)]];
    auto [allocs, es] = detail::tail_alloc_streamed(sampler, totals, order, {}, cut);

    std::map<std::string, double> diag;
    diag["m"] = static_cast<double>(m);
    diag["alpha"] = alpha;
    detail::count_interval_hits(totals, opts.hit_interval, diag);

    auto split = detail::split_estimates(m, 10, [&](std::size_t lo, std::size_t hi)
                                                    -> std::pair<std::vector<double>, double> {
        const std::size_t ms = hi - lo;
        std::vector<double> sub(totals.begin() + lo, totals.begin() + hi);
        auto sub_order = detail::argsort_stable(sub);
        for (auto& r : sub_order) r += lo;
        const double sub_cut = totals[sub_order[detail::quantile_rank(1.0 - alpha, ms)]];
        try {
            auto [a, r] = detail::tail_alloc_streamed(sampler, totals, sub_order, {}, sub_cut);
            return {std::move(a), r};
        } catch (const std::exception&) {
            return {{}, 0.0};
        }
    });
    auto errs = detail::combine_stderrs(spec, allocs, split, diag);
    return detail::finalize_report(spec, Method::mc, es, std::move(allocs), std::move(errs),
                                   std::move(diag));
}

// ---------------------------------------------------------------------------
// Importance sampling.

/// Importance sampling on the latent Gaussians: draws come from the shifted
/// proposal, likelihood-ratio weights reweight them back, and the VaR index
/// is the sorted realization whose cumulative weight is closest to 1-alpha.
/// With shift 0 (and the target sigma) this reproduces estimate_mc exactly.
inline AllocationReport estimate_is(const PortfolioSpec& spec, const ISConfig& cfg,
                                    std::uint64_t seed, const RunOptions& opts = {}) {
    spec.validate();
    if (!detail::all_lognormal(spec))
        throw std::invalid_argument("importance sampling requires shifted-lognormal assets");
    if (cfg.m < 2) throw std::invalid_argument("need at least two realizations");

    // Proposal portfolio: same shifts a_i, latent means mu_i + shift.
    PortfolioSpec proposal = spec;
    std::vector<double> a_p(spec.assets.size());
    std::vector<double> mu_t(spec.assets.size()), sg_t(spec.assets.size());
    std::vector<double> mu_p(spec.assets.size()), sg_p(spec.assets.size());
    for (std::size_t i = 0; i < spec.assets.size(); ++i) {
        auto ln = std::get<ShiftedLognormalAsset>(spec.assets[i]);
        mu_t[i] = ln.mu;
        sg_t[i] = ln.sigma;
        ln.mu += cfg.shift;
        if (cfg.sigma_is > 0.0) ln.sigma = cfg.sigma_is;
        a_p[i] = ln.a;
        mu_p[i] = ln.mu;
        sg_p[i] = ln.sigma;
        proposal.assets[i] = ln;
    }
    PortfolioSampler sampler(proposal, seed);
    const std::size_t n = spec.assets.size();

    // log w(y) = sum_i [A_i + B_i*y_i] when the proposal keeps sigma.
    std::vector<double> lw_a(n), lw_b(n);
    const bool same_sigma = !(cfg.sigma_is > 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = cfg.shift;
        lw_b[i] = -s / (sg_t[i] * sg_t[i]);
        lw_a[i] = s * (mu_t[i] + 0.5 * s) / (sg_t[i] * sg_t[i]);
    }

    std::vector<double> totals(cfg.m), weights(cfg.m);
    auto row_weight = [&](std::size_t j, OpCounts* tally) {
        double total = 0.0, logw = 0.0;
        const bool weighted = !spec.weights.empty();
        for (std::size_t i = 0; i < n; ++i) {
            const double z = rng::normal(seed, i, detail::kDrawsPerRow * j);
            const double y = mu_p[i] + sg_p[i] * z;
            double v = a_p[i] - std::exp(y);
            if (weighted) v = spec.weights[i] * v;
            total += v;
            if (same_sigma) {
                logw += lw_a[i] + lw_b[i] * y;
                if (tally) {
                    tally->adds += 2;
                    tally->muls += 1;
                }
            } else {
                const double zt = (y - mu_t[i]) / sg_t[i];
                logw += 0.5 * (z * z - zt * zt) + std::log(sg_p[i] / sg_t[i]);
                if (tally) {
                    tally->adds += 4;
                    tally->muls += 5;
                    tally->logs += 1;
                }
            }
            if (tally) {
                tally->exps += 1;
                tally->adds += 2;  // a-exp and the running total
                tally->muls += weighted ? 1 : 0;
            }
        }
        totals[j] = total;
        weights[j] = std::exp(logw);
        if (tally) tally->exps += 1;
        return total;
    };
    if (opts.tally) {
        for (std::size_t j = 0; j < cfg.m; ++j) row_weight(j, opts.tally);
    } else {
        detail::parallel_for(cfg.m, opts.threads,
                             [&](std::size_t j) { row_weight(j, nullptr); });
    }

    double wsum = 0.0, wsq = 0.0;
    for (double w : weights) {
        wsum += w;
        wsq += w * w;
    }
    const double ess = wsum * wsum / wsq;
    if (ess < 10.0)
        throw std::runtime_error("importance weights degenerate (ESS < 10); use a smaller shift");

    const auto order = detail::argsort_stable(totals);
    std::vector<double> sorted_w(cfg.m);
    for (std::size_t k = 0; k < cfg.m; ++k) sorted_w[k] = weights[order[k]];
    const std::size_t c = weighted_level_index(sorted_w, cfg.alpha);
    if (c < cfg.b_is || c + cfg.b_is >= cfg.m)
        throw std::invalid_argument("IS band half-width does not fit at the weighted level");
    const double var = -totals[order[c]] + 0.0;
    auto allocs = detail::band_alloc_streamed(sampler, totals, order, c, cfg.b_is);

    std::map<std::string, double> diag;
    diag["m"] = static_cast<double>(cfg.m);
    diag["b_is"] = static_cast<double>(cfg.b_is);
    diag["alpha"] = cfg.alpha;
    diag["shift"] = cfg.shift;
    diag["ess"] = ess;
    detail::count_interval_hits(totals, opts.hit_interval, diag);
    if (opts.tally) {
        diag["ops_total"] = static_cast<double>(opts.tally->total());
        diag["ops_per_realization"] = static_cast<double>(opts.tally->total()) /
                                      static_cast<double>(cfg.m);
    }

    auto split = detail::split_estimates(cfg.m, 10, [&](std::size_t lo, std::size_t hi)
                                                        -> std::pair<std::vector<double>, double> {
        const std::size_t ms = hi - lo;
        std::vector<double> sub(totals.begin() + lo, totals.begin() + hi);
        auto sub_order = detail::argsort_stable(sub);
        for (auto& r : sub_order) r += lo;
        std::vector<double> sw(ms);
        for (std::size_t k = 0; k < ms; ++k) sw[k] = weights[sub_order[k]];
        const std::size_t cs = weighted_level_index(sw, cfg.alpha);
        const std::size_t bs = std::min({cfg.b_is / 10, cs, ms - 1 - cs});
        try {
            auto alloc = detail::band_alloc_streamed(sampler, totals, sub_order, cs, bs);
            return {std::move(alloc), -totals[sub_order[cs]]};
        } catch (const std::exception&) {
            return {{}, 0.0};
        }
    });
    auto errs = detail::combine_stderrs(spec, allocs, split, diag);
    return detail::finalize_report(spec, Method::is, var, std::move(allocs), std::move(errs),
                                   std::move(diag));
}

// ---------------------------------------------------------------------------
// MCMC on the VaR level set.

/// Metropolis-Hastings chain whose every state satisfies sum(X_i) =
/// -var_level: one coordinate gets a fresh AR(1) Gaussian proposal, a second
/// absorbs the difference, and the acceptance ratio keeps the conditional
/// law invariant (exactly in jacobian-corrected mode). Allocations are minus
/// the retained-state component means; the VaR itself is an input.
inline AllocationReport estimate_mcmc(const PortfolioSpec& spec, const MCMCConfig& cfg,
                                      std::uint64_t seed, const RunOptions& opts = {},
                                      std::vector<MCMCTraceRow>* trace_out = nullptr) {
    spec.validate();
    if (!detail::all_lognormal(spec))
        throw std::invalid_argument("MCMC estimation requires shifted-lognormal assets");
    const std::size_t n = spec.assets.size();
    if (n < 2) throw std::invalid_argument("MCMC needs at least two assets");
    if (cfg.m < 2) throw std::invalid_argument("need at least two retained samples");
    if (!(cfg.rho_prop >= 0.0 && cfg.rho_prop < 1.0))
        throw std::invalid_argument("rho_prop must be in [0,1)");
    if (!std::isfinite(cfg.var_level))
        throw std::invalid_argument("var_level must be supplied (finite)");

    // Fold positive portfolio weights into the asset parameters:
    // w*(a - exp(Y)) = (w*a) - exp(Y + log w).
    std::vector<double> a(n), mu(n), sigma(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& ln = std::get<ShiftedLognormalAsset>(spec.assets[i]);
        const double w = spec.weight(i);
        if (!(w > 0.0)) throw std::invalid_argument("MCMC requires positive asset weights");
        a[i] = w * ln.a;
        mu[i] = ln.mu + std::log(w);
        sigma[i] = ln.sigma;
    }

    const std::size_t thin = cfg.thin > 0 ? cfg.thin : n;
    const std::size_t burn = cfg.burn_in == MCMCConfig::kDefaultBurnIn ? 10 * n : cfg.burn_in;
    const double level = -cfg.var_level;  // target total

    // Initial state: latent means shifted by a common scalar (bisection)
    // until the total hits the level.
    std::vector<double> y(mu), x(n), zsq(n, 0.0);
    {
        auto total_at = [&](double delta) {
            double t = 0.0;
            for (std::size_t i = 0; i < n; ++i) t += a[i] - std::exp(mu[i] + delta);
            return t;
        };
        double lo = -60.0, hi = 60.0;
        if (!(total_at(lo) > level && total_at(hi) < level))
            throw std::runtime_error("cannot place an initial state on the level set");
        const double tol = 1e-10 * std::max(1.0, std::abs(cfg.var_level));
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            const double t = total_at(mid);
            if (std::abs(t - level) <= tol) {
                lo = hi = mid;
                break;
            }
            (t > level ? lo : hi) = mid;
        }
        const double delta = 0.5 * (lo + hi);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = mu[i] + delta;
            x[i] = a[i] - std::exp(y[i]);
            const double z = (y[i] - mu[i]) / sigma[i];
            zsq[i] = z * z;
        }
    }

    std::vector<double> inv_sigma(n), prop_d(n), prop_c(n);
    for (std::size_t i = 0; i < n; ++i) {
        inv_sigma[i] = 1.0 / sigma[i];
        prop_d[i] = mu[i] * (1.0 - cfg.rho_prop);
        prop_c[i] = std::sqrt(1.0 - cfg.rho_prop * cfg.rho_prop) * sigma[i];
    }

    const std::uint64_t chain_seed = rng::derive_seed(seed, 0x6d636d63ULL);  // "mcmc"
    const std::size_t total_steps = burn + cfg.m * thin;
    OpCounts* tally = opts.tally;

    std::vector<double> sums(n, 0.0);
    const std::size_t n_batches = 10;
    std::vector<double> batch_sums(n * n_batches, 0.0);
    std::vector<std::size_t> batch_counts(n_batches, 0);
    std::vector<double> scalar_trace;
    scalar_trace.reserve(cfg.m);
    if (trace_out) trace_out->reserve(cfg.m);

    std::size_t k1 = 0, accepted = 0, domain_rejections = 0, retained = 0;
    std::size_t steps_since_accept = 0;
    double max_drift = 0.0;

    for (std::size_t s = 0; s < total_steps; ++s) {
        const double u_idx = rng::uniform01(chain_seed, 1, 3 * s);
        std::size_t k2 = static_cast<std::size_t>(u_idx * static_cast<double>(n - 1));
        if (k2 >= k1) ++k2;
        const double z = rng::normal(chain_seed, 1, 3 * s + 1);
        const double u_acc = rng::uniform01(chain_seed, 1, 3 * s + 2);

        const double y2_new = prop_d[k2] + cfg.rho_prop * y[k2] + prop_c[k2] * z;
        const double x2_new = a[k2] - std::exp(y2_new);
        const double x1_new = x[k1] + x[k2] - x2_new;
        const double gap1 = a[k1] - x1_new;
        bool accept = false;
        if (tally) {
            tally->exps += 1;
            tally->adds += 4;  // a-exp, pair update (2), gap
        }
        if (gap1 > 0.0) {
            const double y1_new = std::log(gap1);
            const double z1_new = (y1_new - mu[k1]) * inv_sigma[k1];
            double log_ratio = 0.5 * (zsq[k1] - z1_new * z1_new);
            if (tally) {
                tally->logs += 1;
                tally->adds += 2;
                tally->muls += 3;
            }
            if (cfg.ratio_mode == RatioMode::jacobian_corrected) {
                log_ratio += y[k1] - y1_new;
                if (tally) tally->adds += 2;
            }
            if (log_ratio >= 0.0) {
                accept = true;
            } else {
                accept = u_acc < std::exp(log_ratio);
                if (tally) tally->exps += 1;
            }
            if (tally) tally->cmps += 1;
            if (accept) {
                const double z2_new = (y2_new - mu[k2]) * inv_sigma[k2];
                y[k1] = y1_new;
                y[k2] = y2_new;
                x[k1] = x1_new;
                x[k2] = x2_new;
                zsq[k1] = z1_new * z1_new;
                zsq[k2] = z2_new * z2_new;
                if (tally) {
                    tally->adds += 1;
                    tally->muls += 3;
                }
            }
        } else {
            ++domain_rejections;
        }
        if (accept) {
            ++accepted;
            steps_since_accept = 0;
        } else if (++steps_since_accept >= 10000) {
            throw std::runtime_error("chain stuck: no acceptance over 10^4 steps");
        }
        k1 = k2;

        if (s >= burn) {
            const std::size_t t = s - burn + 1;
            if (t % thin == 0) {
                for (std::size_t i = 0; i < n; ++i) sums[i] += x[i];
                if (tally) tally->adds += n;
                const std::size_t bidx = std::min(retained * n_batches / cfg.m, n_batches - 1);
                for (std::size_t i = 0; i < n; ++i) batch_sums[bidx * n + i] += x[i];
                ++batch_counts[bidx];
                scalar_trace.push_back(x[0]);
                double tot = 0.0;
                for (std::size_t i = 0; i < n; ++i) tot += x[i];
                max_drift = std::max(max_drift, std::abs(tot - level) /
                                                    std::max(1.0, std::abs(cfg.var_level)));
                if (trace_out)
                    trace_out->push_back({s, accept, tot, x[k1], x[k2]});
                ++retained;
            }
        }
    }

    std::vector<double> allocs(n);
    for (std::size_t i = 0; i < n; ++i)
        allocs[i] = -sums[i] / static_cast<double>(cfg.m) + 0.0;

    std::map<std::string, double> diag;
    diag["m"] = static_cast<double>(cfg.m);
    diag["thin"] = static_cast<double>(thin);
    diag["burn_in"] = static_cast<double>(burn);
    diag["rho_prop"] = cfg.rho_prop;
    diag["acceptance_rate"] =
        static_cast<double>(accepted) / static_cast<double>(total_steps);
    diag["domain_rejections"] = static_cast<double>(domain_rejections);
    diag["level_drift_max_rel"] = max_drift;
    for (std::size_t lag = 1; lag <= 10 && lag + 1 < scalar_trace.size(); ++lag)
        diag["autocorr_lag" + std::to_string(lag)] = stats::autocorr(scalar_trace, lag);
    if (tally) {
        diag["ops_total"] = static_cast<double>(tally->total());
        diag["ops_per_step"] =
            static_cast<double>(tally->total()) / static_cast<double>(total_steps);
    }

    // Split stderr from batch means of the retained samples.
    detail::SplitEstimates split;
    if (cfg.m >= 2 * n_batches) {
        for (std::size_t bidx = 0; bidx < n_batches; ++bidx) {
            if (batch_counts[bidx] == 0) continue;
            std::vector<double> alloc(n);
            for (std::size_t i = 0; i < n; ++i)
                alloc[i] = -batch_sums[bidx * n + i] / static_cast<double>(batch_counts[bidx]);
            split.allocs.push_back(std::move(alloc));
            split.risks.push_back(cfg.var_level);
        }
    }
    auto errs = detail::combine_stderrs(spec, allocs, split, diag);
    return detail::finalize_report(spec, Method::mcmc, cfg.var_level, std::move(allocs),
                                   std::move(errs), std::move(diag));
}

}  // namespace capalloc
