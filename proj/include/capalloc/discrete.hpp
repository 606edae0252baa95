#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <istream>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "capalloc/batch.hpp"

namespace capalloc {

using WeightVector = std::vector<double>;

inline WeightVector unit_weights(std::size_t n) { return WeightVector(n, 1.0); }

/// One-dimensional discrete law (values with probabilities).
struct DiscreteLaw {
    std::vector<double> values;
    std::vector<double> probs;
};

/// Finite joint law of n asset values: a list of (value vector, probability)
/// atoms. The exact-computation substrate for the oracle.
struct DiscreteJointDistribution {
    std::size_t n_assets = 0;
    std::vector<double> values;  // atom-major, n_assets per atom
    std::vector<double> probs;   // one per atom

    std::size_t atom_count() const { return probs.size(); }
    double value(std::size_t atom, std::size_t asset) const {
        return values[atom * n_assets + asset];
    }
    std::span<const double> atom(std::size_t a) const {
        return {values.data() + a * n_assets, n_assets};
    }
};

inline DiscreteJointDistribution make_discrete(std::size_t n_assets, std::vector<double> values,
                                               std::vector<double> probs) {
    if (n_assets == 0) throw std::invalid_argument("distribution needs at least one asset");
    if (values.size() != probs.size() * n_assets)
        throw std::invalid_argument("atom value vectors must all have length n");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw std::invalid_argument("negative or NaN atom probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw std::invalid_argument("atom probabilities must sum to 1 within 1e-12");
    DiscreteJointDistribution d;
    d.n_assets = n_assets;
    d.values = std::move(values);
    d.probs = std::move(probs);
    return d;
}

/// Full independent product of per-asset marginals.
inline DiscreteJointDistribution product_distribution(const std::vector<DiscreteLaw>& marginals) {
    if (marginals.empty()) throw std::invalid_argument("no marginals");
    std::size_t count = 1;
    constexpr std::size_t kMaxAtoms = 10'000'000;
    for (const auto& m : marginals) {
        if (m.values.size() != m.probs.size() || m.values.empty())
            throw std::invalid_argument("malformed marginal");
        double s = std::accumulate(m.probs.begin(), m.probs.end(), 0.0);
        if (std::abs(s - 1.0) > 1e-12)
            throw std::invalid_argument("marginal probabilities must sum to 1");
        if (count > kMaxAtoms / m.values.size())
            throw std::invalid_argument("product distribution exceeds 10^7 atoms");
        count *= m.values.size();
    }
    const std::size_t n = marginals.size();
    std::vector<double> values;
    std::vector<double> probs;
    values.reserve(count * n);
    probs.reserve(count);
    std::vector<std::size_t> idx(n, 0);
    for (std::size_t a = 0; a < count; ++a) {
        double p = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            values.push_back(marginals[i].values[idx[i]]);
            p *= marginals[i].probs[idx[i]];
        }
        probs.push_back(p);
        for (std::size_t i = n; i-- > 0;) {
            if (++idx[i] < marginals[i].values.size()) break;
            idx[i] = 0;
        }
    }
    return make_discrete(n, std::move(values), std::move(probs));
}

namespace detail {

inline void check_weights(const DiscreteJointDistribution& d, const WeightVector& u) {
    if (u.size() != d.n_assets) throw std::invalid_argument("weight vector length != asset count");
    for (double w : u)
        if (!std::isfinite(w)) throw std::invalid_argument("non-finite portfolio weight");
}

// Per-atom weighted totals, left-to-right accumulation.
inline std::vector<double> weighted_totals(const DiscreteJointDistribution& d,
                                           const WeightVector& u) {
    check_weights(d, u);
    std::vector<double> t(d.atom_count());
    for (std::size_t a = 0; a < d.atom_count(); ++a) {
        double s = 0.0;
        for (std::size_t i = 0; i < d.n_assets; ++i) s += u[i] * d.value(a, i);
        t[a] = s;
    }
    return t;
}

// Atoms sorted ascending by a key, returned as (key, prob) pairs.
inline std::vector<std::pair<double, double>> sorted_atoms(std::span<const double> keys,
                                                           std::span<const double> probs) {
    std::vector<std::pair<double, double>> a(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) a[i] = {keys[i], probs[i]};
    std::sort(a.begin(), a.end());
    return a;
}

// inf{ z : P(K <= z) >= alpha } for the discrete law given as (key, prob).
inline double discrete_quantile(std::vector<std::pair<double, double>> atoms, double alpha) {
    double cum = 0.0;
    for (const auto& [k, p] : atoms) {
        cum += p;
        if (cum >= alpha - kProbTol) return k;
    }
    return atoms.back().first;
}

}  // namespace detail

/// Exact VaR of the weighted portfolio sum: the alpha-quantile of the loss
/// -sum(u_i X_i). This is the weight-perturbed risk f(u) for the VaR measure.
inline double var_exact(const DiscreteJointDistribution& d, const WeightVector& u, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
    const auto totals = detail::weighted_totals(d, u);
    std::vector<double> losses(totals.size());
    for (std::size_t i = 0; i < totals.size(); ++i) losses[i] = -totals[i];
    return detail::discrete_quantile(detail::sorted_atoms(losses, d.probs), alpha);
}

enum class EsForm { tail_conditional, integral };

/// Exact Expected Shortfall of the weighted sum. The tail-conditional form
/// is -E[X | X <= -VaR]; the integral form averages VaR_tau over
/// tau in [alpha, 1]. The two differ on atoms; only the integral form is
/// coherent on discrete laws.
inline double es_exact(const DiscreteJointDistribution& d, const WeightVector& u, double alpha,
                       EsForm form = EsForm::integral) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
    const auto totals = detail::weighted_totals(d, u);
    if (form == EsForm::tail_conditional) {
        const double v = var_exact(d, u, alpha);
        const double cutoff = -v + 1e-9;
        double mass = 0.0, acc = 0.0;
        for (std::size_t a = 0; a < totals.size(); ++a) {
            if (totals[a] <= cutoff) {
                mass += d.probs[a];
                acc += d.probs[a] * totals[a];
            }
        }
        if (!(mass > 0.0)) throw std::runtime_error("empty tail event");
        return -acc / mass;
    }
    // Integral form: piecewise-constant integral of the lower-tail quantile
    // over s in (0, 1-alpha], negated and divided by 1-alpha.
    const auto atoms = detail::sorted_atoms(totals, d.probs);
    const double s_max = 1.0 - alpha;
    double cum_prev = 0.0, integral = 0.0;
    for (const auto& [t, p] : atoms) {
        const double cum = cum_prev + p;
        const double lo = std::min(cum_prev, s_max);
        const double hi = std::min(cum, s_max);
        if (hi > lo) integral += t * (hi - lo);
        cum_prev = cum;
        if (cum_prev >= s_max) break;
    }
    return -integral / s_max;
}

/// Exact VaR Euler allocation: per asset, -E[X_i | X = -VaR(X)] where the
/// conditioning event matches atom totals within 1e-9 absolute.
inline std::vector<double> euler_alloc_var_exact(const DiscreteJointDistribution& d, double alpha) {
    const auto u = unit_weights(d.n_assets);
    const double v = var_exact(d, u, alpha);
    const auto totals = detail::weighted_totals(d, u);
    double mass = 0.0;
    std::vector<double> acc(d.n_assets, 0.0);
    for (std::size_t a = 0; a < totals.size(); ++a) {
        if (std::abs(totals[a] + v) <= 1e-9) {
            mass += d.probs[a];
            for (std::size_t i = 0; i < d.n_assets; ++i) acc[i] += d.probs[a] * d.value(a, i);
        }
    }
    if (!(mass > 0.0)) throw std::runtime_error("no atom at VaR level");
    for (double& x : acc) x = -x / mass;
    return acc;
}

/// Exact ES Euler allocation: per asset, -E[X_i | X <= -VaR(X)].
inline std::vector<double> euler_alloc_es_exact(const DiscreteJointDistribution& d, double alpha) {
    const auto u = unit_weights(d.n_assets);
    const double v = var_exact(d, u, alpha);
    const auto totals = detail::weighted_totals(d, u);
    const double cutoff = -v + 1e-9;
    double mass = 0.0;
    std::vector<double> acc(d.n_assets, 0.0);
    for (std::size_t a = 0; a < totals.size(); ++a) {
        if (totals[a] <= cutoff) {
            mass += d.probs[a];
            for (std::size_t i = 0; i < d.n_assets; ++i) acc[i] += d.probs[a] * d.value(a, i);
        }
    }
    if (!(mass > 0.0)) throw std::runtime_error("empty tail event");
    for (double& x : acc) x = -x / mass;
    return acc;
}

/// Exact Euler allocation of the integral-form ES: the tail conditional
/// expectation where the boundary atom carries a fractional weight so the
/// tail mass is exactly 1-alpha. Sums exactly to es_exact(integral).
inline std::vector<double> euler_alloc_es_integral_exact(const DiscreteJointDistribution& d,
                                                         double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
    const auto totals = detail::weighted_totals(d, unit_weights(d.n_assets));
    std::vector<std::size_t> order(totals.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return totals[a] < totals[b]; });
    const double tail_mass = 1.0 - alpha;
    double remaining = tail_mass;
    std::vector<double> acc(d.n_assets, 0.0);
    for (std::size_t k = 0; k < order.size() && remaining > 0.0; ++k) {
        const std::size_t a = order[k];
        const double take = std::min(d.probs[a], remaining);
        for (std::size_t i = 0; i < d.n_assets; ++i) acc[i] += take * d.value(a, i);
        remaining -= take;
    }
    for (double& x : acc) x = -x / tail_mass;
    return acc;
}

/// Euler allocation of an arbitrary weight-to-risk map by central finite
/// differences at u: [f(u + h e_i) - f(u - h e_i)] / (2h) per asset.
inline std::vector<double> fd_alloc(const std::function<double(const WeightVector&)>& risk_of_weights,
                                    const WeightVector& u, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("fd_alloc: step size must be positive");
    std::vector<double> out(u.size());
    WeightVector bumped = u;
    for (std::size_t i = 0; i < u.size(); ++i) {
        bumped[i] = u[i] + h;
        const double up = risk_of_weights(bumped);
        bumped[i] = u[i] - h;
        const double dn = risk_of_weights(bumped);
        bumped[i] = u[i];
        if (!std::isfinite(up) || !std::isfinite(dn))
            throw std::runtime_error("fd_alloc: risk function returned a non-finite value");
        out[i] = (up - dn) / (2.0 * h);
    }
    return out;
}

/// Default finite-difference step: 1e-3 scaled by the risk magnitude at u.
inline double fd_default_step(double risk_at_u) { return 1e-3 * std::max(1.0, std::abs(risk_at_u)); }

// ---------------------------------------------------------------------------
// Derived laws and moments.

/// Marginal law of one asset (atoms are not merged).
inline DiscreteLaw marginal_law(const DiscreteJointDistribution& d, std::size_t asset) {
    if (asset >= d.n_assets) throw std::invalid_argument("asset index out of range");
    DiscreteLaw law;
    law.values.reserve(d.atom_count());
    law.probs = d.probs;
    for (std::size_t a = 0; a < d.atom_count(); ++a) law.values.push_back(d.value(a, asset));
    return law;
}

/// One-asset joint distribution carrying the weighted total of `d`.
inline DiscreteJointDistribution sum_distribution(const DiscreteJointDistribution& d,
                                                  const WeightVector& u) {
    auto totals = detail::weighted_totals(d, u);
    return make_discrete(1, std::move(totals), d.probs);
}

inline double mean_weighted_total(const DiscreteJointDistribution& d, const WeightVector& u) {
    const auto totals = detail::weighted_totals(d, u);
    double m = 0.0;
    for (std::size_t a = 0; a < totals.size(); ++a) m += d.probs[a] * totals[a];
    return m;
}

inline double sd_weighted_total(const DiscreteJointDistribution& d, const WeightVector& u) {
    const auto totals = detail::weighted_totals(d, u);
    double m = 0.0, s = 0.0;
    for (std::size_t a = 0; a < totals.size(); ++a) m += d.probs[a] * totals[a];
    for (std::size_t a = 0; a < totals.size(); ++a)
        s += d.probs[a] * (totals[a] - m) * (totals[a] - m);
    return std::sqrt(s);
}

/// True when two one-dimensional laws assign the same probability to every
/// value (atoms merged, probabilities compared within 1e-12).
inline bool same_law(const DiscreteLaw& a, const DiscreteLaw& b) {
    auto merged = [](const DiscreteLaw& l) {
        std::vector<std::pair<double, double>> atoms(l.values.size());
        for (std::size_t i = 0; i < l.values.size(); ++i) atoms[i] = {l.values[i], l.probs[i]};
        std::sort(atoms.begin(), atoms.end());
        std::vector<std::pair<double, double>> out;
        for (const auto& [v, p] : atoms) {
            if (!out.empty() && out.back().first == v)
                out.back().second += p;
            else
                out.emplace_back(v, p);
        }
        return out;
    };
    const auto ma = merged(a), mb = merged(b);
    if (ma.size() != mb.size()) return false;
    for (std::size_t i = 0; i < ma.size(); ++i) {
        if (ma[i].first != mb[i].first) return false;
        if (std::abs(ma[i].second - mb[i].second) > 1e-12) return false;
    }
    return true;
}

/// Loads a joint distribution from CSV with columns x_1,...,x_n,prob.
inline DiscreteJointDistribution read_distribution_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw std::invalid_argument("distribution CSV: missing header");
    const std::size_t n_cols = std::count(line.begin(), line.end(), ',') + 1;
    if (n_cols < 2) throw std::invalid_argument("distribution CSV: expected x_*,prob header");
    const std::size_t n = n_cols - 1;
    std::vector<double> values, probs;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(row, cell, ',')) {
            if (col < n)
                values.push_back(std::stod(cell));
            else
                probs.push_back(std::stod(cell));
            ++col;
        }
        if (col != n_cols) throw std::invalid_argument("distribution CSV: wrong column count");
    }
    return make_discrete(n, std::move(values), std::move(probs));
}

}  // namespace capalloc
