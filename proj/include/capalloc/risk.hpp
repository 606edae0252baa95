#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "capalloc/batch.hpp"
#include "capalloc/discrete.hpp"

namespace capalloc {

enum class MeasureKind { var, es_tail, es_integral, stddev_multiple };

/// Identifies a risk measure: VaR / ES at a level alpha, or a standard
/// deviation multiple.
struct RiskMeasureId {
    MeasureKind kind = MeasureKind::var;
    double param = 0.99;  // alpha for VaR/ES, multiplier for stddev

    static RiskMeasureId var_at(double alpha) { return validated({MeasureKind::var, alpha}); }
    static RiskMeasureId es_tail_at(double alpha) {
        return validated({MeasureKind::es_tail, alpha});
    }
    static RiskMeasureId es_integral_at(double alpha) {
        return validated({MeasureKind::es_integral, alpha});
    }
    static RiskMeasureId stddev_times(double c) {
        return validated({MeasureKind::stddev_multiple, c});
    }

    static RiskMeasureId validated(RiskMeasureId m) {
        if (m.kind == MeasureKind::stddev_multiple) {
            if (!(m.param > 0.0)) throw std::invalid_argument("stddev multiplier must be > 0");
        } else if (!(m.param > 0.0 && m.param < 1.0)) {
            throw std::invalid_argument("alpha must be in (0,1)");
        }
        return m;
    }
};

// ---------------------------------------------------------------------------
// Empirical measures on realization batches. Losses are negative totals;
// quantiles are taken on the lower tail of X and negated.

/// VaR estimate: minus the order statistic at the batch's band-center index
/// round((1-alpha)*m). Weighted batches use the weighted center index, which
/// reduces to the unweighted rule under uniform weights.
inline double var_empirical(const RealizationBatch& batch, double alpha) {
    if (batch.size() == 0) throw std::invalid_argument("empty batch");
    if (!batch.weighted()) {
        std::vector<double> sorted = batch.totals;
        std::sort(sorted.begin(), sorted.end());
        return -sorted[level_index_for(alpha, sorted.size())];
    }
    std::vector<std::size_t> order(batch.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return batch.totals[a] < batch.totals[b];
    });
    std::vector<double> w(batch.size());
    for (std::size_t k = 0; k < order.size(); ++k) w[k] = batch.weights[order[k]];
    return -batch.totals[order[weighted_level_index(w, alpha)]];
}

namespace detail {

// Lower-tail cut value: the (1-alpha)-quantile of the totals.
inline double tail_cut(const RealizationBatch& batch, double alpha) {
    if (batch.weighted()) return weighted_quantile(batch, 1.0 - alpha).value;
    return empirical_quantile(batch, 1.0 - alpha);
}

}  // namespace detail

/// ES estimate. Tail form: minus the (weighted) mean of totals at or below
/// the lower-tail quantile cut. Integral form: the exact integral of the
/// empirical quantile over the tail, i.e. the mean of the worst order
/// statistics with a fractional boundary weight so the tail mass is exactly
/// 1-alpha.
inline double es_empirical(const RealizationBatch& batch, double alpha,
                           EsForm form = EsForm::integral) {
    const std::size_t m = batch.size();
    if (m == 0) throw std::invalid_argument("empty batch");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
    if (form == EsForm::tail_conditional) {
        const double cut = detail::tail_cut(batch, alpha);
        double mass = 0.0, acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (batch.totals[j] <= cut) {
                const double w = batch.weighted() ? batch.weights[j] : 1.0;
                mass += w;
                acc += w * batch.totals[j];
            }
        }
        if (!(mass > 0.0)) throw std::runtime_error("empty tail event");
        return -acc / mass;
    }
    // Integral form.
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return batch.totals[a] < batch.totals[b];
    });
    double total_weight = 0.0;
    if (batch.weighted())
        for (double w : batch.weights) total_weight += w;
    else
        total_weight = static_cast<double>(m);
    const double tail_mass = (1.0 - alpha) * total_weight;
    double remaining = tail_mass, acc = 0.0;
    for (std::size_t k = 0; k < m && remaining > 0.0; ++k) {
        const double w = batch.weighted() ? batch.weights[order[k]] : 1.0;
        const double take = std::min(w, remaining);
        acc += take * batch.totals[order[k]];
        remaining -= take;
    }
    return -acc / tail_mass;
}

/// c * (population) standard deviation of the totals.
inline double stddev_multiple_empirical(const RealizationBatch& batch, double c) {
    const std::size_t m = batch.size();
    if (m == 0) throw std::invalid_argument("empty batch");
    double mean = 0.0;
    for (double t : batch.totals) mean += t;
    mean /= static_cast<double>(m);
    double ss = 0.0;
    for (double t : batch.totals) ss += (t - mean) * (t - mean);
    return c * std::sqrt(ss / static_cast<double>(m));
}

inline double risk_empirical(const RiskMeasureId& measure, const RealizationBatch& batch) {
    switch (measure.kind) {
        case MeasureKind::var: return var_empirical(batch, measure.param);
        case MeasureKind::es_tail:
            return es_empirical(batch, measure.param, EsForm::tail_conditional);
        case MeasureKind::es_integral: return es_empirical(batch, measure.param, EsForm::integral);
        case MeasureKind::stddev_multiple: return stddev_multiple_empirical(batch, measure.param);
    }
    throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------
// Exact measure evaluation on discrete laws (used by the axiom checkers and
// the oracle-backed engines).

inline double risk_exact(const RiskMeasureId& measure, const DiscreteJointDistribution& d,
                         const WeightVector& u) {
    switch (measure.kind) {
        case MeasureKind::var: return var_exact(d, u, measure.param);
        case MeasureKind::es_tail: return es_exact(d, u, measure.param, EsForm::tail_conditional);
        case MeasureKind::es_integral: return es_exact(d, u, measure.param, EsForm::integral);
        case MeasureKind::stddev_multiple: return measure.param * sd_weighted_total(d, u);
    }
    throw std::logic_error("unreachable");
}

inline double risk_exact(const RiskMeasureId& measure, const DiscreteJointDistribution& d) {
    return risk_exact(measure, d, unit_weights(d.n_assets));
}

// ---------------------------------------------------------------------------
// Axiom checkers: each evaluates the defining (in)equality exactly on the
// supplied discrete evidence and reports the violating instance if any.

enum class Axiom { monotonous, subadditive, positive_homogeneous, translation_invariant,
                   law_invariant };

struct AxiomCheck {
    bool pass = true;
    double lhs = 0.0;
    double rhs = 0.0;
    std::string detail;
};

/// Evidence for one axiom check: a joint law whose first two assets play the
/// roles of X and Y where a pair is needed, plus a scalar h for the
/// homogeneity / translation axioms.
struct AxiomEvidence {
    DiscreteJointDistribution joint;
    double h = 2.0;
};

inline AxiomCheck check_axiom(const RiskMeasureId& measure, Axiom axiom,
                              const AxiomEvidence& evidence) {
    const auto& d = evidence.joint;
    const double tol = 1e-9;
    auto rho_of_law = [&](DiscreteLaw law) {
        auto one = make_discrete(1, std::move(law.values), std::move(law.probs));
        return risk_exact(measure, one);
    };
    AxiomCheck out;
    std::ostringstream msg;
    switch (axiom) {
        case Axiom::monotonous: {
            if (d.n_assets < 2)
                throw std::invalid_argument("monotonicity evidence needs a pair of assets");
            for (std::size_t a = 0; a < d.atom_count(); ++a)
                if (d.value(a, 0) > d.value(a, 1))
                    throw std::invalid_argument("monotonicity evidence requires X <= Y atomwise");
            out.lhs = rho_of_law(marginal_law(d, 0));
            out.rhs = rho_of_law(marginal_law(d, 1));
            out.pass = out.lhs >= out.rhs - tol;
            if (!out.pass)
                msg << "X <= Y but rho(X)=" << out.lhs << " < rho(Y)=" << out.rhs;
            break;
        }
        case Axiom::subadditive: {
            if (d.n_assets < 2)
                throw std::invalid_argument("subadditivity evidence needs a pair of assets");
            WeightVector both(d.n_assets, 0.0);
            both[0] = 1.0;
            both[1] = 1.0;
            out.lhs = risk_exact(measure, d, both);
            out.rhs = rho_of_law(marginal_law(d, 0)) + rho_of_law(marginal_law(d, 1));
            out.pass = out.lhs <= out.rhs + tol;
            if (!out.pass)
                msg << "rho(X+Y)=" << out.lhs << " > rho(X)+rho(Y)=" << out.rhs;
            break;
        }
        case Axiom::positive_homogeneous: {
            if (!(evidence.h > 0.0))
                throw std::invalid_argument("homogeneity evidence needs h > 0");
            auto scaled = sum_distribution(d, unit_weights(d.n_assets));
            for (double& v : scaled.values) v *= evidence.h;
            out.lhs = risk_exact(measure, scaled);
            out.rhs = evidence.h * risk_exact(measure, sum_distribution(d, unit_weights(d.n_assets)));
            out.pass = std::abs(out.lhs - out.rhs) <= tol * std::max({1.0, std::abs(out.lhs),
                                                                      std::abs(out.rhs)});
            if (!out.pass)
                msg << "rho(" << evidence.h << "X)=" << out.lhs << " != " << evidence.h
                    << "*rho(X)=" << out.rhs;
            break;
        }
        case Axiom::translation_invariant: {
            auto shifted = sum_distribution(d, unit_weights(d.n_assets));
            const double base = risk_exact(measure, shifted);
            for (double& v : shifted.values) v += evidence.h;
            out.lhs = risk_exact(measure, shifted);
            out.rhs = base - evidence.h;
            out.pass = std::abs(out.lhs - out.rhs) <= tol * std::max({1.0, std::abs(out.lhs),
                                                                      std::abs(out.rhs)});
            if (!out.pass)
                msg << "rho(X+h)=" << out.lhs << " != rho(X)-h=" << out.rhs;
            break;
        }
        case Axiom::law_invariant: {
            if (d.n_assets < 2)
                throw std::invalid_argument("law invariance evidence needs a pair of assets");
            if (!same_law(marginal_law(d, 0), marginal_law(d, 1)))
                throw std::invalid_argument("law invariance evidence requires equal laws");
            out.lhs = rho_of_law(marginal_law(d, 0));
            out.rhs = rho_of_law(marginal_law(d, 1));
            out.pass = std::abs(out.lhs - out.rhs) <= tol * std::max({1.0, std::abs(out.lhs),
                                                                      std::abs(out.rhs)});
            if (!out.pass)
                msg << "same law but rho(X)=" << out.lhs << " != rho(Y)=" << out.rhs;
            break;
        }
    }
    out.detail = msg.str();
    return out;
}

inline std::string axiom_name(Axiom a) {
    switch (a) {
        case Axiom::monotonous: return "monotonous";
        case Axiom::subadditive: return "subadditive";
        case Axiom::positive_homogeneous: return "positive_homogeneous";
        case Axiom::translation_invariant: return "translation_invariant";
        case Axiom::law_invariant: return "law_invariant";
    }
    return "?";
}

}  // namespace capalloc
