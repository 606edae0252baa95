#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace capalloc {

// Absolute slack used whenever a cumulative probability is compared with a
// level; keeps atom boundaries stable under floating-point accumulation.
inline constexpr double kProbTol = 1e-9;

/// m joint realizations of an n-asset portfolio. `components` is row-major
/// (m rows, n columns) and already includes the portfolio weights; `totals`
/// are the row sums. `weights` are importance weights when present.
struct RealizationBatch {
    std::size_t n_assets = 0;
    std::vector<double> components;  // m * n_assets, row-major
    std::vector<double> totals;      // m
    std::vector<double> weights;     // empty, or m nonnegative values
    std::uint64_t seed = 0;

    std::size_t size() const { return totals.size(); }
    bool weighted() const { return !weights.empty(); }
    double component(std::size_t row, std::size_t asset) const {
        return components[row * n_assets + asset];
    }
    std::span<const double> row(std::size_t r) const {
        return {components.data() + r * n_assets, n_assets};
    }
};

/// Builds a batch from row-major components, computing totals as the
/// left-to-right row sums.
inline RealizationBatch make_batch(std::size_t n_assets, std::vector<double> components,
                                   std::vector<double> weights = {}, std::uint64_t seed = 0) {
    if (n_assets == 0) throw std::invalid_argument("batch needs at least one asset");
    if (components.size() % n_assets != 0)
        throw std::invalid_argument("component count is not a multiple of asset count");
    RealizationBatch b;
    b.n_assets = n_assets;
    b.seed = seed;
    b.components = std::move(components);
    const std::size_t m = b.components.size() / n_assets;
    b.totals.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n_assets; ++i) s += b.components[j * n_assets + i];
        b.totals[j] = s;
    }
    if (!weights.empty()) {
        if (weights.size() != m) throw std::invalid_argument("weight count != realization count");
        bool any_pos = false;
        for (double w : weights) {
            if (!(w >= 0.0)) throw std::invalid_argument("negative or NaN importance weight");
            if (w > 0.0) any_pos = true;
        }
        if (!any_pos) throw std::invalid_argument("importance weights are all zero");
        b.weights = std::move(weights);
    }
    return b;
}

/// Validates the stored totals against the row sums (1e-9 absolute,
/// scaled by the total's magnitude).
inline void validate_batch(const RealizationBatch& b) {
    for (std::size_t j = 0; j < b.size(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < b.n_assets; ++i) s += b.component(j, i);
        const double tol = 1e-9 * std::max(1.0, std::abs(b.totals[j]));
        if (std::abs(s - b.totals[j]) > tol)
            throw std::invalid_argument("batch totals do not match component row sums");
    }
}

/// 0-based index of the level-alpha order statistic used by the band
/// estimators: round((1-alpha)*m) half away from zero, clamped to [0, m).
inline std::size_t level_index_for(double alpha, std::size_t m) {
    if (m == 0) throw std::invalid_argument("empty batch");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
    const long long r = std::llround((1.0 - alpha) * static_cast<double>(m));
    return static_cast<std::size_t>(std::clamp<long long>(r, 0, static_cast<long long>(m) - 1));
}

/// Weighted analogue of level_index_for over weights already sorted by
/// ascending totals: the index whose exclusive cumulative weight is closest
/// to (1-alpha)*W, ties resolved toward the larger index. Reduces exactly to
/// level_index_for under uniform weights.
inline std::size_t weighted_level_index(std::span<const double> sorted_weights, double alpha) {
    if (sorted_weights.empty()) throw std::invalid_argument("empty batch");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
    double total = 0.0;
    for (double w : sorted_weights) total += w;
    if (!(total > 0.0)) throw std::invalid_argument("importance weights are all zero");
    const double target = (1.0 - alpha) * total;
    double cum_before = 0.0;
    std::size_t best = 0;
    double best_diff = std::abs(cum_before - target);
    for (std::size_t k = 0; k < sorted_weights.size(); ++k) {
        const double diff = std::abs(cum_before - target);
        if (diff <= best_diff) {
            best = k;
            best_diff = diff;
        }
        cum_before += sorted_weights[k];
    }
    return best;
}

/// Sorting permutation of a batch plus the band-center index for level alpha.
struct SortedBatch {
    const RealizationBatch* batch = nullptr;
    std::vector<std::size_t> order;  // ascending by totals, ties by original index
    std::size_t level_index = 0;

    double total_at(std::size_t rank) const { return batch->totals[order[rank]]; }
    double component_at(std::size_t rank, std::size_t asset) const {
        return batch->component(order[rank], asset);
    }
    std::size_t size() const { return order.size(); }
};

inline SortedBatch sort_batch(const RealizationBatch& batch, double alpha) {
    if (batch.size() == 0) throw std::invalid_argument("empty batch");
    if (batch.size() < 2) throw std::invalid_argument("batch too small to sort at a level");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
    SortedBatch s;
    s.batch = &batch;
    s.order.resize(batch.size());
    std::iota(s.order.begin(), s.order.end(), std::size_t{0});
    std::stable_sort(s.order.begin(), s.order.end(), [&](std::size_t a, std::size_t b) {
        return batch.totals[a] < batch.totals[b];
    });
    s.level_index = level_index_for(alpha, batch.size());
    return s;
}

namespace detail {

// Smallest 0-based sorted index whose inclusive cumulative count reaches
// alpha*m (with the shared probability slack).
inline std::size_t quantile_rank(double alpha, std::size_t m) {
    const double md = static_cast<double>(m);
    const double target = alpha * md - kProbTol * md;
    long long c = static_cast<long long>(std::ceil(target));
    c = std::clamp<long long>(c, 1, static_cast<long long>(m));
    return static_cast<std::size_t>(c - 1);
}

}  // namespace detail

/// Quantile of the totals at level alpha: the smallest order statistic z
/// with (fraction of totals <= z) >= alpha.
inline double empirical_quantile(std::span<const double> totals, double alpha) {
    if (totals.empty()) throw std::invalid_argument("empty batch");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
    std::vector<double> sorted(totals.begin(), totals.end());
    std::sort(sorted.begin(), sorted.end());
    return sorted[detail::quantile_rank(alpha, sorted.size())];
}

inline double empirical_quantile(const RealizationBatch& batch, double alpha) {
    return empirical_quantile(std::span<const double>(batch.totals), alpha);
}

struct WeightedQuantile {
    double value = 0.0;
    std::size_t sorted_index = 0;  // rank in the totals-ascending order
};

/// Weighted quantile at level alpha: sorts by totals and returns the first
/// sorted value whose cumulative normalized weight reaches alpha, together
/// with its sorted index. Uniform weights reduce to empirical_quantile.
inline WeightedQuantile weighted_quantile(const RealizationBatch& batch, double alpha) {
    if (batch.size() == 0) throw std::invalid_argument("empty batch");
    if (!batch.weighted()) throw std::invalid_argument("weighted_quantile requires weights");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must be in (0,1)");
    std::vector<std::size_t> order(batch.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return batch.totals[a] < batch.totals[b];
    });
    double total_weight = 0.0;
    for (double w : batch.weights) total_weight += w;
    if (!(total_weight > 0.0)) throw std::invalid_argument("importance weights are all zero");
    const double target = alpha * total_weight - kProbTol * total_weight;
    double cum = 0.0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        cum += batch.weights[order[k]];
        if (cum >= target) return {batch.totals[order[k]], k};
    }
    return {batch.totals[order.back()], order.size() - 1};
}

/// Keeps only realizations with d1 <= total <= d2 (the storage-saving
/// interval filter).
inline RealizationBatch band_filter(const RealizationBatch& batch, double d1, double d2) {
    if (d1 > d2) throw std::invalid_argument("band_filter: d1 > d2");
    RealizationBatch out;
    out.n_assets = batch.n_assets;
    out.seed = batch.seed;
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const double t = batch.totals[j];
        if (t < d1 || t > d2) continue;
        const auto r = batch.row(j);
        out.components.insert(out.components.end(), r.begin(), r.end());
        out.totals.push_back(t);
        if (batch.weighted()) out.weights.push_back(batch.weights[j]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV round trip: header asset_1,...,asset_n,total,weight. The weight field
// is left empty for unweighted batches.

inline void write_batch_csv(const RealizationBatch& batch, std::ostream& os) {
    for (std::size_t i = 0; i < batch.n_assets; ++i) os << "asset_" << (i + 1) << ',';
    os << "total,weight\n";
    os.precision(17);
    for (std::size_t j = 0; j < batch.size(); ++j) {
        for (std::size_t i = 0; i < batch.n_assets; ++i) os << batch.component(j, i) << ',';
        os << batch.totals[j] << ',';
        if (batch.weighted()) os << batch.weights[j];
        os << '\n';
    }
}

inline RealizationBatch read_batch_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw std::invalid_argument("batch CSV: missing header");
    std::size_t n_cols = std::count(line.begin(), line.end(), ',') + 1;
    if (n_cols < 3) throw std::invalid_argument("batch CSV: expected asset_*,total,weight header");
    const std::size_t n_assets = n_cols - 2;
    RealizationBatch b;
    b.n_assets = n_assets;
    bool any_weight = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.push_back("");
        if (cells.size() != n_cols)
            throw std::invalid_argument("batch CSV: wrong column count in row");
        for (std::size_t i = 0; i < n_assets; ++i) b.components.push_back(std::stod(cells[i]));
        b.totals.push_back(std::stod(cells[n_assets]));
        if (!cells[n_assets + 1].empty()) {
            b.weights.push_back(std::stod(cells[n_assets + 1]));
            any_weight = true;
        } else {
            b.weights.push_back(0.0);
        }
    }
    if (!any_weight) b.weights.clear();
    return b;
}

}  // namespace capalloc
