#ifndef ENGAGE_SEMANTIC_BIAS_HPP
#define ENGAGE_SEMANTIC_BIAS_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "common.hpp"
#include "stats.hpp"
#include "topics.hpp"

/**
 * @file semantic_bias.hpp
 *
 * @brief Within-topic comparison of the two cohorts: a Fisher discriminant axis, kernel density
 * estimates along it, highest-density regions and the overlap of those regions.
 */

namespace engage {

// ---------------------------------------------------------------------------------------------
// Fisher discriminant

struct LdaResult {
    std::vector<double> direction;  // unit length
    double criterion = 0;           // Fisher criterion under the regularised scatter
    bool low_separation = false;
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMatrix> as_eigen(const Matrix& m) {
    return {m.values.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols)};
}

struct ScatterParts {
    Eigen::VectorXd mean_e;
    Eigen::VectorXd mean_l;
    Eigen::MatrixXd centred;  // rows of both groups minus their group mean
    double trace = 0;
};

inline ScatterParts scatter_parts(const Matrix& xe, const Matrix& xl) {
    ScatterParts s;
    const auto e = as_eigen(xe);
    const auto l = as_eigen(xl);
    s.mean_e = e.colwise().mean().transpose();
    s.mean_l = l.colwise().mean().transpose();
    s.centred.resize(e.rows() + l.rows(), e.cols());
    s.centred.topRows(e.rows()) = e.rowwise() - s.mean_e.transpose();
    s.centred.bottomRows(l.rows()) = l.rowwise() - s.mean_l.transpose();
    s.trace = s.centred.squaredNorm();
    return s;
}

}  // namespace detail

/**
 * Two-class Fisher criterion (w . dmu)^2 / (w' (S_W + lambda I) w) with
 * lambda = ridge * trace(S_W) / d and dmu = mean(L) - mean(E).
 */
inline double fisher_criterion(const Matrix& xe, const Matrix& xl, std::span<const double> w, double ridge = 1e-3) {
    const auto s = detail::scatter_parts(xe, xl);
    const Eigen::Map<const Eigen::VectorXd> v(w.data(), static_cast<Eigen::Index>(w.size()));
    const double lambda = ridge * s.trace / static_cast<double>(xe.cols);
    const double between = v.dot(s.mean_l - s.mean_e);
    const double within = (s.centred * v).squaredNorm() + lambda * v.squaredNorm();
    if (within == 0) {
        return between == 0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return between * between / within;
}

/**
 * Unit direction maximising the regularised Fisher criterion:
 * w proportional to (S_W + lambda I)^-1 (mean(L) - mean(E)), oriented so L projects at least as
 * high as E on average. When there are fewer rows than dimensions the inverse is applied through
 * the Woodbury identity on the n x n Gram matrix.
 */
inline LdaResult lda_direction(const Matrix& xe, const Matrix& xl, double ridge = 1e-3) {
    if (xe.rows < 2 || xl.rows < 2) {
        throw Error("lda_direction: each group needs at least 2 rows");
    }
    if (xe.cols != xl.cols || xe.cols == 0) {
        throw Error("lda_direction: groups differ in dimension");
    }
    if (!(ridge >= 0)) {
        throw Error("lda_direction: ridge must be non-negative");
    }
    const auto s = detail::scatter_parts(xe, xl);
    const auto d = static_cast<Eigen::Index>(xe.cols);
    const auto n = s.centred.rows();
    const Eigen::VectorXd delta = s.mean_l - s.mean_e;
    const double scale = std::max(s.mean_e.cwiseAbs().maxCoeff(), s.mean_l.cwiseAbs().maxCoeff()) +
                         std::sqrt(s.trace / static_cast<double>(n));
    const bool no_shift = delta.norm() <= 1e-12 * scale;

    Eigen::VectorXd w;
    if (s.trace == 0) {
        if (delta.norm() == 0) {
            throw Error("lda_direction: identical group means and zero scatter");
        }
        w = delta;
    } else if (no_shift) {
        // Means coincide: fall back to the leading within-class axis.
        if (n < d) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s.centred * s.centred.transpose());
            w = s.centred.transpose() * eig.eigenvectors().col(n - 1);
        } else {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s.centred.transpose() * s.centred);
            w = eig.eigenvectors().col(d - 1);
        }
    } else {
        const double lambda = ridge * s.trace / static_cast<double>(d);
        if (n < d && lambda > 0) {
            Eigen::MatrixXd gram = s.centred * s.centred.transpose();
            gram.diagonal().array() += lambda;
            const Eigen::VectorXd inner = gram.ldlt().solve(s.centred * delta);
            w = (delta - s.centred.transpose() * inner) / lambda;
        } else {
            Eigen::MatrixXd sw = s.centred.transpose() * s.centred;
            sw.diagonal().array() += lambda;
            w = sw.ldlt().solve(delta);
            if (!w.allFinite() || w.norm() == 0) {
                w = sw.completeOrthogonalDecomposition().solve(delta);
            }
        }
    }
    w.normalize();
    const double along = w.dot(delta);
    Eigen::Index arg = 0;
    w.cwiseAbs().maxCoeff(&arg);
    if (along < 0 || (along == 0 && w[arg] < 0)) {
        w = -w;
    }

    LdaResult out;
    out.direction.assign(w.data(), w.data() + w.size());
    out.criterion = no_shift ? 0.0 : fisher_criterion(xe, xl, out.direction, ridge);
    out.low_separation = no_shift || out.criterion < 1e-9;
    return out;
}

/// Dot product of every row of `x` with `w`.
inline std::vector<double> project(const Matrix& x, std::span<const double> w) {
    std::vector<double> out(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const auto r = x.row(i);
        double s = 0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            s += r[k] * w[k];
        }
        out[i] = s;
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Kernel density estimation

namespace detail {

inline constexpr double log_sqrt_2pi = 0.91893853320467274178;

inline double log_sum_exp(std::span<const double> v) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) {
        m = std::max(m, x);
    }
    if (!std::isfinite(m)) {
        return m;
    }
    double s = 0;
    for (double x : v) {
        s += std::exp(x - m);
    }
    return m + std::log(s);
}

}  // namespace detail

/// `count` log-spaced bandwidths from 0.01 to 2 times the sample standard deviation (1 if constant).
inline std::vector<double> default_bandwidth_grid(std::span<const double> samples, std::size_t count = 20) {
    if (samples.size() < 2 || count == 0) {
        throw Error("default_bandwidth_grid: need 2 samples and a positive count");
    }
    double sigma = std::sqrt(sample_variance(samples));
    if (!(sigma > 0)) {
        sigma = 1.0;
    }
    std::vector<double> grid(count);
    const double lo = std::log(0.01 * sigma), hi = std::log(2.0 * sigma);
    for (std::size_t i = 0; i < count; ++i) {
        grid[i] = count == 1 ? std::exp(lo) : std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
    }
    return grid;
}

/**
 * Mean held-out log likelihood of a Gaussian KDE with bandwidth `h`, with sample i held out in
 * fold i mod `folds`.
 */
inline double kde_cv_log_likelihood(std::span<const double> samples, double h, std::size_t folds) {
    const std::size_t n = samples.size();
    double total = 0;
    std::vector<double> terms;
    for (std::size_t f = 0; f < folds; ++f) {
        const std::size_t held = n / folds + (f < n % folds ? 1 : 0);
        const double train = static_cast<double>(n - held);
        const double log_norm = std::log(train * h) + detail::log_sqrt_2pi;
        for (std::size_t i = f; i < n; i += folds) {
            terms.clear();
            for (std::size_t j = 0; j < n; ++j) {
                if (j % folds != f) {
                    const double z = (samples[i] - samples[j]) / h;
                    terms.push_back(-0.5 * z * z);
                }
            }
            total += detail::log_sum_exp(terms) - log_norm;
        }
    }
    return total / static_cast<double>(n);
}

/**
 * Bandwidth from `grid` with the highest cross-validated log likelihood; the first (in grid
 * order) wins ties.
 */
inline double kde_bandwidth_cv(std::span<const double> samples, std::span<const double> grid, std::size_t folds = 5) {
    if (folds < 2 || samples.size() < folds) {
        throw Error("kde_bandwidth_cv: need at least `folds` samples and folds >= 2");
    }
    if (grid.empty()) {
        throw Error("kde_bandwidth_cv: empty bandwidth grid");
    }
    double best = 0;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (double h : grid) {
        if (!(h > 0) || !std::isfinite(h)) {
            throw Error("kde_bandwidth_cv: bandwidths must be positive and finite");
        }
        const double ll = kde_cv_log_likelihood(samples, h, folds);
        if (ll > best_ll) {
            best_ll = ll;
            best = h;
        }
    }
    if (!std::isfinite(best_ll)) {
        throw Error("kde_bandwidth_cv: every bandwidth has zero held-out likelihood");
    }
    return best;
}

/**
 * Density evaluated on a uniform grid. Between grid points the density is taken as linear, so
 * integrals over the table are trapezoidal sums.
 */
struct DensityTable {
    double lo = 0;
    double step = 0;
    std::vector<double> density;

    double x(std::size_t i) const { return lo + step * static_cast<double>(i); }
    double hi() const { return x(density.size() - 1); }

    double integral() const {
        double s = 0;
        for (std::size_t i = 0; i + 1 < density.size(); ++i) {
            s += 0.5 * (density[i] + density[i + 1]);
        }
        return s * step;
    }

    /// Linearly interpolated density at `v` (0 outside the table).
    double at(double v) const {
        if (v < lo || v > hi()) {
            return 0.0;
        }
        const double pos = (v - lo) / step;
        const auto i = std::min(static_cast<std::size_t>(pos), density.size() - 2);
        const double t = pos - static_cast<double>(i);
        return density[i] + t * (density[i + 1] - density[i]);
    }
};

/**
 * Gaussian KDE over [min - 4h, max + 4h] on `grid_points` points, rescaled so the trapezoidal
 * integral is 1.
 */
inline DensityTable kde_density(std::span<const double> samples, double bandwidth, std::size_t grid_points = 2048) {
    if (samples.empty()) {
        throw Error("kde_density: no samples");
    }
    if (!(bandwidth > 0) || !std::isfinite(bandwidth)) {
        throw Error("kde_density: bandwidth must be positive");
    }
    if (grid_points < 3) {
        throw Error("kde_density: need at least 3 grid points");
    }
    const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
    DensityTable t;
    t.lo = *mn - 4 * bandwidth;
    t.step = (*mx + 4 * bandwidth - t.lo) / static_cast<double>(grid_points - 1);
    t.density.assign(grid_points, 0.0);
    const double norm = 1.0 / (static_cast<double>(samples.size()) * bandwidth) * std::exp(-detail::log_sqrt_2pi);
    for (std::size_t i = 0; i < grid_points; ++i) {
        const double x = t.x(i);
        double s = 0;
        for (double v : samples) {
            const double z = (x - v) / bandwidth;
            s += std::exp(-0.5 * z * z);
        }
        t.density[i] = s * norm;
    }
    const double total = t.integral();
    for (auto& d : t.density) {
        d /= total;
    }
    return t;
}

// ---------------------------------------------------------------------------------------------
// Interval sets

struct Interval {
    double lo = 0;
    double hi = 0;

    double length() const { return hi - lo; }
    bool operator==(const Interval&) const = default;
};

/**
 * Disjoint closed intervals in ascending order. Intervals closer than the merge epsilon
 * (touching, by default) are joined on construction.
 */
class IntervalSet {
public:
    IntervalSet() = default;

    explicit IntervalSet(std::vector<Interval> parts, double merge_epsilon = 0.0) {
        for (const auto& p : parts) {
            if (!(p.lo <= p.hi) || !std::isfinite(p.lo) || !std::isfinite(p.hi)) {
                throw Error("IntervalSet: malformed interval");
            }
        }
        std::sort(parts.begin(), parts.end(), [](const Interval& a, const Interval& b) {
            return a.lo < b.lo || (a.lo == b.lo && a.hi < b.hi);
        });
        for (const auto& p : parts) {
            if (!parts_.empty() && p.lo - parts_.back().hi <= merge_epsilon) {
                parts_.back().hi = std::max(parts_.back().hi, p.hi);
            } else {
                parts_.push_back(p);
            }
        }
    }

    const std::vector<Interval>& intervals() const { return parts_; }
    std::size_t size() const { return parts_.size(); }
    bool empty() const { return parts_.empty(); }

    double total_length() const {
        double s = 0;
        for (const auto& p : parts_) {
            s += p.length();
        }
        return s;
    }

    /// Trapezoidal probability mass of `table` inside the set.
    double mass_within(const DensityTable& table) const {
        double s = 0;
        for (const auto& p : parts_) {
            s += segment_mass(table, p.lo, p.hi);
        }
        return s;
    }

    /// True when every point of `other` lies in this set.
    bool contains(const IntervalSet& other) const {
        std::size_t j = 0;
        for (const auto& p : other.parts_) {
            while (j < parts_.size() && parts_[j].hi < p.hi) {
                ++j;
            }
            if (j == parts_.size() || parts_[j].lo > p.lo) {
                return false;
            }
        }
        return true;
    }

    bool operator==(const IntervalSet&) const = default;

    /// Integral of the piecewise-linear density over [a, b].
    static double segment_mass(const DensityTable& t, double a, double b) {
        a = std::max(a, t.lo);
        b = std::min(b, t.hi());
        if (!(a < b)) {
            return 0.0;
        }
        const std::size_t last = t.density.size() - 2;
        auto cell = [&](double v) { return std::min(static_cast<std::size_t>((v - t.lo) / t.step), last); };
        const std::size_t ia = cell(a), ib = cell(b);
        double s = 0;
        for (std::size_t i = ia; i <= ib; ++i) {
            const double x0 = std::max(a, t.x(i)), x1 = std::min(b, t.x(i + 1));
            if (x1 > x0) {
                s += 0.5 * (t.at(x0) + t.at(x1)) * (x1 - x0);
            }
        }
        return s;
    }

private:
    std::vector<Interval> parts_;
};

inline IntervalSet set_intersection(const IntervalSet& a, const IntervalSet& b) {
    std::vector<Interval> out;
    const auto& x = a.intervals();
    const auto& y = b.intervals();
    std::size_t i = 0, j = 0;
    while (i < x.size() && j < y.size()) {
        const double lo = std::max(x[i].lo, y[j].lo), hi = std::min(x[i].hi, y[j].hi);
        if (lo < hi) {
            out.push_back({lo, hi});
        }
        (x[i].hi < y[j].hi ? i : j) += 1;
    }
    return IntervalSet(std::move(out));
}

/// Points of `a` not in `b`; zero-length remnants are dropped.
inline IntervalSet set_difference(const IntervalSet& a, const IntervalSet& b) {
    std::vector<Interval> out;
    const auto& y = b.intervals();
    std::size_t j = 0;
    for (const auto& p : a.intervals()) {
        double cur = p.lo;
        while (j < y.size() && y[j].hi <= cur) {
            ++j;
        }
        std::size_t k = j;
        while (k < y.size() && y[k].lo < p.hi) {
            if (y[k].lo > cur) {
                out.push_back({cur, y[k].lo});
            }
            cur = std::max(cur, y[k].hi);
            ++k;
        }
        if (cur < p.hi) {
            out.push_back({cur, p.hi});
        }
    }
    return IntervalSet(std::move(out));
}

// ---------------------------------------------------------------------------------------------
// Highest-density regions

namespace detail {

/// Mass of {f >= t} under the linear interpolant; optionally collects the region.
inline double superlevel(const DensityTable& table, double t, std::vector<Interval>* region) {
    double mass = 0;
    const auto& f = table.density;
    for (std::size_t i = 0; i + 1 < f.size(); ++i) {
        const double a = f[i], b = f[i + 1];
        const double x0 = table.x(i);
        double lo, hi;
        if (a >= t && b >= t) {
            lo = 0;
            hi = 1;
        } else if (a < t && b < t) {
            continue;
        } else {
            const double c = (t - a) / (b - a);
            if (a >= t) {
                lo = 0;
                hi = c;
            } else {
                lo = c;
                hi = 1;
            }
        }
        const double fa = a + lo * (b - a), fb = a + hi * (b - a);
        mass += 0.5 * (fa + fb) * (hi - lo) * table.step;
        if (region != nullptr) {
            const double l = lo == 0 ? x0 : x0 + lo * table.step;
            const double h = hi == 1 ? table.x(i + 1) : x0 + hi * table.step;
            region->push_back({l, h});
        }
    }
    return mass;
}

}  // namespace detail

/**
 * Highest-density region of the given mass: the superlevel set {f >= t} with t found by
 * bisection so that its mass matches `mass` to about 1e-6.
 */
inline IntervalSet hdi_region(const DensityTable& table, double mass = 0.95) {
    if (!(mass > 0 && mass < 1)) {
        throw Error("hdi_region: mass must lie in (0, 1)");
    }
    if (table.density.size() < 2) {
        throw Error("hdi_region: density table too small");
    }
    double lo = 0, hi = *std::max_element(table.density.begin(), table.density.end());
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double m = detail::superlevel(table, mid, nullptr);
        if (std::abs(m - mass) <= 1e-7) {
            lo = hi = mid;
            break;
        }
        (m > mass ? lo : hi) = mid;
    }
    // `lo` keeps mass >= target (up to the tolerance).
    std::vector<Interval> parts;
    detail::superlevel(table, lo, &parts);
    return IntervalSet(std::move(parts));
}

// ---------------------------------------------------------------------------------------------
// Overlap ratios

enum class RegionMeasure { length, mass };

struct OverlapRatios {
    double ratio_E = 0;
    double ratio_L = 0;
    double shared = 0;
    double only_E = 0;
    double only_L = 0;
};

namespace detail {

inline constexpr int ratio_bits = 40;

/**
 * Rounds non-negative parts to multiples of 2^-ratio_bits of their total so that the rounded
 * shares sum to exactly 1. Positive parts never round to 0 and zero parts stay 0.
 */
inline std::array<double, 3> dyadic_shares(const std::array<double, 3>& parts) {
    const double total = parts[0] + parts[1] + parts[2];
    const std::int64_t units = std::int64_t{1} << ratio_bits;
    std::array<std::int64_t, 3> q{};
    std::array<double, 3> rem{};
    std::int64_t used = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = parts[i] / total * static_cast<double>(units);
        q[i] = static_cast<std::int64_t>(std::floor(exact));
        rem[i] = exact - static_cast<double>(q[i]);
        used += q[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
    for (int k = 0; used < units; k = (k + 1) % 3) {
        if (parts[order[k]] > 0) {
            ++q[order[k]];
            ++used;
        }
    }
    for (int k = 2; used > units; k = (k + 2) % 3) {
        if (q[order[k]] > 0) {
            --q[order[k]];
            --used;
        }
    }
    for (int i = 0; i < 3; ++i) {
        if (parts[i] > 0 && q[i] == 0) {
            const auto big = static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
            --q[big];
            q[i] = 1;
        }
    }
    std::array<double, 3> out{};
    for (int i = 0; i < 3; ++i) {
        out[i] = std::ldexp(static_cast<double>(q[i]), -ratio_bits);
    }
    return out;
}

}  // namespace detail

/**
 * Overlap of two regions relative to their union. Measures are lengths, or masses under
 * `weight` when it is given. The shares are rounded to a dyadic grid of spacing 2^-40 so that
 * only_E + only_L + shared is exactly 1 and ratio_E is 1 exactly when region_L lies inside
 * region_E.
 */
inline OverlapRatios region_overlap(const IntervalSet& region_E, const IntervalSet& region_L,
                                    const DensityTable* weight = nullptr) {
    if (region_E.empty() && region_L.empty()) {
        throw Error("region_overlap: both regions are empty");
    }
    auto measure = [&](const IntervalSet& s) { return weight ? s.mass_within(*weight) : s.total_length(); };
    const double shared = measure(set_intersection(region_E, region_L));
    const double only_e = measure(set_difference(region_E, region_L));
    const double only_l = measure(set_difference(region_L, region_E));
    if (!(shared + only_e + only_l > 0)) {
        throw Error("region_overlap: union of the regions has zero measure");
    }
    const auto q = detail::dyadic_shares({only_e, only_l, shared});
    OverlapRatios r;
    r.only_E = q[0];
    r.only_L = q[1];
    r.shared = q[2];
    r.ratio_E = q[0] + q[2];
    r.ratio_L = q[1] + q[2];
    return r;
}

// ---------------------------------------------------------------------------------------------
// Per-topic analysis

struct StrataBounds {
    double low = 1.0 / 3.0;
    double high = 2.0 / 3.0;
};

inline constexpr std::array<const char*, 3> stratum_names{"low", "middle", "high"};

/// Stratum index for a volume share: [0, low) -> 0, [low, high) -> 1, [high, 1] -> 2.
inline int stratum_of(double volume_ratio_E, const StrataBounds& bounds = {}) {
    if (volume_ratio_E < bounds.low) {
        return 0;
    }
    return volume_ratio_E < bounds.high ? 1 : 2;
}

struct BiasResult {
    int topic_id = 0;
    std::size_t n_E = 0;
    std::size_t n_L = 0;
    double volume_ratio_E = 0;
    bool insufficient = false;  // a cohort had fewer than min_group documents
    IntervalSet region_E;
    IntervalSet region_L;
    OverlapRatios ratios;
    int stratum = 0;
    double bandwidth_E = 0;
    double bandwidth_L = 0;
    double criterion = 0;
    bool low_separation = false;
};

enum class LdaSpace { original, reduced };

struct BiasOptions {
    double mass = 0.95;
    std::size_t min_group = 5;
    double ridge = 1e-3;
    std::size_t folds = 5;
    std::size_t bandwidth_count = 20;
    std::size_t grid_points = 2048;
    RegionMeasure measure = RegionMeasure::length;
    StrataBounds bounds;
    std::size_t threads = 0;
};

/**
 * Bias analysis of one topic from its cohort feature rows. Projections onto the discriminant
 * axis are standardised over the pooled topic before density estimation.
 */
inline BiasResult analyze_topic(int topic_id, const Matrix& xe, const Matrix& xl, const BiasOptions& opt = {}) {
    BiasResult r;
    r.topic_id = topic_id;
    r.n_E = xe.rows;
    r.n_L = xl.rows;
    r.volume_ratio_E = static_cast<double>(r.n_E) / static_cast<double>(r.n_E + r.n_L);
    r.stratum = stratum_of(r.volume_ratio_E, opt.bounds);
    if (r.n_E < std::max<std::size_t>(opt.min_group, 2) || r.n_L < std::max<std::size_t>(opt.min_group, 2) ||
        r.n_E < opt.folds || r.n_L < opt.folds) {
        r.insufficient = true;
        return r;
    }
    const auto lda = lda_direction(xe, xl, opt.ridge);
    r.criterion = lda.criterion;
    r.low_separation = lda.low_separation;
    auto pe = project(xe, lda.direction);
    auto pl = project(xl, lda.direction);

    std::vector<double> pooled(pe);
    pooled.insert(pooled.end(), pl.begin(), pl.end());
    const double mean = sample_mean(pooled);
    double sd = std::sqrt(sample_variance(pooled));
    if (!(sd > 0)) {
        sd = 1.0;
    }
    for (auto* v : {&pe, &pl}) {
        for (auto& x : *v) {
            x = (x - mean) / sd;
        }
    }

    r.bandwidth_E = kde_bandwidth_cv(pe, default_bandwidth_grid(pe, opt.bandwidth_count), opt.folds);
    r.bandwidth_L = kde_bandwidth_cv(pl, default_bandwidth_grid(pl, opt.bandwidth_count), opt.folds);
    r.region_E = hdi_region(kde_density(pe, r.bandwidth_E, opt.grid_points), opt.mass);
    r.region_L = hdi_region(kde_density(pl, r.bandwidth_L, opt.grid_points), opt.mass);

    if (opt.measure == RegionMeasure::mass) {
        for (auto& x : pooled) {
            x = (x - mean) / sd;
        }
        const double h = kde_bandwidth_cv(pooled, default_bandwidth_grid(pooled, opt.bandwidth_count), opt.folds);
        const auto weight = kde_density(pooled, h, opt.grid_points);
        r.ratios = region_overlap(r.region_E, r.region_L, &weight);
    } else {
        r.ratios = region_overlap(r.region_E, r.region_L);
    }
    return r;
}

/**
 * Runs `analyze_topic` for every retained topic of `table`, with `features` holding one row per
 * table row. Topics run in parallel; results come back in ascending topic order.
 */
inline std::vector<BiasResult> analyze_topics(const TopicTable& table, const Matrix& features, const BiasOptions& opt = {}) {
    if (features.rows != table.rows.size()) {
        throw Error("analyze_topics: feature rows do not match the topic table");
    }
    const auto members = table.members();
    std::vector<int> topics;
    for (const auto& [t, rows] : members) {
        if (table.is_retained(t)) {
            topics.push_back(t);
        }
    }
    std::vector<BiasResult> out(topics.size());
    parallel_for(
        topics.size(),
        [&](std::size_t k) {
            const auto& rows = members.at(topics[k]);
            std::size_t ne = 0;
            for (auto r : rows) {
                ne += table.rows[r].group == Group::early;
            }
            Matrix xe(ne, features.cols), xl(rows.size() - ne, features.cols);
            std::size_t ie = 0, il = 0;
            for (auto r : rows) {
                auto dst = table.rows[r].group == Group::early ? xe.row(ie++) : xl.row(il++);
                std::copy(features.row(r).begin(), features.row(r).end(), dst.begin());
            }
            out[k] = analyze_topic(topics[k], xe, xl, opt);
        },
        opt.threads);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Stratified comparison

struct StratumReport {
    int index = 0;
    double lower = 0;
    double upper = 0;
    std::vector<int> topics;
    std::vector<double> ratio_E;
    std::vector<double> ratio_L;
    double mean_E = std::numeric_limits<double>::quiet_NaN();
    double mean_L = std::numeric_limits<double>::quiet_NaN();
    std::optional<WelchResult> welch;
    std::string note;

    std::size_t size() const { return topics.size(); }
};

struct StrataReport {
    std::vector<StratumReport> strata;
    std::size_t topics = 0;
    double mean_E = std::numeric_limits<double>::quiet_NaN();
    double mean_L = std::numeric_limits<double>::quiet_NaN();
    std::optional<WelchResult> welch;
    std::optional<double> r_volume_E;  // pearson(volume_ratio_E, ratio_E)
    std::optional<double> r_volume_L;  // pearson(1 - volume_ratio_E, ratio_L)
    std::string note;
};

namespace detail {

inline void compare_groups(std::span<const double> e, std::span<const double> l, double& mean_e, double& mean_l,
                           std::optional<WelchResult>& welch, std::string& note) {
    if (e.empty()) {
        note = "empty";
        return;
    }
    mean_e = sample_mean(e);
    mean_l = sample_mean(l);
    try {
        welch = welch_t(e, l);
    } catch (const Error& ex) {
        note = ex.what();
    }
}

}  // namespace detail

/**
 * Groups analysed topics by volume share and compares ratio_E with ratio_L in each stratum and
 * overall. Insufficient topics are ignored.
 */
inline StrataReport stratified_compare(std::span<const BiasResult> results, const StrataBounds& bounds = {}) {
    StrataReport rep;
    const std::array<double, 4> edges{0.0, bounds.low, bounds.high, 1.0};
    for (int s = 0; s < 3; ++s) {
        StratumReport sr;
        sr.index = s;
        sr.lower = edges[s];
        sr.upper = edges[s + 1];
        rep.strata.push_back(sr);
    }
    std::vector<double> all_e, all_l, vol_e, vol_l;
    for (const auto& r : results) {
        if (r.insufficient) {
            continue;
        }
        auto& sr = rep.strata[stratum_of(r.volume_ratio_E, bounds)];
        sr.topics.push_back(r.topic_id);
        sr.ratio_E.push_back(r.ratios.ratio_E);
        sr.ratio_L.push_back(r.ratios.ratio_L);
        all_e.push_back(r.ratios.ratio_E);
        all_l.push_back(r.ratios.ratio_L);
        vol_e.push_back(r.volume_ratio_E);
        vol_l.push_back(1.0 - r.volume_ratio_E);
    }
    for (auto& sr : rep.strata) {
        detail::compare_groups(sr.ratio_E, sr.ratio_L, sr.mean_E, sr.mean_L, sr.welch, sr.note);
    }
    rep.topics = all_e.size();
    detail::compare_groups(all_e, all_l, rep.mean_E, rep.mean_L, rep.welch, rep.note);
    try {
        rep.r_volume_E = pearson_r(vol_e, all_e);
        rep.r_volume_L = pearson_r(vol_l, all_l);
    } catch (const Error&) {
    }
    return rep;
}

// ---------------------------------------------------------------------------------------------
// bias.csv

inline constexpr const char* bias_csv_header = "topic_id,n_E,n_L,volume_ratio_E,ratio_E,ratio_L,shared,only_E,only_L,stratum";

inline void write_bias_csv(std::ostream& out, std::span<const BiasResult> results) {
    out << bias_csv_header << '\n';
    for (const auto& r : results) {
        out << fmt::format("{},{},{},{},", r.topic_id, r.n_E, r.n_L, r.volume_ratio_E);
        if (r.insufficient) {
            out << ",,,,,insufficient\n";
            continue;
        }
        const auto& q = r.ratios;
        out << fmt::format("{},{},{},{},{},{}\n", q.ratio_E, q.ratio_L, q.shared, q.only_E, q.only_L, stratum_names[r.stratum]);
    }
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& s, std::size_t line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == s.size()) {
            return v;
        }
    } catch (const std::exception&) {
    }
    throw Error(fmt::format("line {}: '{}' is not a number", line, s));
}

}  // namespace detail

/// Reads rows written by `write_bias_csv`. Regions are not stored and come back empty.
inline std::vector<BiasResult> read_bias_csv(std::istream& in, const StrataBounds& bounds = {}) {
    std::string line;
    if (!std::getline(in, line) || detail::split_csv_line(line) != detail::split_csv_line(bias_csv_header)) {
        throw Error("bias csv: unexpected header");
    }
    std::vector<BiasResult> out;
    for (std::size_t no = 2; std::getline(in, line); ++no) {
        if (line.empty() || line == "\r") {
            continue;
        }
        const auto f = detail::split_csv_line(line);
        if (f.size() != 10) {
            throw Error(fmt::format("bias csv line {}: expected 10 fields, found {}", no, f.size()));
        }
        BiasResult r;
        r.topic_id = static_cast<int>(detail::parse_double(f[0], no));
        r.n_E = static_cast<std::size_t>(detail::parse_double(f[1], no));
        r.n_L = static_cast<std::size_t>(detail::parse_double(f[2], no));
        r.volume_ratio_E = detail::parse_double(f[3], no);
        r.stratum = stratum_of(r.volume_ratio_E, bounds);
        if (f[9] == "insufficient") {
            r.insufficient = true;
        } else {
            r.ratios.ratio_E = detail::parse_double(f[4], no);
            r.ratios.ratio_L = detail::parse_double(f[5], no);
            r.ratios.shared = detail::parse_double(f[6], no);
            r.ratios.only_E = detail::parse_double(f[7], no);
            r.ratios.only_L = detail::parse_double(f[8], no);
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace engage

#endif
