#ifndef ENGAGE_REDUCER_HPP
#define ENGAGE_REDUCER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"

/**
 * @file reducer.hpp
 *
 * @brief Dimensionality reduction: PCA and a deterministic UMAP (exact or approximate kNN,
 * fuzzy simplicial set, negative-sampling SGD layout).
 */

namespace engage {

// ---------------------------------------------------------------------------------------------
// PCA

struct PcaResult {
    /// rows x dim projections of the centred data.
    Matrix scores;
    /// dim x cols principal axes, ordered by decreasing eigenvalue.
    Matrix components;
    std::vector<double> eigenvalues;
    std::vector<double> mean;
};

/**
 * Principal component analysis of the rows of `x`. Each axis is oriented so that its
 * largest-magnitude loading is positive. Uses the covariance matrix when `cols <= rows` and the
 * Gram matrix otherwise.
 */
inline PcaResult pca(const Matrix& x, std::size_t dim) {
    if (x.rows < 2) {
        throw Error("pca: need at least 2 rows");
    }
    if (dim == 0 || dim > std::min(x.rows, x.cols)) {
        throw Error("pca: dim " + std::to_string(dim) + " outside [1, " + std::to_string(std::min(x.rows, x.cols)) +
                    "]");
    }
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RowMat> raw(x.values.data(), static_cast<Eigen::Index>(x.rows), static_cast<Eigen::Index>(x.cols));
    const Eigen::RowVectorXd mu = raw.colwise().mean();
    const RowMat centred = raw.rowwise() - mu;
    const double denom = static_cast<double>(x.rows - 1);

    Eigen::MatrixXd axes(x.cols, dim);
    Eigen::VectorXd evals(dim);
    if (x.cols <= x.rows) {
        const Eigen::MatrixXd cov = (centred.transpose() * centred) / denom;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
        for (std::size_t c = 0; c < dim; ++c) {
            const auto src = static_cast<Eigen::Index>(x.cols - 1 - c);
            axes.col(static_cast<Eigen::Index>(c)) = es.eigenvectors().col(src);
            evals(static_cast<Eigen::Index>(c)) = std::max(0.0, es.eigenvalues()(src));
        }
    } else {
        const Eigen::MatrixXd gram = centred * centred.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
        for (std::size_t c = 0; c < dim; ++c) {
            const auto src = static_cast<Eigen::Index>(x.rows - 1 - c);
            Eigen::VectorXd v = centred.transpose() * es.eigenvectors().col(src);
            const double n = v.norm();
            if (n > 0) {
                v /= n;
            } else {
                v.setZero();
                v(static_cast<Eigen::Index>(c % x.cols)) = 1.0;
            }
            axes.col(static_cast<Eigen::Index>(c)) = v;
            evals(static_cast<Eigen::Index>(c)) = std::max(0.0, es.eigenvalues()(src)) / denom;
        }
    }

    for (Eigen::Index c = 0; c < axes.cols(); ++c) {
        Eigen::Index arg = 0;
        axes.col(c).cwiseAbs().maxCoeff(&arg);
        if (axes(arg, c) < 0) {
            axes.col(c) *= -1.0;
        }
    }

    PcaResult out;
    out.scores = Matrix(x.rows, dim);
    Eigen::Map<RowMat>(out.scores.values.data(), static_cast<Eigen::Index>(x.rows), static_cast<Eigen::Index>(dim)) =
        centred * axes;
    out.components = Matrix(dim, x.cols);
    Eigen::Map<RowMat>(out.components.values.data(), static_cast<Eigen::Index>(dim),
                       static_cast<Eigen::Index>(x.cols)) = axes.transpose();
    out.eigenvalues.assign(evals.data(), evals.data() + dim);
    out.mean.assign(mu.data(), mu.data() + x.cols);
    return out;
}

inline Matrix pca_project(const Matrix& x, std::size_t dim) { return pca(x, dim).scores; }

// ---------------------------------------------------------------------------------------------
// Nearest neighbours

/**
 * k nearest neighbours of every point, self excluded, ascending by distance
 * (ties broken by neighbour index).
 */
struct KnnGraph {
    std::size_t n = 0;
    std::size_t k = 0;
    std::vector<std::uint32_t> indices;  // n * k
    std::vector<double> distances;       // n * k

    std::span<const std::uint32_t> neighbors(std::size_t i) const { return {indices.data() + i * k, k}; }
    std::span<const double> dists(std::size_t i) const { return {distances.data() + i * k, k}; }
};

struct KnnOptions {
    /// Above this many rows the approximate search is used.
    std::size_t exact_limit = 20000;
    std::uint64_t seed = 42;
    std::size_t trees = 0;  // 0 = chosen from n
    std::size_t max_iterations = 12;
    double termination = 0.001;
    std::size_t threads = 0;
};

inline KnnGraph knn_exact(const Matrix& x, std::size_t k, std::size_t threads = 0) {
    if (k == 0 || k >= x.rows) {
        throw Error("knn: k must be in [1, rows)");
    }
    KnnGraph g{x.rows, k, std::vector<std::uint32_t>(x.rows * k), std::vector<double>(x.rows * k)};
    parallel_for(
        x.rows,
        [&](std::size_t i) {
            std::vector<std::pair<double, std::uint32_t>> cand;
            cand.reserve(x.rows - 1);
            const auto xi = x.row(i);
            for (std::size_t j = 0; j < x.rows; ++j) {
                if (j != i) {
                    cand.emplace_back(squared_distance(xi, x.row(j)), static_cast<std::uint32_t>(j));
                }
            }
            std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
            for (std::size_t r = 0; r < k; ++r) {
                g.indices[i * k + r] = cand[r].second;
                g.distances[i * k + r] = std::sqrt(cand[r].first);
            }
        },
        threads);
    return g;
}

namespace detail {

// Bounded neighbour list kept sorted ascending by (distance, index).
class NeighborHeap {
public:
    struct Item {
        double dist;
        std::uint32_t index;
        bool fresh;
    };

    explicit NeighborHeap(std::size_t k) : k_(k) { items_.reserve(k + 1); }

    bool push(double dist, std::uint32_t index) {
        if (items_.size() == k_ && !less(dist, index, items_.back())) {
            return false;
        }
        for (const auto& it : items_) {
            if (it.index == index) {
                return false;
            }
        }
        auto pos = std::find_if(items_.begin(), items_.end(), [&](const Item& it) { return less(dist, index, it); });
        items_.insert(pos, Item{dist, index, true});
        if (items_.size() > k_) {
            items_.pop_back();
        }
        return true;
    }

    std::vector<Item>& items() { return items_; }
    const std::vector<Item>& items() const { return items_; }

private:
    static bool less(double d, std::uint32_t i, const Item& it) { return d < it.dist || (d == it.dist && i < it.index); }

    std::size_t k_;
    std::vector<Item> items_;
};

inline void rp_split(const Matrix& x, std::vector<std::uint32_t>& idx, std::size_t begin, std::size_t end,
                     std::size_t leaf_size, std::mt19937_64& rng, std::vector<std::pair<std::size_t, std::size_t>>& leaves) {
    const std::size_t count = end - begin;
    if (count <= leaf_size) {
        leaves.emplace_back(begin, end);
        return;
    }
    const std::size_t a = idx[begin + rng() % count];
    std::size_t b = idx[begin + rng() % count];
    for (int tries = 0; tries < 8 && squared_distance(x.row(a), x.row(b)) == 0; ++tries) {
        b = idx[begin + rng() % count];
    }
    std::vector<double> normal(x.cols), mid(x.cols);
    for (std::size_t c = 0; c < x.cols; ++c) {
        normal[c] = x(a, c) - x(b, c);
        mid[c] = 0.5 * (x(a, c) + x(b, c));
    }
    auto side = [&](std::uint32_t p) {
        double s = 0;
        for (std::size_t c = 0; c < x.cols; ++c) {
            s += (x(p, c) - mid[c]) * normal[c];
        }
        return s;
    };
    auto first = idx.begin() + static_cast<std::ptrdiff_t>(begin);
    auto last = idx.begin() + static_cast<std::ptrdiff_t>(end);
    auto split = std::partition(first, last, [&](std::uint32_t p) { return side(p) < 0; });
    std::size_t cut = static_cast<std::size_t>(split - idx.begin());
    if (cut == begin || cut == end) {
        cut = begin + count / 2;  // degenerate hyperplane: halve arbitrarily
    }
    rp_split(x, idx, begin, cut, leaf_size, rng, leaves);
    rp_split(x, idx, cut, end, leaf_size, rng, leaves);
}

}  // namespace detail

/**
 * Approximate kNN: a random-projection forest seeds each point's candidate list, then
 * neighbour-descent local joins refine it until fewer than `termination * n * k` updates occur.
 * Single-threaded and deterministic for a given seed.
 */
inline KnnGraph knn_approximate(const Matrix& x, std::size_t k, const KnnOptions& opt = {}) {
    if (k == 0 || k >= x.rows) {
        throw Error("knn: k must be in [1, rows)");
    }
    const std::size_t n = x.rows;
    std::mt19937_64 rng(opt.seed);
    std::vector<detail::NeighborHeap> heaps(n, detail::NeighborHeap(k));
    auto dist = [&](std::size_t i, std::size_t j) { return std::sqrt(squared_distance(x.row(i), x.row(j))); };

    const std::size_t trees =
        opt.trees ? opt.trees : std::min<std::size_t>(32, 5 + static_cast<std::size_t>(std::round(std::pow(n, 0.25))));
    const std::size_t leaf_size = std::max<std::size_t>(2 * k, 24);
    for (std::size_t t = 0; t < trees; ++t) {
        std::vector<std::uint32_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0u);
        std::vector<std::pair<std::size_t, std::size_t>> leaves;
        detail::rp_split(x, idx, 0, n, leaf_size, rng, leaves);
        for (const auto& [b, e] : leaves) {
            for (std::size_t p = b; p < e; ++p) {
                for (std::size_t q = p + 1; q < e; ++q) {
                    const double d = dist(idx[p], idx[q]);
                    heaps[idx[p]].push(d, idx[q]);
                    heaps[idx[q]].push(d, idx[p]);
                }
            }
        }
    }
    // Points in tiny leaves may still have short lists.
    for (std::size_t i = 0; i < n; ++i) {
        while (heaps[i].items().size() < k) {
            const auto j = static_cast<std::uint32_t>(rng() % n);
            if (j != i) {
                heaps[i].push(dist(i, j), j);
            }
        }
    }

    for (std::size_t iter = 0; iter < opt.max_iterations; ++iter) {
        std::vector<std::vector<std::uint32_t>> fresh(n), old(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (auto& it : heaps[i].items()) {
                if (it.fresh) {
                    fresh[i].push_back(it.index);
                    fresh[it.index].push_back(static_cast<std::uint32_t>(i));
                    it.fresh = false;
                } else {
                    old[i].push_back(it.index);
                    old[it.index].push_back(static_cast<std::uint32_t>(i));
                }
            }
        }
        std::size_t updates = 0;
        for (std::size_t i = 0; i < n; ++i) {
            auto& fi = fresh[i];
            auto& oi = old[i];
            std::sort(fi.begin(), fi.end());
            fi.erase(std::unique(fi.begin(), fi.end()), fi.end());
            std::sort(oi.begin(), oi.end());
            oi.erase(std::unique(oi.begin(), oi.end()), oi.end());
            for (std::size_t a = 0; a < fi.size(); ++a) {
                for (std::size_t b = a + 1; b < fi.size(); ++b) {
                    const double d = dist(fi[a], fi[b]);
                    updates += heaps[fi[a]].push(d, fi[b]);
                    updates += heaps[fi[b]].push(d, fi[a]);
                }
                for (std::uint32_t o : oi) {
                    if (o == fi[a]) {
                        continue;
                    }
                    const double d = dist(fi[a], o);
                    updates += heaps[fi[a]].push(d, o);
                    updates += heaps[o].push(d, fi[a]);
                }
            }
        }
        if (static_cast<double>(updates) <= opt.termination * static_cast<double>(n * k)) {
            break;
        }
    }

    KnnGraph g{n, k, std::vector<std::uint32_t>(n * k), std::vector<double>(n * k)};
    for (std::size_t i = 0; i < n; ++i) {
        const auto& items = heaps[i].items();
        for (std::size_t r = 0; r < k; ++r) {
            g.indices[i * k + r] = items[r].index;
            g.distances[i * k + r] = items[r].dist;
        }
    }
    return g;
}

inline KnnGraph knn_graph(const Matrix& x, std::size_t k, const KnnOptions& opt = {}) {
    if (x.rows <= opt.exact_limit) {
        return knn_exact(x, k, opt.threads);
    }
    return knn_approximate(x, k, opt);
}

// ---------------------------------------------------------------------------------------------
// Fuzzy simplicial set

struct FuzzyEdge {
    std::uint32_t head;
    std::uint32_t tail;
    double weight;
};

/**
 * Symmetric membership graph. Every undirected pair appears twice, as (i, j) and (j, i),
 * sorted by (head, tail). Weights lie in (0, 1].
 */
struct FuzzyGraph {
    std::size_t n = 0;
    std::vector<FuzzyEdge> edges;
    std::vector<double> rho;
    std::vector<double> sigma;
};

/**
 * Smooth-kNN calibration: for each point, `rho` is the distance to its nearest neighbour and
 * `sigma` is found by bisection so that the memberships `exp(-max(0, d - rho) / sigma)` over its
 * k neighbours sum to log2(k). Directed memberships a, b are combined as a + b - ab.
 */
inline FuzzyGraph fuzzy_graph(const KnnGraph& knn) {
    constexpr int max_iterations = 64;
    constexpr double tolerance = 1e-5;
    constexpr double min_scale = 1e-3;

    const std::size_t n = knn.n;
    const std::size_t k = knn.k;
    FuzzyGraph g;
    g.n = n;
    g.rho.assign(n, 0.0);
    g.sigma.assign(n, 1.0);
    const double target = std::log2(static_cast<double>(k));

    double global_mean = 0;
    for (double d : knn.distances) {
        global_mean += d;
    }
    global_mean /= std::max<std::size_t>(1, knn.distances.size());

    std::vector<std::vector<std::pair<std::uint32_t, double>>> directed(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto d = knn.dists(i);
        const double rho = d.empty() ? 0.0 : d[0];
        double lo = 0, hi = std::numeric_limits<double>::infinity(), mid = 1.0;
        for (int it = 0; it < max_iterations; ++it) {
            double psum = 0;
            for (double dj : d) {
                psum += std::exp(-std::max(0.0, dj - rho) / mid);
            }
            if (std::abs(psum - target) < tolerance) {
                break;
            }
            if (psum > target) {
                hi = mid;
                mid = 0.5 * (lo + hi);
            } else {
                lo = mid;
                mid = std::isinf(hi) ? mid * 2 : 0.5 * (lo + hi);
            }
        }
        const double mean_i = d.empty() ? 0.0 : std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
        mid = std::max(mid, min_scale * (rho > 0 ? mean_i : global_mean));
        if (mid <= 0) {
            mid = std::numeric_limits<double>::min();
        }
        g.rho[i] = rho;
        g.sigma[i] = mid;
        const auto nb = knn.neighbors(i);
        for (std::size_t r = 0; r < k; ++r) {
            const double w = std::exp(-std::max(0.0, d[r] - rho) / mid);
            if (w > 0) {
                directed[i].emplace_back(nb[r], w);
            }
        }
        std::sort(directed[i].begin(), directed[i].end());
    }

    auto lookup = [&](std::size_t from, std::uint32_t to) {
        const auto& row = directed[from];
        auto it = std::lower_bound(row.begin(), row.end(), std::make_pair(to, -std::numeric_limits<double>::infinity()));
        return (it != row.end() && it->first == to) ? it->second : 0.0;
    };

    std::vector<std::vector<std::pair<std::uint32_t, double>>> sym(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (const auto& [j, a] : directed[i]) {
            const double b = lookup(j, static_cast<std::uint32_t>(i));
            const double w = a + b - a * b;
            if (w > 0) {
                sym[i].emplace_back(j, w);
                if (b == 0) {
                    sym[j].emplace_back(static_cast<std::uint32_t>(i), w);
                }
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::sort(sym[i].begin(), sym[i].end());
        for (const auto& [j, w] : sym[i]) {
            g.edges.push_back({static_cast<std::uint32_t>(i), j, std::min(1.0, w)});
        }
    }
    return g;
}

// ---------------------------------------------------------------------------------------------
// Layout

/**
 * Fits `1 / (1 + a d^(2b))` to the target membership curve (1 below `min_dist`, exponential
 * decay with scale `spread` above) on 300 points over [0, 3 * spread], by damped Gauss-Newton.
 */
inline std::pair<double, double> find_ab(double spread, double min_dist) {
    constexpr int samples = 300;
    std::vector<double> xs(samples), ys(samples);
    for (int i = 0; i < samples; ++i) {
        xs[i] = 3.0 * spread * i / (samples - 1);
        ys[i] = xs[i] < min_dist ? 1.0 : std::exp(-(xs[i] - min_dist) / spread);
    }
    auto sse = [&](double a, double b) {
        double s = 0;
        for (int i = 0; i < samples; ++i) {
            const double r = 1.0 / (1.0 + a * std::pow(xs[i], 2 * b)) - ys[i];
            s += r * r;
        }
        return s;
    };

    double a = 1.0, b = 1.0, lambda = 1e-3;
    double cost = sse(a, b);
    for (int iter = 0; iter < 500; ++iter) {
        double jtj00 = 0, jtj01 = 0, jtj11 = 0, jtr0 = 0, jtr1 = 0;
        for (int i = 0; i < samples; ++i) {
            const double x = xs[i];
            if (x == 0) {
                continue;  // residual and gradient are constant at the origin
            }
            const double p = std::pow(x, 2 * b);
            const double f = 1.0 / (1.0 + a * p);
            const double r = f - ys[i];
            const double da = -p * f * f;
            const double db = -a * p * 2.0 * std::log(x) * f * f;
            jtj00 += da * da;
            jtj01 += da * db;
            jtj11 += db * db;
            jtr0 += da * r;
            jtr1 += db * r;
        }
        bool improved = false;
        for (int attempt = 0; attempt < 30 && !improved; ++attempt) {
            const double m00 = jtj00 * (1 + lambda), m11 = jtj11 * (1 + lambda);
            const double det = m00 * m11 - jtj01 * jtj01;
            if (det == 0) {
                lambda *= 10;
                continue;
            }
            const double step_a = -(m11 * jtr0 - jtj01 * jtr1) / det;
            const double step_b = -(m00 * jtr1 - jtj01 * jtr0) / det;
            const double na = a + step_a, nb = b + step_b;
            const double ncost = (na > 0 && nb > 0) ? sse(na, nb) : std::numeric_limits<double>::infinity();
            if (ncost < cost) {
                const double rel = (cost - ncost) / std::max(cost, 1e-300);
                a = na;
                b = nb;
                cost = ncost;
                lambda = std::max(lambda / 10, 1e-12);
                improved = true;
                if (rel < 1e-15) {
                    return {a, b};
                }
            } else {
                lambda *= 10;
            }
        }
        if (!improved) {
            break;
        }
    }
    return {a, b};
}

struct LayoutOptions {
    std::size_t dim = 5;
    std::size_t epochs = 200;
    std::uint64_t seed = 42;
    double min_dist = 0.1;
    double spread = 1.0;
    std::size_t negative_sample_rate = 5;
    double learning_rate = 1.0;
    double repulsion_strength = 1.0;
};

/**
 * PCA coordinates rescaled so the largest absolute coordinate is 10. Components that PCA cannot
 * supply (fewer rows or columns than `dim`) are filled with seeded uniform noise in [-10, 10].
 */
inline Matrix pca_initialization(const Matrix& x, std::size_t dim, std::uint64_t seed) {
    Matrix out(x.rows, dim);
    if (x.rows <= 1) {
        return out;
    }
    const std::size_t available = std::min({dim, x.rows - 1, x.cols});
    if (available > 0) {
        const Matrix scores = pca_project(x, available);
        double maxabs = 0;
        for (double v : scores.values) {
            maxabs = std::max(maxabs, std::abs(v));
        }
        const double scale = maxabs > 0 ? 10.0 / maxabs : 0.0;
        for (std::size_t i = 0; i < x.rows; ++i) {
            for (std::size_t c = 0; c < available; ++c) {
                out(i, c) = scores(i, c) * scale;
            }
        }
    }
    if (available < dim) {
        std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
        for (std::size_t i = 0; i < x.rows; ++i) {
            for (std::size_t c = available; c < dim; ++c) {
                out(i, c) = 20.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 10.0;
            }
        }
    }
    return out;
}

/**
 * Minimises the fuzzy cross-entropy between `graph` and the layout by SGD with negative
 * sampling. Edge `e` is sampled every `max_weight / weight_e` epochs and draws
 * `negative_sample_rate` repulsive partners per sample. The learning rate decays linearly and
 * gradients are clipped to [-4, 4]. Runs on one thread with a fixed edge order, so a given
 * seed reproduces the layout bit for bit.
 */
inline Matrix optimize_layout(const FuzzyGraph& graph, Matrix init, const LayoutOptions& opt) {
    if (init.rows != graph.n) {
        throw Error("optimize_layout: initialisation has wrong row count");
    }
    if (graph.n <= 1) {
        return Matrix(graph.n, init.cols);
    }
    if (opt.epochs == 0 || graph.edges.empty()) {
        return init;
    }
    const auto [a, b] = find_ab(opt.spread, opt.min_dist);
    const std::size_t dim = init.cols;
    const double n_epochs = static_cast<double>(opt.epochs);

    double wmax = 0;
    for (const auto& e : graph.edges) {
        wmax = std::max(wmax, e.weight);
    }
    struct Schedule {
        std::uint32_t head, tail;
        double per_sample, per_negative, next_sample, next_negative;
    };
    std::vector<Schedule> sched;
    sched.reserve(graph.edges.size());
    for (const auto& e : graph.edges) {
        if (e.weight < wmax / n_epochs) {
            continue;  // would never be sampled
        }
        const double per = wmax / e.weight;
        const double per_neg = per / static_cast<double>(std::max<std::size_t>(1, opt.negative_sample_rate));
        sched.push_back({e.head, e.tail, per, per_neg, per, per_neg});
    }

    std::mt19937_64 rng(opt.seed);
    for (std::size_t i = sched.size(); i > 1; --i) {
        std::swap(sched[i - 1], sched[rng() % i]);
    }

    auto clip = [](double v) { return std::clamp(v, -4.0, 4.0); };
    Matrix& y = init;
    const auto n = static_cast<std::uint64_t>(graph.n);
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        const double ep = static_cast<double>(epoch);
        const double alpha = opt.learning_rate * (1.0 - ep / n_epochs);
        for (auto& s : sched) {
            if (s.next_sample > ep) {
                continue;
            }
            double* cur = &y.values[std::size_t{s.head} * dim];
            double* oth = &y.values[std::size_t{s.tail} * dim];
            double d2 = 0;
            for (std::size_t c = 0; c < dim; ++c) {
                const double diff = cur[c] - oth[c];
                d2 += diff * diff;
            }
            if (d2 > 0) {
                const double coeff = -2.0 * a * b * std::pow(d2, b - 1.0) / (a * std::pow(d2, b) + 1.0);
                for (std::size_t c = 0; c < dim; ++c) {
                    const double g = clip(coeff * (cur[c] - oth[c]));
                    cur[c] += g * alpha;
                    oth[c] -= g * alpha;
                }
            }
            s.next_sample += s.per_sample;

            const auto negatives = static_cast<std::size_t>((ep - s.next_negative) / s.per_negative);
            for (std::size_t p = 0; p < negatives; ++p) {
                const auto k = static_cast<std::size_t>(rng() % n);
                if (k == s.head) {
                    continue;
                }
                oth = &y.values[k * dim];
                d2 = 0;
                for (std::size_t c = 0; c < dim; ++c) {
                    const double diff = cur[c] - oth[c];
                    d2 += diff * diff;
                }
                if (d2 <= 0) {
                    continue;
                }
                const double coeff = 2.0 * opt.repulsion_strength * b / ((0.001 + d2) * (a * std::pow(d2, b) + 1.0));
                for (std::size_t c = 0; c < dim; ++c) {
                    cur[c] += clip(coeff * (cur[c] - oth[c])) * alpha;
                }
            }
            s.next_negative += static_cast<double>(negatives) * s.per_negative;
        }
    }
    return y;
}

struct UmapOptions {
    std::size_t neighbors = 15;
    LayoutOptions layout;
    KnnOptions knn;
};

/// kNN graph, fuzzy set, PCA initialisation and SGD layout in one call.
inline Matrix umap(const Matrix& x, const UmapOptions& opt = {}) {
    if (x.rows <= 1) {
        return Matrix(x.rows, opt.layout.dim);
    }
    const std::size_t k = std::min(opt.neighbors, x.rows - 1);
    KnnOptions ko = opt.knn;
    ko.seed = opt.layout.seed;
    const auto knn = knn_graph(x, k, ko);
    const auto fuzzy = fuzzy_graph(knn);
    return optimize_layout(fuzzy, pca_initialization(x, opt.layout.dim, opt.layout.seed), opt.layout);
}

}  // namespace engage

#endif
