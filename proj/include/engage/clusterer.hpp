#ifndef ENGAGE_CLUSTERER_HPP
#define ENGAGE_CLUSTERER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "common.hpp"

/**
 * @file clusterer.hpp
 *
 * @brief HDBSCAN* with excess-of-mass extraction, the DBCV validity index, and grid tuning.
 *
 * Distances are dense and Euclidean; everything here is O(n^2) in memory traffic but O(n) in
 * storage, which suits the low-dimensional reduced embeddings the clusterer runs on.
 */

namespace engage {

inline constexpr int noise_label = -1;

/**
 * Distance from every point to its `min_samples`-th nearest other point.
 */
inline std::vector<double> core_distances(const Matrix& x, std::size_t min_samples, std::size_t threads = 0) {
    if (min_samples == 0 || min_samples >= x.rows) {
        throw Error("core_distances: min_samples must be in [1, rows)");
    }
    std::vector<double> core(x.rows);
    parallel_for(
        x.rows,
        [&](std::size_t i) {
            std::vector<double> d;
            d.reserve(x.rows - 1);
            for (std::size_t j = 0; j < x.rows; ++j) {
                if (j != i) {
                    d.push_back(squared_distance(x.row(i), x.row(j)));
                }
            }
            std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(min_samples - 1), d.end());
            core[i] = std::sqrt(d[min_samples - 1]);
        },
        threads);
    return core;
}

struct MstEdge {
    std::uint32_t a;
    std::uint32_t b;
    double weight;
};

/**
 * Minimum spanning tree of the mutual-reachability graph
 * `max(core[a], core[b], |a - b|)`, by dense Prim. Edges are returned in insertion order.
 */
inline std::vector<MstEdge> build_mst(const Matrix& x, std::span<const double> core) {
    const std::size_t n = x.rows;
    if (n < 2) {
        throw Error("build_mst: need at least 2 points");
    }
    if (core.size() != n) {
        throw Error("build_mst: core distance count does not match rows");
    }
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<std::uint32_t> from(n, 0);
    std::vector<bool> in_tree(n, false);
    std::vector<MstEdge> edges;
    edges.reserve(n - 1);

    std::size_t current = 0;
    in_tree[0] = true;
    for (std::size_t step = 1; step < n; ++step) {
        const auto xc = x.row(current);
        std::size_t next = n;
        double next_w = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            if (in_tree[j]) {
                continue;
            }
            const double w = std::max({core[current], core[j], std::sqrt(squared_distance(xc, x.row(j)))});
            if (w < best[j]) {
                best[j] = w;
                from[j] = static_cast<std::uint32_t>(current);
            }
            if (best[j] < next_w || next == n) {
                next_w = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push_back({from[next], static_cast<std::uint32_t>(next), next_w});
        current = next;
    }
    return edges;
}

/**
 * Condensed cluster tree. Cluster 0 is the root. Each cluster records its parent, the lambda
 * (1 / distance) at which it was born, its size at birth and its excess-of-mass stability.
 * `point_cluster[p]` / `point_lambda[p]` give the cluster a point last belonged to and the
 * lambda at which it left it.
 */
struct CondensedTree {
    struct Cluster {
        int parent = -1;
        double birth = 0;
        std::size_t size = 0;
        double stability = 0;
        std::vector<int> children;
    };

    std::vector<Cluster> clusters;
    std::vector<int> point_cluster;
    std::vector<double> point_lambda;
};

/**
 * Flat clustering. Labels are -1 for noise and 0..topic_count-1 otherwise, numbered by the
 * smallest member index of each cluster.
 */
struct TopicModel {
    std::vector<int> labels;
    std::size_t min_samples = 0;
    std::size_t min_cluster_size = 0;
    double dbcv = std::numeric_limits<double>::quiet_NaN();
    std::size_t topic_count = 0;

    std::size_t noise_count() const {
        return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), noise_label));
    }
};

struct Extraction {
    std::vector<int> labels;
    std::size_t topic_count = 0;
    CondensedTree tree;
    std::vector<int> selected;  // selected cluster ids, in label order
};

namespace detail {

inline double lambda_of(double distance) {
    return distance > 0 ? 1.0 / distance : std::numeric_limits<double>::infinity();
}

// lambda_point - lambda_birth, with equal infinities contributing nothing.
inline double lambda_excess(double point, double birth) { return point == birth ? 0.0 : point - birth; }

struct UnionFind {
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), std::size_t{0}); }
    std::size_t find(std::size_t i) {
        while (parent[i] != i) {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        return i;
    }
    std::vector<std::size_t> parent;
};

}  // namespace detail

/**
 * Builds the single-linkage hierarchy from `mst` (over `n` points), condenses it with
 * `min_cluster_size`, and selects clusters by excess of mass.
 *
 * Edges of equal weight are merged in one step, so a level at which a cluster breaks into
 * several pieces is treated as one multi-way split. A split spawns new clusters only when at
 * least two pieces have `min_cluster_size` points; smaller pieces fall out of their cluster as
 * noise at that level. A cluster is kept in preference to its descendants iff its stability is
 * at least the total stability of the descendants selected beneath it. The root is never
 * selected.
 */
inline Extraction condense_and_extract(std::span<const MstEdge> mst, std::size_t n, std::size_t min_cluster_size) {
    if (min_cluster_size < 2) {
        throw Error("condense_and_extract: min_cluster_size must be at least 2");
    }
    if (n >= 2 && mst.size() != n - 1) {
        throw Error("condense_and_extract: expected n - 1 MST edges");
    }

    // Multi-way dendrogram: nodes [0, n) are points, later nodes merge whole components.
    struct Node {
        double distance = 0;
        std::size_t size = 1;
        std::vector<std::size_t> children;
    };
    std::vector<Node> nodes(n);
    {
        std::vector<MstEdge> sorted(mst.begin(), mst.end());
        std::stable_sort(sorted.begin(), sorted.end(), [](const MstEdge& l, const MstEdge& r) { return l.weight < r.weight; });
        detail::UnionFind uf(n);
        std::vector<std::size_t> node_of(n);
        std::iota(node_of.begin(), node_of.end(), std::size_t{0});

        for (std::size_t g = 0; g < sorted.size();) {
            std::size_t h = g;
            while (h < sorted.size() && sorted[h].weight == sorted[g].weight) {
                ++h;
            }
            std::vector<std::size_t> roots;
            for (std::size_t e = g; e < h; ++e) {
                roots.push_back(uf.find(sorted[e].a));
                roots.push_back(uf.find(sorted[e].b));
            }
            for (std::size_t e = g; e < h; ++e) {
                const auto ra = uf.find(sorted[e].a), rb = uf.find(sorted[e].b);
                if (ra != rb) {
                    uf.parent[std::max(ra, rb)] = std::min(ra, rb);
                }
            }
            std::sort(roots.begin(), roots.end());
            roots.erase(std::unique(roots.begin(), roots.end()), roots.end());
            std::map<std::size_t, std::vector<std::size_t>> merged;  // new root -> old component nodes
            for (auto r : roots) {
                merged[uf.find(r)].push_back(node_of[r]);
            }
            for (auto& [root, children] : merged) {
                Node node;
                node.distance = sorted[g].weight;
                node.size = 0;
                for (auto c : children) {
                    node.size += nodes[c].size;
                }
                node.children = std::move(children);
                nodes.push_back(std::move(node));
                node_of[root] = nodes.size() - 1;
            }
            g = h;
        }
    }

    Extraction out;
    CondensedTree& tree = out.tree;
    tree.point_cluster.assign(n, 0);
    tree.point_lambda.assign(n, 0.0);
    tree.clusters.push_back({-1, 0.0, n, 0.0, {}});
    if (n < 2) {
        out.labels.assign(n, noise_label);
        return out;
    }

    auto fall_out = [&](std::size_t node, int cluster, double lambda) {
        std::vector<std::size_t> stack{node};
        while (!stack.empty()) {
            const auto v = stack.back();
            stack.pop_back();
            if (v < n) {
                tree.point_cluster[v] = cluster;
                tree.point_lambda[v] = lambda;
            } else {
                for (auto c : nodes[v].children) {
                    stack.push_back(c);
                }
            }
        }
    };

    // (dendrogram node, condensed cluster it belongs to)
    std::vector<std::pair<std::size_t, int>> work{{nodes.size() - 1, 0}};
    while (!work.empty()) {
        const auto [v, cluster] = work.back();
        work.pop_back();
        const Node& node = nodes[v];
        const double lambda = detail::lambda_of(node.distance);
        std::vector<std::size_t> big;
        for (auto c : node.children) {
            if (nodes[c].size >= min_cluster_size) {
                big.push_back(c);
            } else {
                fall_out(c, cluster, lambda);
            }
        }
        if (big.size() == 1) {
            work.emplace_back(big[0], cluster);
        } else if (big.size() >= 2) {
            for (auto c : big) {
                const int id = static_cast<int>(tree.clusters.size());
                tree.clusters.push_back({cluster, lambda, nodes[c].size, 0.0, {}});
                tree.clusters[cluster].children.push_back(id);
                work.emplace_back(c, id);
            }
        }
    }

    for (std::size_t p = 0; p < n; ++p) {
        auto& c = tree.clusters[tree.point_cluster[p]];
        c.stability += detail::lambda_excess(tree.point_lambda[p], c.birth);
    }
    for (std::size_t c = 1; c < tree.clusters.size(); ++c) {
        auto& parent = tree.clusters[tree.clusters[c].parent];
        parent.stability +=
            detail::lambda_excess(tree.clusters[c].birth, parent.birth) * static_cast<double>(tree.clusters[c].size);
    }

    // Children always have larger ids than their parents.
    const std::size_t nc = tree.clusters.size();
    std::vector<bool> selected(nc, false);
    std::vector<double> best(nc, 0.0);
    for (std::size_t c = nc; c-- > 1;) {
        const auto& cl = tree.clusters[c];
        double below = 0;
        for (int ch : cl.children) {
            below += best[ch];
        }
        if (cl.children.empty() || cl.stability >= below) {
            selected[c] = true;
            best[c] = cl.stability;
            std::vector<int> stack(cl.children.begin(), cl.children.end());
            while (!stack.empty()) {
                const int d = stack.back();
                stack.pop_back();
                selected[d] = false;
                stack.insert(stack.end(), tree.clusters[d].children.begin(), tree.clusters[d].children.end());
            }
        } else {
            best[c] = below;
        }
    }

    std::vector<int> owner(n, -1);
    for (std::size_t p = 0; p < n; ++p) {
        for (int c = tree.point_cluster[p]; c > 0; c = tree.clusters[c].parent) {
            if (selected[c]) {
                owner[p] = c;
                break;
            }
        }
    }
    std::vector<int> label_of(nc, noise_label);
    out.labels.assign(n, noise_label);
    for (std::size_t p = 0; p < n; ++p) {
        if (owner[p] < 0) {
            continue;
        }
        if (label_of[owner[p]] == noise_label) {
            label_of[owner[p]] = static_cast<int>(out.selected.size());
            out.selected.push_back(owner[p]);
        }
        out.labels[p] = label_of[owner[p]];
    }
    out.topic_count = out.selected.size();
    return out;
}

inline TopicModel hdbscan(const Matrix& x, std::size_t min_samples, std::size_t min_cluster_size,
                          std::size_t threads = 1) {
    const auto core = core_distances(x, min_samples, threads);
    const auto mst = build_mst(x, core);
    auto ex = condense_and_extract(mst, x.rows, min_cluster_size);
    TopicModel m;
    m.labels = std::move(ex.labels);
    m.min_samples = min_samples;
    m.min_cluster_size = min_cluster_size;
    m.topic_count = ex.topic_count;
    return m;
}

/**
 * Density-Based Clustering Validation index.
 *
 * Within each cluster, a point's all-points core distance is
 * `(mean_j (1 / d(o, j))^dim)^(-1/dim)` over the other members. Mutual reachability uses these
 * core distances. Sparseness is the largest MST edge between internal MST vertices (degree >= 2)
 * of the cluster; separation is the smallest mutual reachability between internal vertices of
 * two clusters. When a cluster's MST has no edge joining two internal vertices, all of its
 * vertices and edges are used. Cluster validity is `(sep - sparse) / max(sep, sparse)` (0 when
 * both vanish) and the index is the size-weighted sum over clusters, weighted by `|C| / N` where
 * N includes noise points.
 */
inline double dbcv_score(const Matrix& x, std::span<const int> labels) {
    if (labels.size() != x.rows) {
        throw Error("dbcv_score: label count does not match rows");
    }
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != noise_label) {
            members[labels[i]].push_back(i);
        }
    }
    if (members.size() < 2) {
        throw Error("dbcv_score: need at least 2 clusters");
    }
    for (const auto& [l, m] : members) {
        if (m.size() < 2) {
            throw Error("dbcv_score: cluster " + std::to_string(l) + " has fewer than 2 points");
        }
    }

    const double dim = static_cast<double>(x.cols);
    std::vector<double> core(x.rows, 0.0);
    for (const auto& [l, m] : members) {
        for (auto o : m) {
            // log of (1/d)^dim summed via log-sum-exp; any zero distance makes the core distance 0.
            std::vector<double> logs;
            logs.reserve(m.size() - 1);
            bool zero = false;
            for (auto j : m) {
                if (j == o) {
                    continue;
                }
                const double d = euclidean(x.row(o), x.row(j));
                if (d == 0) {
                    zero = true;
                    break;
                }
                logs.push_back(-dim * std::log(d));
            }
            if (zero) {
                core[o] = 0;
                continue;
            }
            const double mx = *std::max_element(logs.begin(), logs.end());
            double s = 0;
            for (double v : logs) {
                s += std::exp(v - mx);
            }
            const double log_mean = mx + std::log(s) - std::log(static_cast<double>(logs.size()));
            core[o] = std::exp(-log_mean / dim);
        }
    }
    auto mreach = [&](std::size_t a, std::size_t b) { return std::max({core[a], core[b], euclidean(x.row(a), x.row(b))}); };

    struct Summary {
        double sparseness = 0;
        std::vector<std::size_t> internal;
    };
    std::map<int, Summary> summary;
    for (const auto& [l, m] : members) {
        const std::size_t k = m.size();
        std::vector<double> best(k, std::numeric_limits<double>::infinity());
        std::vector<std::size_t> from(k, 0);
        std::vector<bool> in(k, false);
        std::vector<std::size_t> degree(k, 0);
        std::vector<std::tuple<std::size_t, std::size_t, double>> edges;
        std::size_t cur = 0;
        in[0] = true;
        for (std::size_t step = 1; step < k; ++step) {
            std::size_t nxt = k;
            for (std::size_t j = 0; j < k; ++j) {
                if (in[j]) {
                    continue;
                }
                const double w = mreach(m[cur], m[j]);
                if (w < best[j]) {
                    best[j] = w;
                    from[j] = cur;
                }
                if (nxt == k || best[j] < best[nxt]) {
                    nxt = j;
                }
            }
            in[nxt] = true;
            edges.emplace_back(from[nxt], nxt, best[nxt]);
            ++degree[from[nxt]];
            ++degree[nxt];
            cur = nxt;
        }
        Summary s;
        bool any_internal_edge = false;
        for (const auto& [a, b, w] : edges) {
            if (degree[a] >= 2 && degree[b] >= 2) {
                s.sparseness = any_internal_edge ? std::max(s.sparseness, w) : w;
                any_internal_edge = true;
            }
        }
        if (any_internal_edge) {
            for (std::size_t j = 0; j < k; ++j) {
                if (degree[j] >= 2) {
                    s.internal.push_back(m[j]);
                }
            }
        } else {
            for (const auto& [a, b, w] : edges) {
                s.sparseness = std::max(s.sparseness, w);
            }
            s.internal = m;
        }
        summary.emplace(l, std::move(s));
    }

    double total = 0;
    for (const auto& [l, s] : summary) {
        double separation = std::numeric_limits<double>::infinity();
        for (const auto& [l2, s2] : summary) {
            if (l2 == l) {
                continue;
            }
            for (auto a : s.internal) {
                for (auto b : s2.internal) {
                    separation = std::min(separation, mreach(a, b));
                }
            }
        }
        const double denom = std::max(separation, s.sparseness);
        const double validity = denom > 0 ? (separation - s.sparseness) / denom : 0.0;
        total += validity * static_cast<double>(members.at(l).size());
    }
    return total / static_cast<double>(x.rows);
}

struct TuningCandidate {
    std::size_t min_samples = 0;
    std::size_t min_cluster_size = 0;
    std::size_t topic_count = 0;
    std::size_t noise_count = 0;
    std::optional<double> dbcv;  // empty when the index is undefined for this clustering
    std::string note;
};

struct TuningResult {
    TopicModel best;
    std::vector<TuningCandidate> candidates;
};

/**
 * Runs HDBSCAN for every (min_samples, min_cluster_size) pair and keeps the clustering with the
 * highest DBCV. Ties prefer the smaller min_cluster_size, then the smaller min_samples. Grid
 * cells run in parallel; each cell is deterministic.
 */
inline TuningResult tune_hdbscan(const Matrix& x, std::span<const std::size_t> min_samples_grid,
                                 std::span<const std::size_t> min_cluster_size_grid, std::size_t threads = 0) {
    if (min_samples_grid.empty() || min_cluster_size_grid.empty()) {
        throw Error("tune_hdbscan: empty grid");
    }
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (auto ms : min_samples_grid) {
        for (auto mcs : min_cluster_size_grid) {
            cells.emplace_back(ms, mcs);
        }
    }
    std::vector<TuningCandidate> candidates(cells.size());
    std::vector<TopicModel> models(cells.size());
    parallel_for(
        cells.size(),
        [&](std::size_t c) {
            auto& cand = candidates[c];
            cand.min_samples = cells[c].first;
            cand.min_cluster_size = cells[c].second;
            try {
                models[c] = hdbscan(x, cand.min_samples, cand.min_cluster_size);
                cand.topic_count = models[c].topic_count;
                cand.noise_count = models[c].noise_count();
                models[c].dbcv = dbcv_score(x, models[c].labels);
                cand.dbcv = models[c].dbcv;
            } catch (const Error& e) {
                cand.note = e.what();
            }
        },
        threads);

    std::optional<std::size_t> best;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        if (!candidates[c].dbcv) {
            continue;
        }
        if (!best) {
            best = c;
            continue;
        }
        const auto& a = candidates[c];
        const auto& b = candidates[*best];
        if (*a.dbcv > *b.dbcv ||
            (*a.dbcv == *b.dbcv && (a.min_cluster_size < b.min_cluster_size ||
                                    (a.min_cluster_size == b.min_cluster_size && a.min_samples < b.min_samples)))) {
            best = c;
        }
    }
    if (!best) {
        throw Error("tune_hdbscan: no grid cell produced a clustering with a defined DBCV");
    }
    return {std::move(models[*best]), std::move(candidates)};
}

}  // namespace engage

#endif
