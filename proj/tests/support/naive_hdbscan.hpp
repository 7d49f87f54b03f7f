#ifndef ENGAGE_TESTS_NAIVE_HDBSCAN_HPP
#define ENGAGE_TESTS_NAIVE_HDBSCAN_HPP

// Reference HDBSCAN written straight from the definitions: connected components of the full
// mutual-reachability graph at each threshold, no spanning tree or dendrogram.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "common.hpp"

namespace naive {

using engage::Matrix;

inline std::vector<std::vector<double>> mutual_reachability(const Matrix& x, std::size_t min_samples) {
    const std::size_t n = x.rows;
    std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < x.cols; ++k) {
                s += (x(i, k) - x(j, k)) * (x(i, k) - x(j, k));
            }
            d[i][j] = std::sqrt(s);
        }
    }
    std::vector<double> core(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> others;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                others.push_back(d[i][j]);
            }
        }
        std::sort(others.begin(), others.end());
        core[i] = others[min_samples - 1];
    }
    auto m = d;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            m[i][j] = i == j ? 0.0 : std::max({core[i], core[j], d[i][j]});
        }
    }
    return m;
}

/// Components of `members` using only edges with weight strictly below `level`.
inline std::vector<std::vector<std::size_t>> components_below(const std::vector<std::vector<double>>& w,
                                                              const std::vector<std::size_t>& members, double level) {
    std::vector<int> comp(members.size(), -1);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < members.size(); ++s) {
        if (comp[s] >= 0) {
            continue;
        }
        const int id = static_cast<int>(out.size());
        out.emplace_back();
        std::vector<std::size_t> stack{s};
        comp[s] = id;
        while (!stack.empty()) {
            const auto a = stack.back();
            stack.pop_back();
            out[id].push_back(members[a]);
            for (std::size_t b = 0; b < members.size(); ++b) {
                if (comp[b] < 0 && w[members[a]][members[b]] < level) {
                    comp[b] = id;
                    stack.push_back(b);
                }
            }
        }
    }
    return out;
}

/// Smallest level w such that `members` is connected through edges of weight <= w.
inline double bottleneck(const std::vector<std::vector<double>>& w, const std::vector<std::size_t>& members) {
    std::vector<double> levels;
    for (std::size_t a = 0; a < members.size(); ++a) {
        for (std::size_t b = a + 1; b < members.size(); ++b) {
            levels.push_back(w[members[a]][members[b]]);
        }
    }
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    std::size_t lo = 0, hi = levels.size() - 1;
    while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        // connected using edges <= levels[mid]  <=>  connected below the next level up
        const double probe = std::nextafter(levels[mid], std::numeric_limits<double>::infinity());
        if (components_below(w, members, probe).size() == 1) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    return levels[lo];
}

inline double lambda_of(double w) { return w > 0 ? 1.0 / w : std::numeric_limits<double>::infinity(); }

inline double excess(double lambda, double birth) { return lambda == birth ? 0.0 : lambda - birth; }

struct Cluster {
    int parent = -1;
    double birth = 0;
    std::vector<std::size_t> members;  // at birth
    std::vector<int> children;
    double stability = 0;
};

/// Labels with clusters numbered by their smallest member index; -1 is noise.
inline std::vector<int> hdbscan(const Matrix& x, std::size_t min_samples, std::size_t min_cluster_size) {
    const std::size_t n = x.rows;
    const auto w = mutual_reachability(x, min_samples);
    std::vector<Cluster> clusters;
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) {
        all[i] = i;
    }
    clusters.push_back({-1, 0.0, all, {}, 0.0});

    std::vector<int> todo{0};
    while (!todo.empty()) {
        const int c = todo.back();
        todo.pop_back();
        std::vector<std::size_t> current = clusters[c].members;
        const double birth = clusters[c].birth;
        while (current.size() >= 2) {
            const double level = bottleneck(w, current);
            const double lambda = lambda_of(level);
            const auto pieces = components_below(w, current, level);
            std::vector<std::vector<std::size_t>> big;
            for (const auto& p : pieces) {
                if (p.size() >= min_cluster_size) {
                    big.push_back(p);
                } else {
                    clusters[c].stability += excess(lambda, birth) * static_cast<double>(p.size());
                }
            }
            if (big.size() == 1) {
                current = big[0];
                continue;
            }
            for (const auto& p : big) {
                const int id = static_cast<int>(clusters.size());
                clusters.push_back({c, lambda, p, {}, 0.0});
                clusters[c].children.push_back(id);
                clusters[c].stability += excess(lambda, birth) * static_cast<double>(p.size());
                todo.push_back(id);
            }
            break;
        }
    }

    // Excess of mass, children before parents; the root is never chosen.
    std::vector<int> order;
    std::vector<int> stack{0};
    while (!stack.empty()) {
        const int c = stack.back();
        stack.pop_back();
        order.push_back(c);
        for (int ch : clusters[c].children) {
            stack.push_back(ch);
        }
    }
    std::vector<double> value(clusters.size(), 0.0);
    std::vector<bool> chosen(clusters.size(), false);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const int c = *it;
        if (c == 0) {
            continue;
        }
        double below = 0;
        for (int ch : clusters[c].children) {
            below += value[ch];
        }
        if (clusters[c].children.empty() || clusters[c].stability >= below) {
            value[c] = clusters[c].stability;
            chosen[c] = true;
        } else {
            value[c] = below;
        }
    }
    // A chosen cluster overrides everything chosen below it.
    std::vector<int> labels(n, -1);
    for (int c : order) {
        if (c == 0 || !chosen[c]) {
            continue;
        }
        bool ancestor_chosen = false;
        for (int a = clusters[c].parent; a > 0; a = clusters[a].parent) {
            ancestor_chosen = ancestor_chosen || chosen[a];
        }
        if (ancestor_chosen) {
            continue;
        }
        for (auto p : clusters[c].members) {
            labels[p] = c;
        }
    }
    std::map<int, int> rename;
    for (auto& l : labels) {
        if (l >= 0) {
            auto [it, inserted] = rename.emplace(l, static_cast<int>(rename.size()));
            l = it->second;
        }
    }
    return labels;
}

/// Fraction of point pairs on which two labelings agree (same cluster vs different). Noise
/// (-1) points are singletons.
inline double rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    const std::size_t n = a.size();
    if (n < 2) {
        return 1.0;
    }
    std::size_t agree = 0, total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool same_a = a[i] >= 0 && a[i] == a[j];
            const bool same_b = b[i] >= 0 && b[i] == b[j];
            agree += same_a == same_b;
            ++total;
        }
    }
    return static_cast<double>(agree) / static_cast<double>(total);
}

}  // namespace naive

#endif
