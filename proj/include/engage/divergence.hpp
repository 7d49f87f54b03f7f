#ifndef ENGAGE_DIVERGENCE_HPP
#define ENGAGE_DIVERGENCE_HPP

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "common.hpp"
#include "topic_filter.hpp"
#include "topics.hpp"

/**
 * @file divergence.hpp
 *
 * @brief Between-cohort topic comparison: normalised topic shares, per-topic Jensen-Shannon
 * contributions, outlier topics and per-capita activity statistics.
 */

namespace engage {

struct TopicCounts {
    int topic_id = 0;
    std::size_t early = 0;
    std::size_t late = 0;
};

/// Documents of each cohort in every retained topic, in ascending topic order.
inline std::vector<TopicCounts> retained_topic_counts(const TopicTable& table) {
    std::vector<TopicCounts> out;
    for (int t : table.retained) {
        out.push_back({t, 0, 0});
    }
    for (std::size_t i = 0; i < table.labels.size(); ++i) {
        const int l = table.labels[i];
        if (l == noise_label || !table.is_retained(l)) {
            continue;
        }
        auto it = std::lower_bound(out.begin(), out.end(), l, [](const TopicCounts& c, int v) { return c.topic_id < v; });
        (table.rows[i].group == Group::early ? it->early : it->late) += 1;
    }
    return out;
}

struct TopicShares {
    std::vector<double> p;  // early cohort
    std::vector<double> q;  // late cohort
};

/**
 * Each cohort's distribution over the given topics: p_i = early_i / sum(early), q likewise.
 */
inline TopicShares topic_distributions(std::span<const TopicCounts> counts) {
    if (counts.empty()) {
        throw Error("topic_distributions: no topics");
    }
    double early = 0, late = 0;
    for (const auto& c : counts) {
        early += static_cast<double>(c.early);
        late += static_cast<double>(c.late);
    }
    if (early == 0 || late == 0) {
        throw Error(std::string("topic_distributions: the ") + (early == 0 ? "early" : "late") +
                    " cohort has no documents in the retained topics");
    }
    TopicShares s;
    for (const auto& c : counts) {
        s.p.push_back(static_cast<double>(c.early) / early);
        s.q.push_back(static_cast<double>(c.late) / late);
    }
    return s;
}

/**
 * One topic's term of the Jensen-Shannon divergence (base-2 logarithm):
 * 1/2 p log(p / m) + 1/2 q log(q / m) with m = (p + q) / 2 and 0 log(0 / m) = 0.
 */
inline double topic_divergence(double p, double q) {
    if (!(p >= 0 && p <= 1 && q >= 0 && q <= 1)) {
        throw Error("topic_divergence: proportions must lie in [0, 1]");
    }
    const double m = 0.5 * (p + q);
    double out = 0;
    if (p > 0) {
        out += 0.5 * p * std::log2(p / m);
    }
    if (q > 0) {
        out += 0.5 * q * std::log2(q / m);
    }
    return std::max(0.0, out);
}

struct TopicDivergence {
    int topic_id = 0;
    std::size_t n_early = 0;
    std::size_t n_late = 0;
    double p = 0;
    double q = 0;
    double score = 0;
    bool outlier = false;

    double midpoint() const { return 0.5 * (p + q); }
    Group dominant() const { return p > q ? Group::early : Group::late; }
};

inline std::vector<TopicDivergence> topic_divergences(std::span<const TopicCounts> counts) {
    const auto shares = topic_distributions(counts);
    std::vector<TopicDivergence> out;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        out.push_back({counts[i].topic_id, counts[i].early, counts[i].late, shares.p[i], shares.q[i],
                       topic_divergence(shares.p[i], shares.q[i]), false});
    }
    return out;
}

struct OutlierTopic {
    int topic_id = 0;
    double score = 0;
    Group dominant = Group::early;
};

/**
 * Topics whose score lies strictly above the high IQR fence, by descending score
 * (ties by ascending topic id). Marks them in `topics`.
 */
inline std::vector<OutlierTopic> rank_outlier_topics(std::span<TopicDivergence> topics, double multiplier = 4.0) {
    std::vector<double> scores;
    for (const auto& t : topics) {
        scores.push_back(t.score);
    }
    const auto fences = iqr_fences(scores, multiplier);
    std::vector<OutlierTopic> out;
    for (auto& t : topics) {
        t.outlier = t.score > fences.high;
        if (t.outlier) {
            out.push_back({t.topic_id, t.score, t.dominant()});
        }
    }
    std::sort(out.begin(), out.end(), [](const OutlierTopic& a, const OutlierTopic& b) {
        return a.score > b.score || (a.score == b.score && a.topic_id < b.topic_id);
    });
    return out;
}

/// Topic ids by descending score (ties by ascending id).
inline std::vector<int> rank_by_score(std::span<const TopicDivergence> topics) {
    std::vector<const TopicDivergence*> order;
    for (const auto& t : topics) {
        order.push_back(&t);
    }
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) {
        return a->score > b->score || (a->score == b->score && a->topic_id < b->topic_id);
    });
    std::vector<int> out;
    for (auto* t : order) {
        out.push_back(t->topic_id);
    }
    return out;
}

struct ScatterStats {
    /// Points are (early count, late count). Strict inequalities; points on a line count for neither side.
    double above_diagonal = 0;  // late > early
    double below_diagonal = 0;  // late < early
    double per_capita_slope = 0;  // |L| / |E|
    double below_per_capita = 0;  // late < slope * early: early users post more per person
    double above_per_capita = 0;
    std::vector<double> early_per_person;
    std::vector<double> late_per_person;
};

inline ScatterStats engagement_scatter_stats(std::span<const TopicCounts> counts, std::size_t early_users,
                                             std::size_t late_users) {
    if (early_users == 0 || late_users == 0) {
        throw Error("engagement_scatter_stats: both cohorts need at least one user");
    }
    ScatterStats s;
    s.per_capita_slope = static_cast<double>(late_users) / static_cast<double>(early_users);
    if (counts.empty()) {
        return s;
    }
    std::size_t above = 0, below = 0, below_pc = 0, above_pc = 0;
    for (const auto& c : counts) {
        const auto e = static_cast<double>(c.early), l = static_cast<double>(c.late);
        above += l > e;
        below += l < e;
        // l < (L/E) e  <=>  l * E < L * e, compared exactly in integers.
        const auto lhs = static_cast<unsigned long long>(c.late) * early_users;
        const auto rhs = static_cast<unsigned long long>(c.early) * late_users;
        below_pc += lhs < rhs;
        above_pc += lhs > rhs;
        s.early_per_person.push_back(e / static_cast<double>(early_users));
        s.late_per_person.push_back(l / static_cast<double>(late_users));
    }
    const auto n = static_cast<double>(counts.size());
    s.above_diagonal = static_cast<double>(above) / n;
    s.below_diagonal = static_cast<double>(below) / n;
    s.below_per_capita = static_cast<double>(below_pc) / n;
    s.above_per_capita = static_cast<double>(above_pc) / n;
    return s;
}

}  // namespace engage

#endif
