#ifndef ENGAGE_TOPIC_FILTER_HPP
#define ENGAGE_TOPIC_FILTER_HPP

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "common.hpp"
#include "topics.hpp"

/**
 * @file topic_filter.hpp
 *
 * @brief User-concentration metric per topic and IQR fencing of concentrated topics.
 */

namespace engage {

/**
 * Fraction of a topic's distinct users needed to produce half of its documents.
 *
 * Users are ranked by document count (descending, ties by ascending user id); the result is
 * m / U where m is the smallest prefix whose cumulative count reaches ceil(total / 2) and U the
 * number of distinct users.
 */
inline double user_half_line(std::span<const std::string> authors) {
    if (authors.empty()) {
        throw Error("user_half_line: empty topic");
    }
    std::map<std::string, std::size_t> counts;
    for (const auto& a : authors) {
        ++counts[a];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& l, const auto& r) { return l.second > r.second; });
    const std::size_t half = (authors.size() + 1) / 2;
    std::size_t cumulative = 0;
    std::size_t m = 0;
    while (cumulative < half) {
        cumulative += ranked[m++].second;
    }
    return static_cast<double>(m) / static_cast<double>(ranked.size());
}

/**
 * Value at fractional position p * (n - 1) of the sorted data, linearly interpolated.
 */
inline double interpolated_quantile(std::vector<double> values, double p) {
    if (values.empty()) {
        throw Error("quantile of empty data");
    }
    std::sort(values.begin(), values.end());
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct Fences {
    double q1 = 0;
    double q3 = 0;
    double low = 0;
    double high = 0;

    double iqr() const { return q3 - q1; }
};

inline Fences iqr_fences(std::span<const double> values, double multiplier) {
    if (values.size() < 4) {
        throw Error("iqr_fences: need at least 4 values");
    }
    std::vector<double> v(values.begin(), values.end());
    Fences f;
    f.q1 = interpolated_quantile(v, 0.25);
    f.q3 = interpolated_quantile(v, 0.75);
    f.low = f.q1 - multiplier * f.iqr();
    f.high = f.q3 + multiplier * f.iqr();
    return f;
}

struct TopicConcentration {
    int topic_id = 0;
    std::size_t tweet_count = 0;
    double user_half_line = 0;
};

/// Half line of every topic in `table` (all topics, noise excluded).
inline std::vector<TopicConcentration> topic_concentrations(const TopicTable& table) {
    std::vector<TopicConcentration> out;
    for (const auto& [topic, rows] : table.members()) {
        std::vector<std::string> authors;
        authors.reserve(rows.size());
        for (auto r : rows) {
            authors.push_back(table.rows[r].user_id);
        }
        out.push_back({topic, rows.size(), user_half_line(authors)});
    }
    return out;
}

struct FilterResult {
    std::vector<int> retained;
    std::vector<int> excluded;
    double cutoff = 0;  // low fence on the half line
};

/**
 * Excludes topics whose half line is strictly below the low IQR fence. High-side outliers are
 * kept. The retained ids are returned ascending.
 */
inline FilterResult filter_topics(std::span<const TopicConcentration> topics, double multiplier = 1.5) {
    std::vector<double> lines;
    lines.reserve(topics.size());
    for (const auto& t : topics) {
        lines.push_back(t.user_half_line);
    }
    const auto fences = iqr_fences(lines, multiplier);
    FilterResult out;
    out.cutoff = fences.low;
    for (const auto& t : topics) {
        (t.user_half_line < fences.low ? out.excluded : out.retained).push_back(t.topic_id);
    }
    std::sort(out.retained.begin(), out.retained.end());
    std::sort(out.excluded.begin(), out.excluded.end());
    return out;
}

}  // namespace engage

#endif
