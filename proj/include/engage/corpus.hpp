#ifndef ENGAGE_CORPUS_HPP
#define ENGAGE_CORPUS_HPP

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "common.hpp"

/**
 * @file corpus.hpp
 *
 * @brief Document ingestion, text cleaning and the early/late engager split.
 */

namespace engage {

using Timestamp = std::chrono::sys_seconds;
using Date = std::chrono::sys_days;

struct Document {
    std::string doc_id;
    std::string user_id;
    Timestamp timestamp;
    std::string text;
    bool is_retweet = false;

    bool operator==(const Document&) const = default;
};

/**
 * Calendar used for daily bucketing. Dates are the calendar days of `timestamp + utc_offset`.
 */
struct CalendarOptions {
    std::chrono::seconds utc_offset{0};
};

inline Date date_of(Timestamp ts, const CalendarOptions& cal = {}) {
    return std::chrono::floor<std::chrono::days>(ts + cal.utc_offset);
}

/// Start of `d` in the configured calendar, as a UTC instant.
inline Timestamp start_of(Date d, const CalendarOptions& cal = {}) {
    return Timestamp(d.time_since_epoch()) - cal.utc_offset;
}

inline std::string format_date(Date d) {
    const std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

inline std::string format_timestamp(Timestamp ts) {
    const Date d = std::chrono::floor<std::chrono::days>(ts);
    const std::chrono::hh_mm_ss hms{ts - d};
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%sT%02d:%02d:%02dZ", format_date(d).c_str(), static_cast<int>(hms.hours().count()),
                  static_cast<int>(hms.minutes().count()), static_cast<int>(hms.seconds().count()));
    return buf;
}

namespace detail {

inline bool read_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
    if (pos + len > s.size()) {
        return false;
    }
    for (std::size_t i = pos; i < pos + len; ++i) {
        if (s[i] < '0' || s[i] > '9') {
            return false;
        }
    }
    return std::from_chars(s.data() + pos, s.data() + pos + len, out).ec == std::errc{};
}

}  // namespace detail

/**
 * Parses `YYYY-MM-DD`. Returns nullopt for anything else, including impossible dates.
 */
inline std::optional<Date> parse_date(std::string_view s) {
    int y, m, d;
    if (s.size() != 10 || s[4] != '-' || s[7] != '-' || !detail::read_int(s, 0, 4, y) || !detail::read_int(s, 5, 2, m) ||
        !detail::read_int(s, 8, 2, d)) {
        return std::nullopt;
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                                          std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) {
        return std::nullopt;
    }
    return Date{ymd};
}

/**
 * Parses an ISO-8601 timestamp `YYYY-MM-DD[T ]HH:MM:SS[.fff][Z|±HH:MM|±HHMM]`.
 * A missing zone designator means UTC. Fractional seconds are truncated.
 */
inline std::optional<Timestamp> parse_timestamp(std::string_view s) {
    if (s.size() < 19 || (s[10] != 'T' && s[10] != ' ') || s[13] != ':' || s[16] != ':') {
        return std::nullopt;
    }
    const auto date = parse_date(s.substr(0, 10));
    int hh, mm, ss;
    if (!date || !detail::read_int(s, 11, 2, hh) || !detail::read_int(s, 14, 2, mm) || !detail::read_int(s, 17, 2, ss) ||
        hh > 23 || mm > 59 || ss > 60) {
        return std::nullopt;
    }
    std::size_t pos = 19;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        const std::size_t start = pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
            ++pos;
        }
        if (pos == start) {
            return std::nullopt;
        }
    }
    std::chrono::seconds offset{0};
    if (pos < s.size()) {
        if (s[pos] == 'Z' || s[pos] == 'z') {
            ++pos;
        } else if (s[pos] == '+' || s[pos] == '-') {
            const int sign = s[pos] == '+' ? 1 : -1;
            int oh, om;
            if (!detail::read_int(s, pos + 1, 2, oh)) {
                return std::nullopt;
            }
            std::size_t mpos = pos + 3;
            if (mpos < s.size() && s[mpos] == ':') {
                ++mpos;
            }
            if (!detail::read_int(s, mpos, 2, om) || oh > 23 || om > 59) {
                return std::nullopt;
            }
            offset = std::chrono::seconds(sign * (oh * 3600 + om * 60));
            pos = mpos + 2;
        } else {
            return std::nullopt;
        }
    }
    if (pos != s.size()) {
        return std::nullopt;
    }
    return Timestamp(date->time_since_epoch()) + std::chrono::hours(hh) + std::chrono::minutes(mm) +
           std::chrono::seconds(ss) - offset;
}

struct ParseWarning {
    std::size_t line = 0;  // 1-based
    std::string message;
};

struct ParseOptions {
    /// Inclusive collection window; records outside it are rejected with a warning.
    std::optional<Timestamp> window_begin;
    std::optional<Timestamp> window_end;
};

struct ParseResult {
    std::vector<Document> documents;
    std::vector<ParseWarning> warnings;
    std::size_t duplicates = 0;
};

/**
 * Reads one JSON object per line with fields `doc_id`, `user_id`, `timestamp`, `text` and an
 * optional boolean `is_retweet`. Blank lines are ignored.
 *
 * Malformed records are skipped and reported as warnings carrying their line number; a repeated
 * `doc_id` keeps the first occurrence. A stream that fails at the I/O level throws `Error`.
 */
inline ParseResult parse_corpus(std::istream& in, const ParseOptions& options = {}) {
    ParseResult result;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;

    auto warn = [&](std::string msg) { result.warnings.push_back({lineno, std::move(msg)}); };

    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            warn(std::string("invalid JSON: ") + e.what());
            continue;
        }
        if (!rec.is_object()) {
            warn("record is not an object");
            continue;
        }

        Document doc;
        bool ok = true;
        for (const char* key : {"doc_id", "user_id", "timestamp", "text"}) {
            auto it = rec.find(key);
            if (it == rec.end() || !it->is_string()) {
                warn(std::string("missing or non-string field '") + key + "'");
                ok = false;
                break;
            }
        }
        if (!ok) {
            continue;
        }
        doc.doc_id = rec["doc_id"].get<std::string>();
        doc.user_id = rec["user_id"].get<std::string>();
        doc.text = rec["text"].get<std::string>();
        if (doc.doc_id.empty() || doc.user_id.empty()) {
            warn("empty doc_id or user_id");
            continue;
        }
        if (doc.text.empty()) {
            warn("empty text");
            continue;
        }
        const auto ts = parse_timestamp(rec["timestamp"].get<std::string>());
        if (!ts) {
            warn("unparseable timestamp '" + rec["timestamp"].get<std::string>() + "'");
            continue;
        }
        doc.timestamp = *ts;
        if ((options.window_begin && doc.timestamp < *options.window_begin) ||
            (options.window_end && doc.timestamp > *options.window_end)) {
            warn("timestamp outside collection window");
            continue;
        }
        if (auto it = rec.find("is_retweet"); it != rec.end()) {
            if (!it->is_boolean()) {
                warn("is_retweet must be a boolean");
                continue;
            }
            doc.is_retweet = it->get<bool>();
        }
        if (!seen.insert(doc.doc_id).second) {
            ++result.duplicates;
            warn("duplicate doc_id '" + doc.doc_id + "' ignored");
            continue;
        }
        result.documents.push_back(std::move(doc));
    }
    if (in.bad()) {
        throw Error("corpus stream became unreadable at line " + std::to_string(lineno));
    }
    return result;
}

namespace detail {

// U+00A0 and U+3000 are common in Japanese posts alongside ASCII whitespace.
inline std::size_t whitespace_width(std::string_view s, std::size_t i) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
        return 1;
    }
    if (c == 0xC2 && i + 1 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0xA0) {
        return 2;
    }
    if (c == 0xE3 && i + 2 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0x80 &&
        static_cast<unsigned char>(s[i + 2]) == 0x80) {
        return 3;
    }
    return 0;
}

inline bool starts_with_nocase(std::string_view s, std::size_t i, std::string_view prefix) {
    if (s.size() - i < prefix.size()) {
        return false;
    }
    for (std::size_t k = 0; k < prefix.size(); ++k) {
        char c = s[i + k];
        if (c >= 'A' && c <= 'Z') {
            c = static_cast<char>(c - 'A' + 'a');
        }
        if (c != prefix[k]) {
            return false;
        }
    }
    return true;
}

inline bool is_handle_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

}  // namespace detail

/**
 * Removes @-mentions, `http(s)://` URLs and bare `t.co/` shortlinks, then collapses runs of
 * whitespace to one ASCII space and trims both ends. Removed entities are replaced by a space
 * before collapsing so that no new entity can form across a removal; this keeps the function
 * idempotent.
 */
inline std::string clean_text(std::string_view text) {
    std::string stripped;
    stripped.reserve(text.size());
    std::size_t i = 0;
    bool token_start = true;
    auto skip_to_whitespace = [&]() {
        while (i < text.size() && detail::whitespace_width(text, i) == 0) {
            ++i;
        }
    };
    while (i < text.size()) {
        if (const auto w = detail::whitespace_width(text, i); w > 0) {
            stripped.push_back(' ');
            i += w;
            token_start = true;
            continue;
        }
        if (detail::starts_with_nocase(text, i, "http://") || detail::starts_with_nocase(text, i, "https://") ||
            (token_start && detail::starts_with_nocase(text, i, "t.co/"))) {
            skip_to_whitespace();
            stripped.push_back(' ');
            continue;
        }
        if (text[i] == '@' && i + 1 < text.size() && detail::is_handle_char(text[i + 1])) {
            ++i;
            while (i < text.size() && detail::is_handle_char(text[i])) {
                ++i;
            }
            stripped.push_back(' ');
            token_start = true;
            continue;
        }
        stripped.push_back(text[i]);
        token_start = false;
        ++i;
    }

    std::string out;
    out.reserve(stripped.size());
    for (char c : stripped) {
        if (c == ' ') {
            if (!out.empty() && out.back() != ' ') {
                out.push_back(' ');
            }
        } else {
            out.push_back(c);
        }
    }
    if (!out.empty() && out.back() == ' ') {
        out.pop_back();
    }
    return out;
}

struct DailyCount {
    Date date;
    std::uint64_t new_users = 0;

    bool operator==(const DailyCount&) const = default;
};

/**
 * Number of users whose first post falls on each day. Days are contiguous; days without
 * a first post carry a zero count.
 */
struct DailySeries {
    std::vector<DailyCount> days;
};

/// Earliest post time per user, over all documents including retweets.
inline std::unordered_map<std::string, Timestamp> first_post_times(std::span<const Document> documents) {
    std::unordered_map<std::string, Timestamp> first;
    for (const auto& d : documents) {
        auto [it, inserted] = first.try_emplace(d.user_id, d.timestamp);
        if (!inserted && d.timestamp < it->second) {
            it->second = d.timestamp;
        }
    }
    return first;
}

inline DailySeries first_post_series(std::span<const Document> documents, const CalendarOptions& cal = {}) {
    if (documents.empty()) {
        throw Error("first_post_series: no documents");
    }
    std::map<Date, std::uint64_t> counts;
    for (const auto& [user, ts] : first_post_times(documents)) {
        ++counts[date_of(ts, cal)];
    }
    DailySeries series;
    const Date first = counts.begin()->first;
    const Date last = counts.rbegin()->first;
    for (Date d = first; d <= last; d += std::chrono::days{1}) {
        auto it = counts.find(d);
        series.days.push_back({d, it == counts.end() ? 0 : it->second});
    }
    return series;
}

/**
 * Returns the date whose trailing `window`-day mean of new users is smallest, the window
 * ending at (and including) that date. Only dates with a full window are eligible; ties go
 * to the earliest date.
 */
inline Date split_threshold(const DailySeries& series, std::size_t window = 7) {
    if (window == 0) {
        throw Error("split_threshold: window must be positive");
    }
    const auto& days = series.days;
    if (days.size() < window) {
        throw Error("split_threshold: series has " + std::to_string(days.size()) + " days, window needs " +
                    std::to_string(window));
    }
    // Equal-width windows: comparing integer sums is comparing means, without rounding.
    std::uint64_t sum = 0;
    for (std::size_t i = 0; i < window; ++i) {
        sum += days[i].new_users;
    }
    std::uint64_t best_sum = sum;
    std::size_t best = window - 1;
    for (std::size_t i = window; i < days.size(); ++i) {
        sum += days[i].new_users;
        sum -= days[i - window].new_users;
        if (sum < best_sum) {
            best_sum = sum;
            best = i;
        }
    }
    return days[best].date;
}

/**
 * Documents with a cohort assignment for every author. Users whose first post is strictly
 * before `threshold_date` (in the configured calendar) are early engagers; everyone else is late.
 */
struct GroupedCorpus {
    std::vector<Document> documents;
    Date threshold_date;
    Date analysis_start;
    CalendarOptions calendar;
    std::unordered_map<std::string, Group> group_of;

    Group group(const Document& d) const { return group_of.at(d.user_id); }

    /// Documents dated on or after `analysis_start`.
    bool in_analysis(const Document& d) const { return d.timestamp >= start_of(analysis_start, calendar); }

    std::vector<const Document*> analysis_documents() const {
        std::vector<const Document*> out;
        for (const auto& d : documents) {
            if (in_analysis(d)) {
                out.push_back(&d);
            }
        }
        return out;
    }

    /// Distinct users of each cohort with at least one document in the analysis window.
    std::pair<std::size_t, std::size_t> analysis_user_counts() const {
        std::unordered_set<std::string> early, late;
        for (const auto& d : documents) {
            if (in_analysis(d)) {
                (group(d) == Group::early ? early : late).insert(d.user_id);
            }
        }
        return {early.size(), late.size()};
    }
};

inline GroupedCorpus assign_groups(std::vector<Document> documents, Date threshold_date, Date analysis_start,
                                   const CalendarOptions& cal = {}) {
    GroupedCorpus out;
    out.threshold_date = threshold_date;
    out.analysis_start = analysis_start;
    out.calendar = cal;
    const Timestamp boundary = start_of(threshold_date, cal);
    for (const auto& [user, ts] : first_post_times(documents)) {
        out.group_of.emplace(user, ts < boundary ? Group::early : Group::late);
    }
    out.documents = std::move(documents);
    return out;
}

inline std::string serialize_corpus(const GroupedCorpus& corpus) {
    ByteWriter w;
    w.put<std::int64_t>(corpus.threshold_date.time_since_epoch().count());
    w.put<std::int64_t>(corpus.analysis_start.time_since_epoch().count());
    w.put<std::int64_t>(corpus.calendar.utc_offset.count());
    w.put<std::uint64_t>(corpus.documents.size());
    for (const auto& d : corpus.documents) {
        w.put_string(d.doc_id);
        w.put_string(d.user_id);
        w.put<std::int64_t>(d.timestamp.time_since_epoch().count());
        w.put_string(d.text);
        w.put<std::uint8_t>(d.is_retweet ? 1 : 0);
    }
    std::vector<std::pair<std::string, Group>> groups(corpus.group_of.begin(), corpus.group_of.end());
    std::sort(groups.begin(), groups.end());
    w.put<std::uint64_t>(groups.size());
    for (const auto& [user, g] : groups) {
        w.put_string(user);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(g));
    }
    return wrap_container(ContainerKind::corpus, w.bytes());
}

inline GroupedCorpus deserialize_corpus(std::string_view bytes) {
    const std::string payload = unwrap_container(bytes, ContainerKind::corpus);
    ByteReader r(payload);
    GroupedCorpus c;
    c.threshold_date = Date(std::chrono::days(r.get<std::int64_t>()));
    c.analysis_start = Date(std::chrono::days(r.get<std::int64_t>()));
    c.calendar.utc_offset = std::chrono::seconds(r.get<std::int64_t>());
    const auto n = r.get<std::uint64_t>();
    c.documents.reserve(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        Document d;
        d.doc_id = r.get_string();
        d.user_id = r.get_string();
        d.timestamp = Timestamp(std::chrono::seconds(r.get<std::int64_t>()));
        d.text = r.get_string();
        d.is_retweet = r.get<std::uint8_t>() != 0;
        c.documents.push_back(std::move(d));
    }
    const auto g = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < g; ++i) {
        auto user = r.get_string();
        const auto grp = r.get<std::uint8_t>();
        if (grp > 1) {
            throw FormatError("invalid group tag");
        }
        c.group_of.emplace(std::move(user), static_cast<Group>(grp));
    }
    if (!r.exhausted()) {
        throw FormatError("trailing bytes in corpus payload");
    }
    for (const auto& d : c.documents) {
        if (!c.group_of.contains(d.user_id)) {
            throw FormatError("document '" + d.doc_id + "' has an author without a group");
        }
    }
    return c;
}

}  // namespace engage

#endif
