#ifndef ENGAGE_TOPICS_HPP
#define ENGAGE_TOPICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "clusterer.hpp"
#include "embedder.hpp"

namespace engage {

/**
 * Topic assignment for every embedded document, as stored in `topics.bin` and
 * `topics_filtered.bin`. `retained` lists the topic ids that downstream analyses use; it starts
 * as every topic and is narrowed by the concentration filter.
 */
struct TopicTable {
    std::vector<RowMeta> rows;
    std::vector<int> labels;
    std::uint64_t early_users = 0;
    std::uint64_t late_users = 0;
    std::uint32_t min_samples = 0;
    std::uint32_t min_cluster_size = 0;
    double dbcv = std::numeric_limits<double>::quiet_NaN();
    std::uint32_t topic_count = 0;
    std::vector<int> retained;
    double half_line_cutoff = std::numeric_limits<double>::quiet_NaN();

    bool is_retained(int topic) const { return std::binary_search(retained.begin(), retained.end(), topic); }

    /// Row indices per topic id (noise excluded).
    std::map<int, std::vector<std::size_t>> members() const {
        std::map<int, std::vector<std::size_t>> out;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] != noise_label) {
                out[labels[i]].push_back(i);
            }
        }
        return out;
    }
};

inline TopicTable make_topic_table(const EmbeddingSet& source, const TopicModel& model) {
    TopicTable t;
    t.rows = source.rows;
    t.labels = model.labels;
    t.early_users = source.early_users;
    t.late_users = source.late_users;
    t.min_samples = static_cast<std::uint32_t>(model.min_samples);
    t.min_cluster_size = static_cast<std::uint32_t>(model.min_cluster_size);
    t.dbcv = model.dbcv;
    t.topic_count = static_cast<std::uint32_t>(model.topic_count);
    for (std::uint32_t k = 0; k < t.topic_count; ++k) {
        t.retained.push_back(static_cast<int>(k));
    }
    return t;
}

inline std::string serialize_topics(const TopicTable& t) {
    ByteWriter w;
    w.put<std::uint64_t>(t.early_users);
    w.put<std::uint64_t>(t.late_users);
    w.put<std::uint32_t>(t.min_samples);
    w.put<std::uint32_t>(t.min_cluster_size);
    w.put<double>(t.dbcv);
    w.put<std::uint32_t>(t.topic_count);
    w.put<double>(t.half_line_cutoff);
    w.put<std::uint64_t>(t.rows.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        w.put_string(t.rows[i].doc_id);
        w.put_string(t.rows[i].user_id);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rows[i].group));
        w.put<std::int32_t>(t.labels[i]);
    }
    std::vector<std::int32_t> retained(t.retained.begin(), t.retained.end());
    w.put_vector(retained);
    return wrap_container(ContainerKind::topics, w.bytes());
}

inline TopicTable deserialize_topics(std::string_view bytes) {
    const std::string payload = unwrap_container(bytes, ContainerKind::topics);
    ByteReader r(payload);
    TopicTable t;
    t.early_users = r.get<std::uint64_t>();
    t.late_users = r.get<std::uint64_t>();
    t.min_samples = r.get<std::uint32_t>();
    t.min_cluster_size = r.get<std::uint32_t>();
    t.dbcv = r.get<double>();
    t.topic_count = r.get<std::uint32_t>();
    t.half_line_cutoff = r.get<double>();
    const auto n = r.get<std::uint64_t>();
    if (n > payload.size()) {
        throw FormatError("row count larger than payload");
    }
    t.rows.resize(n);
    t.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        t.rows[i].doc_id = r.get_string();
        t.rows[i].user_id = r.get_string();
        const auto g = r.get<std::uint8_t>();
        if (g > 1) {
            throw FormatError("invalid group tag");
        }
        t.rows[i].group = static_cast<Group>(g);
        t.labels[i] = r.get<std::int32_t>();
        if (t.labels[i] < noise_label || t.labels[i] >= static_cast<int>(t.topic_count)) {
            throw FormatError("topic label out of range");
        }
    }
    const auto retained = r.get_vector<std::int32_t>();
    t.retained.assign(retained.begin(), retained.end());
    if (!std::is_sorted(t.retained.begin(), t.retained.end())) {
        throw FormatError("retained topic list not sorted");
    }
    if (!r.exhausted()) {
        throw FormatError("trailing bytes in topics payload");
    }
    return t;
}

}  // namespace engage

#endif
