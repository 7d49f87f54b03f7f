#ifndef ENGAGE_SYNTHETIC_HPP
#define ENGAGE_SYNTHETIC_HPP

#include <chrono>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "corpus.hpp"

/**
 * @file synthetic.hpp
 *
 * @brief Corpus generator with planted topics and a planted engager split, used by the
 * end-to-end tests and the `synth` subcommand.
 *
 * Six topics share one timeline. Topic 0 is written only by early engagers and topic 1 only by
 * late engagers. In topic 2 every document draws on a common core vocabulary plus one of two
 * sub-vocabularies; early engagers only ever use the first, late engagers use both. The remaining
 * topics are split evenly between the cohorts. Every user's first post is a retweet on a day
 * drawn from a V-shaped new-user curve.
 */

namespace engage {

struct SyntheticOptions {
    std::size_t documents = 5000;
    std::size_t users = 500;
    std::size_t days = 60;
    std::size_t valley_day = 25;  // new-user curve is lowest around here
    std::size_t exclusive_size = 500;  // documents in each single-cohort topic
    std::uint64_t seed = 7;
    Date start = Date{std::chrono::year{2023} / 1 / 1};
};

struct SyntheticCorpus {
    std::vector<Document> documents;
    std::unordered_map<std::string, int> planted_topic;  // doc_id -> topic; retweets absent
    std::unordered_map<std::string, int> planted_variant;  // asymmetric topic only: 1 or 2
    std::unordered_map<std::string, Group> planted_group;  // user_id -> cohort
    Date threshold;
    int exclusive_early = 0;
    int exclusive_late = 1;
    int asymmetric = 2;
    std::size_t topic_count = 6;
};

namespace detail {

struct TopicVocabulary {
    std::vector<std::string> core;
    std::vector<std::string> variant_a;
    std::vector<std::string> variant_b;
};

inline std::vector<TopicVocabulary> synthetic_vocabularies() {
    return {
        {{"museum", "painting", "gallery", "sculpture", "canvas", "exhibit", "portrait", "curator", "brush", "fresco"}, {}, {}},
        {{"tax", "invoice", "ledger", "audit", "payroll", "receipt", "budget", "deduction", "accountant", "spreadsheet"}, {}, {}},
        {{"homework", "essay", "teacher", "student", "classroom", "exam", "grading", "lecture", "syllabus", "tutor"},
         {"plagiarism", "cheating", "ban", "detector", "honesty", "policy"},
         {"lesson", "worksheet", "quiz", "rubric", "curriculum", "feedback"}},
        {{"python", "debug", "compiler", "function", "variable", "stacktrace", "refactor", "library", "syntax", "runtime"}, {}, {}},
        {{"recipe", "kitchen", "oven", "flour", "garlic", "simmer", "dessert", "spice", "baking", "dinner"}, {}, {}},
        {{"guitar", "melody", "chord", "lyrics", "drummer", "concert", "album", "rhythm", "tempo", "chorus"}, {}, {}},
    };
}

inline const std::vector<std::string>& filler_words() {
    static const std::vector<std::string> words{"chatgpt", "ai", "tried", "today", "really", "asked", "answer", "wow"};
    return words;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

inline std::string synthetic_text(std::mt19937_64& rng, const TopicVocabulary& vocab, int variant) {
    const std::size_t length = 9 + pick(rng, 6);
    std::string text;
    if (pick(rng, 10) == 0) {
        text = "@user" + std::to_string(pick(rng, 1000)) + " ";
    }
    for (std::size_t i = 0; i < length; ++i) {
        const std::vector<std::string>* source = &vocab.core;
        const auto roll = pick(rng, 100);
        if (roll < 12) {
            source = &filler_words();
        } else if (variant != 0 && roll < 47) {
            source = variant == 1 ? &vocab.variant_a : &vocab.variant_b;
        }
        if (i > 0) {
            text += ' ';
        }
        text += (*source)[pick(rng, source->size())];
    }
    if (pick(rng, 8) == 0) {
        text += " https://t.co/" + std::to_string(rng() % 100000);
    }
    return text;
}

}  // namespace detail

/**
 * Deterministic corpus for a given seed. One retweet per user marks the first post; all other
 * documents are topic posts dated on or after the threshold implied by the new-user curve.
 */
inline SyntheticCorpus make_synthetic_corpus(const SyntheticOptions& opt = {}) {
    using namespace std::chrono;
    const auto vocab = detail::synthetic_vocabularies();
    if (opt.users < 10 || opt.documents < opt.users + 2 * opt.exclusive_size + 4 * vocab.size() || opt.days < 14 ||
        opt.valley_day + 7 >= opt.days) {
        throw Error("make_synthetic_corpus: inconsistent options");
    }
    std::mt19937_64 rng(opt.seed);
    SyntheticCorpus out;
    out.topic_count = vocab.size();

    // New users per day: a V with its minimum at valley_day, scaled to opt.users.
    std::vector<double> weight(opt.days);
    double total = 0;
    for (std::size_t d = 0; d < opt.days; ++d) {
        weight[d] = 1.0 + std::abs(static_cast<double>(d) - static_cast<double>(opt.valley_day));
        total += weight[d];
    }
    std::vector<std::size_t> first_day;
    for (std::size_t d = 0; d < opt.days; ++d) {
        const auto target = static_cast<std::size_t>(std::llround(weight[d] / total * static_cast<double>(opt.users)));
        for (std::size_t k = 0; k < target && first_day.size() < opt.users; ++k) {
            first_day.push_back(d);
        }
    }
    while (first_day.size() < opt.users) {
        first_day.push_back(opt.days - 1);
    }

    DailySeries series;
    for (std::size_t d = 0; d < opt.days; ++d) {
        series.days.push_back({opt.start + days(d), 0});
    }
    for (auto d : first_day) {
        ++series.days[d].new_users;
    }
    out.threshold = split_threshold(series, 7);
    const auto threshold_day = static_cast<std::size_t>((out.threshold - opt.start).count());

    std::vector<std::size_t> early, late;
    for (std::size_t u = 0; u < opt.users; ++u) {
        const std::string id = "u" + std::to_string(u);
        const bool is_early = first_day[u] < threshold_day;
        (is_early ? early : late).push_back(u);
        out.planted_group[id] = is_early ? Group::early : Group::late;
        Document rt;
        rt.doc_id = "rt" + std::to_string(u);
        rt.user_id = id;
        rt.timestamp = start_of(opt.start + days(first_day[u])) + seconds(detail::pick(rng, 3600));
        rt.text = "RT @news: everyone is talking about chatgpt";
        rt.is_retweet = true;
        out.documents.push_back(std::move(rt));
    }
    if (early.empty() || late.empty()) {
        throw Error("make_synthetic_corpus: planted split left a cohort empty");
    }

    // Document budget per topic and cohort.
    const std::size_t posts = opt.documents - opt.users;
    const std::size_t shared_topics = vocab.size() - 2;
    const std::size_t shared_total = posts - 2 * opt.exclusive_size;
    struct Slot {
        int topic;
        Group group;
        int variant;
    };
    std::vector<Slot> slots;
    for (std::size_t i = 0; i < opt.exclusive_size; ++i) {
        slots.push_back({out.exclusive_early, Group::early, 0});
        slots.push_back({out.exclusive_late, Group::late, 0});
    }
    for (std::size_t t = 0; t < shared_topics; ++t) {
        const std::size_t size = shared_total / shared_topics + (t < shared_total % shared_topics ? 1 : 0);
        const int topic = static_cast<int>(t + 2);
        for (std::size_t i = 0; i < size; ++i) {
            const Group g = i % 2 == 0 ? Group::early : Group::late;
            int variant = 0;
            if (topic == out.asymmetric) {
                variant = g == Group::early ? 1 : 1 + static_cast<int>(i / 2 % 2);
            }
            slots.push_back({topic, g, variant});
        }
    }
    for (std::size_t i = slots.size(); i > 1; --i) {
        std::swap(slots[i - 1], slots[detail::pick(rng, i)]);
    }

    const auto end = start_of(opt.start + days(opt.days));
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto& s = slots[i];
        const auto& pool = s.group == Group::early ? early : late;
        const std::size_t u = pool[detail::pick(rng, pool.size())];
        const auto from = start_of(opt.start + days(std::max(threshold_day, first_day[u]))) + hours(1);
        const auto span = static_cast<std::uint64_t>((end - from).count());
        Document doc;
        doc.doc_id = "d" + std::to_string(i);
        doc.user_id = "u" + std::to_string(u);
        doc.timestamp = from + seconds(rng() % span);
        doc.text = detail::synthetic_text(rng, vocab[static_cast<std::size_t>(s.topic)], s.variant);
        out.planted_topic[doc.doc_id] = s.topic;
        if (s.variant != 0) {
            out.planted_variant[doc.doc_id] = s.variant;
        }
        out.documents.push_back(std::move(doc));
    }
    std::stable_sort(out.documents.begin(), out.documents.end(),
                     [](const Document& a, const Document& b) { return a.timestamp < b.timestamp; });
    return out;
}

/// One JSON object per line with the fields `parse_corpus` expects.
inline void write_jsonl(std::ostream& out, std::span<const Document> documents) {
    for (const auto& d : documents) {
        nlohmann::ordered_json j;
        j["doc_id"] = d.doc_id;
        j["user_id"] = d.user_id;
        j["timestamp"] = format_timestamp(d.timestamp);
        j["text"] = d.text;
        j["is_retweet"] = d.is_retweet;
        out << j.dump() << '\n';
    }
}

}  // namespace engage

#endif
