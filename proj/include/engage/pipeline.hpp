#ifndef ENGAGE_PIPELINE_HPP
#define ENGAGE_PIPELINE_HPP

#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "clusterer.hpp"
#include "corpus.hpp"
#include "divergence.hpp"
#include "embedder.hpp"
#include "hashing.hpp"
#include "reducer.hpp"
#include "semantic_bias.hpp"
#include "svg.hpp"
#include "topic_filter.hpp"
#include "topics.hpp"

/**
 * @file pipeline.hpp
 *
 * @brief Stage functions shared by the CLI subcommands, the tabular writers, the config file
 * format and the cached end-to-end runner.
 */

namespace engage {

// ---------------------------------------------------------------------------------------------
// Stages

struct IngestOptions {
    std::size_t window = 7;
    CalendarOptions calendar;
};

struct IngestOutput {
    GroupedCorpus corpus;
    DailySeries series;
    std::vector<ParseWarning> warnings;
    std::size_t duplicates = 0;
};

/// Parses records, derives the threshold from the new-user series and assigns cohorts.
/// The analysis window starts on the threshold date.
inline IngestOutput ingest_documents(std::istream& in, const IngestOptions& opt = {}) {
    auto parsed = parse_corpus(in);
    if (parsed.documents.empty()) {
        throw Error("ingest: no valid records");
    }
    IngestOutput out;
    out.series = first_post_series(parsed.documents, opt.calendar);
    const Date threshold = split_threshold(out.series, opt.window);
    out.corpus = assign_groups(std::move(parsed.documents), threshold, threshold, opt.calendar);
    out.warnings = std::move(parsed.warnings);
    out.duplicates = parsed.duplicates;
    return out;
}

struct EmbedSettings {
    bool offline = true;
    std::size_t offline_dim = 64;
    ServiceConfig service;
    std::string cache_dir;  // online only; empty disables the cache
};

inline std::string offline_model_name(std::size_t dim) { return "hash-" + std::to_string(dim); }

inline EmbeddingSet embed_documents(const GroupedCorpus& corpus, const EmbedSettings& settings, EmbedStats* stats = nullptr) {
    auto [rows, texts] = embedding_inputs(corpus);
    if (rows.empty()) {
        throw Error("embed: no documents to embed in the analysis window");
    }
    EmbeddingSet set;
    set.rows = std::move(rows);
    const auto [early, late] = corpus.analysis_user_counts();
    set.early_users = early;
    set.late_users = late;
    if (settings.offline) {
        set.model = offline_model_name(settings.offline_dim);
        set.matrix = hash_embed_all(texts, settings.offline_dim);
        return set;
    }
    std::optional<EmbeddingCache> cache;
    if (!settings.cache_dir.empty()) {
        cache.emplace(settings.cache_dir);
    }
    set.model = settings.service.model;
    set.matrix = embed_batch(texts, settings.service, http_transport(settings.service), cache ? &*cache : nullptr, stats);
    return set;
}

inline EmbeddingSet reduce_embeddings(const EmbeddingSet& source, const UmapOptions& opt) {
    const auto reduced = umap(source.matrix.to_matrix(), opt);
    EmbeddingSet out;
    out.model = source.model;
    out.rows = source.rows;
    out.early_users = source.early_users;
    out.late_users = source.late_users;
    out.matrix.rows = reduced.rows;
    out.matrix.dim = reduced.cols;
    out.matrix.values.assign(reduced.values.begin(), reduced.values.end());
    return out;
}

struct ClusterOutput {
    TopicTable table;
    std::vector<TuningCandidate> candidates;
};

inline ClusterOutput cluster_embeddings(const EmbeddingSet& reduced, std::span<const std::size_t> min_samples_grid,
                                        std::span<const std::size_t> min_cluster_size_grid, std::size_t threads = 0) {
    auto tuning = tune_hdbscan(reduced.matrix.to_matrix(), min_samples_grid, min_cluster_size_grid, threads);
    return {make_topic_table(reduced, tuning.best), std::move(tuning.candidates)};
}

struct FilterOutput {
    TopicTable table;
    std::vector<TopicConcentration> concentrations;
    FilterResult result;
};

inline FilterOutput filter_table(TopicTable table, double multiplier = 1.5) {
    FilterOutput out;
    out.concentrations = topic_concentrations(table);
    if (out.concentrations.size() < 4) {
        throw Error(fmt::format("filter: {} topics found, the IQR filter needs at least 4", out.concentrations.size()));
    }
    out.result = filter_topics(out.concentrations, multiplier);
    table.retained = out.result.retained;
    table.half_line_cutoff = out.result.cutoff;
    out.table = std::move(table);
    return out;
}

struct DivergenceOutput {
    std::vector<TopicDivergence> topics;
    std::vector<OutlierTopic> outliers;
    ScatterStats scatter;
};

inline DivergenceOutput diverge_table(const TopicTable& table, double multiplier = 4.0) {
    const auto counts = retained_topic_counts(table);
    DivergenceOutput out;
    out.topics = topic_divergences(counts);
    out.outliers = rank_outlier_topics(out.topics, multiplier);
    out.scatter = engagement_scatter_stats(counts, table.early_users, table.late_users);
    return out;
}

/// Checks that `features` rows line up with the topic table before the bias analysis.
inline std::vector<BiasResult> bias_table(const TopicTable& table, const EmbeddingSet& features, const BiasOptions& opt) {
    if (features.rows.size() != table.rows.size()) {
        throw Error(fmt::format("bias: topic table has {} rows but the embeddings have {}", table.rows.size(),
                                features.rows.size()));
    }
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        if (features.rows[i].doc_id != table.rows[i].doc_id) {
            throw Error(fmt::format("bias: row {} is '{}' in the topic table but '{}' in the embeddings", i,
                                    table.rows[i].doc_id, features.rows[i].doc_id));
        }
    }
    return analyze_topics(table, features.matrix.to_matrix(), opt);
}

// ---------------------------------------------------------------------------------------------
// Tabular outputs

inline std::string tuning_csv(std::span<const TuningCandidate> candidates) {
    std::string out = "min_samples,min_cluster_size,topic_count,noise_count,dbcv\n";
    for (const auto& c : candidates) {
        out += fmt::format("{},{},{},{},{}\n", c.min_samples, c.min_cluster_size, c.topic_count, c.noise_count,
                           c.dbcv ? fmt::format("{}", *c.dbcv) : std::string());
    }
    return out;
}

inline std::string halfline_csv(const FilterOutput& f) {
    std::string out = "topic_id,tweet_count,user_half_line,retained\n";
    for (const auto& c : f.concentrations) {
        out += fmt::format("{},{},{},{}\n", c.topic_id, c.tweet_count, c.user_half_line,
                           f.table.is_retained(c.topic_id) ? 1 : 0);
    }
    return out;
}

inline std::string divergence_csv(std::span<const TopicDivergence> topics) {
    std::string out = "topic_id,n_early,n_late,p,q,score,dominant,outlier_flag\n";
    for (const auto& t : topics) {
        out += fmt::format("{},{},{},{},{},{},{},{}\n", t.topic_id, t.n_early, t.n_late, t.p, t.q, t.score,
                           group_name(t.dominant()), t.outlier ? 1 : 0);
    }
    return out;
}

inline std::string bias_csv(std::span<const BiasResult> results) {
    std::ostringstream ss;
    write_bias_csv(ss, results);
    return ss.str();
}

namespace detail {

inline nlohmann::ordered_json welch_json(const std::optional<WelchResult>& w) {
    if (!w) {
        return nullptr;
    }
    return {{"t", w->t}, {"df", w->df}, {"p", w->p}};
}

inline nlohmann::ordered_json finite_or_null(double v) {
    return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

}  // namespace detail

inline nlohmann::ordered_json strata_json(const StrataReport& rep) {
    nlohmann::ordered_json j;
    j["topics"] = rep.topics;
    j["mean_ratio_E"] = detail::finite_or_null(rep.mean_E);
    j["mean_ratio_L"] = detail::finite_or_null(rep.mean_L);
    j["welch"] = detail::welch_json(rep.welch);
    j["pearson_volume_E_ratio_E"] = rep.r_volume_E ? nlohmann::ordered_json(*rep.r_volume_E) : nlohmann::ordered_json(nullptr);
    j["pearson_volume_L_ratio_L"] = rep.r_volume_L ? nlohmann::ordered_json(*rep.r_volume_L) : nlohmann::ordered_json(nullptr);
    j["strata"] = nlohmann::ordered_json::array();
    for (const auto& s : rep.strata) {
        nlohmann::ordered_json e;
        e["name"] = stratum_names[s.index];
        e["lower"] = s.lower;
        e["upper"] = s.upper;
        e["size"] = s.size();
        e["topics"] = s.topics;
        e["mean_ratio_E"] = detail::finite_or_null(s.mean_E);
        e["mean_ratio_L"] = detail::finite_or_null(s.mean_L);
        e["welch"] = detail::welch_json(s.welch);
        if (!s.note.empty()) {
            e["note"] = s.note;
        }
        j["strata"].push_back(std::move(e));
    }
    return j;
}

inline std::string strata_json_text(const StrataReport& rep) { return strata_json(rep).dump(2) + "\n"; }

// ---------------------------------------------------------------------------------------------
// Figures

struct ReportOutput {
    StrataReport strata;
    std::map<std::string, std::string> figures;  // file name under figures/ -> SVG text
};

/**
 * Strata report plus figures: per-topic half line, cohort engagement counts with the y = x and
 * per-capita lines, and overlap ratios against volume share.
 */
inline ReportOutput build_report(const TopicTable& table, std::span<const BiasResult> bias, const StrataBounds& bounds = {}) {
    ReportOutput out;
    out.strata = stratified_compare(bias, bounds);

    ScatterPlot half;
    half.title = "User half line per topic";
    half.x_label = "documents in topic";
    half.y_label = "user half line";
    for (const auto& c : topic_concentrations(table)) {
        half.points.push_back({static_cast<double>(c.tweet_count), c.user_half_line, c.topic_id});
    }
    if (!half.points.empty()) {
        out.figures["halfline.svg"] = render_scatter(half);
    }

    const auto counts = retained_topic_counts(table);
    if (!counts.empty() && table.early_users > 0 && table.late_users > 0) {
        ScatterPlot eng;
        eng.title = "Documents per topic by cohort";
        eng.x_label = "early engager documents";
        eng.y_label = "late engager documents";
        eng.log_axes = true;
        for (const auto& c : counts) {
            eng.points.push_back({static_cast<double>(c.early), static_cast<double>(c.late), c.topic_id});
        }
        eng.lines.push_back({1.0, "reference"});
        eng.lines.push_back(
            {static_cast<double>(table.late_users) / static_cast<double>(table.early_users), "per-capita"});
        out.figures["engagement.svg"] = render_scatter(eng);
    }

    ScatterPlot overlap, vol_e, vol_l;
    overlap.title = "Region overlap per topic";
    overlap.x_label = "ratio_E";
    overlap.y_label = "ratio_L";
    overlap.lines.push_back({1.0, "reference"});
    vol_e.title = "Early engagers: volume share and region ratio";
    vol_e.x_label = "share of topic documents (E)";
    vol_e.y_label = "ratio_E";
    vol_l.title = "Late engagers: volume share and region ratio";
    vol_l.x_label = "share of topic documents (L)";
    vol_l.y_label = "ratio_L";
    for (const auto& b : bias) {
        if (b.insufficient) {
            continue;
        }
        overlap.points.push_back({b.ratios.ratio_E, b.ratios.ratio_L, b.topic_id});
        vol_e.points.push_back({b.volume_ratio_E, b.ratios.ratio_E, b.topic_id});
        vol_l.points.push_back({1.0 - b.volume_ratio_E, b.ratios.ratio_L, b.topic_id});
    }
    if (!overlap.points.empty()) {
        out.figures["overlap.svg"] = render_scatter(overlap);
        out.figures["volume_early.svg"] = render_scatter(vol_e);
        out.figures["volume_late.svg"] = render_scatter(vol_l);
        out.figures["strata_box.svg"] = render_box(out.strata);
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Configuration

/**
 * Settings for `run`. Relative paths are resolved against the directory of the config file.
 */
struct PipelineConfig {
    std::filesystem::path input;
    std::size_t window = 7;
    double utc_offset_hours = 0;
    EmbedSettings embed;
    UmapOptions reduce;
    std::vector<std::size_t> min_samples_grid{10, 25, 50, 100, 200};
    std::vector<std::size_t> min_cluster_size_grid{10, 25, 50, 100, 200};
    double filter_multiplier = 1.5;
    double divergence_multiplier = 4.0;
    BiasOptions bias;
    LdaSpace lda_space = LdaSpace::original;
    std::filesystem::path output_dir = "out";
    std::size_t threads = 0;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::size_t parse_size(const std::string& v, const std::string& key) {
    std::size_t used = 0;
    try {
        if (!v.empty() && v[0] != '-') {
            const auto out = std::stoull(v, &used);
            if (used == v.size()) {
                return static_cast<std::size_t>(out);
            }
        }
    } catch (const std::exception&) {
    }
    throw Error(fmt::format("config: '{}' must be a non-negative integer, got '{}'", key, v));
}

inline double parse_real(const std::string& v, const std::string& key) {
    std::size_t used = 0;
    try {
        const double out = std::stod(v, &used);
        if (used == v.size() && std::isfinite(out)) {
            return out;
        }
    } catch (const std::exception&) {
    }
    throw Error(fmt::format("config: '{}' must be a number, got '{}'", key, v));
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "yes" || v == "1") {
        return true;
    }
    if (v == "false" || v == "no" || v == "0") {
        return false;
    }
    throw Error(fmt::format("config: '{}' must be true or false, got '{}'", key, v));
}

inline std::vector<std::size_t> parse_grid(const std::string& v, const std::string& key) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(parse_size(trim(item), key));
    }
    if (out.empty()) {
        throw Error(fmt::format("config: '{}' is empty", key));
    }
    return out;
}

}  // namespace detail

/// Parses a comma-separated list of positive integers such as "10,25,50".
inline std::vector<std::size_t> parse_grid(const std::string& text) { return detail::parse_grid(text, "grid"); }

/**
 * Reads the INI-style config: `[section]` headers, `key = value` lines, `#` or `;` comments.
 * Unknown sections or keys and repeated keys are errors.
 */
inline PipelineConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {}) {
    using Setter = std::function<void(PipelineConfig&, const std::string&, const std::string&)>;
    auto path_of = [base_dir](const std::string& v) {
        std::filesystem::path p(v);
        return p.is_absolute() ? p : base_dir / p;
    };
    const std::map<std::string, Setter> setters{
        {"input.corpus", [&](auto& c, auto& v, auto&) { c.input = path_of(v); }},
        {"corpus.window", [](auto& c, auto& v, auto& k) { c.window = detail::parse_size(v, k); }},
        {"corpus.utc_offset_hours", [](auto& c, auto& v, auto& k) { c.utc_offset_hours = detail::parse_real(v, k); }},
        {"embed.offline", [](auto& c, auto& v, auto& k) { c.embed.offline = detail::parse_bool(v, k); }},
        {"embed.offline_dim", [](auto& c, auto& v, auto& k) { c.embed.offline_dim = detail::parse_size(v, k); }},
        {"embed.model", [](auto& c, auto& v, auto&) { c.embed.service.model = v; }},
        {"embed.endpoint", [](auto& c, auto& v, auto&) { c.embed.service.endpoint = v; }},
        {"embed.cache_dir", [&](auto& c, auto& v, auto&) { c.embed.cache_dir = path_of(v).string(); }},
        {"embed.batch_size", [](auto& c, auto& v, auto& k) { c.embed.service.batch_size = detail::parse_size(v, k); }},
        {"embed.max_in_flight", [](auto& c, auto& v, auto& k) { c.embed.service.max_in_flight = detail::parse_size(v, k); }},
        {"embed.max_retries", [](auto& c, auto& v, auto& k) { c.embed.service.max_retries = detail::parse_size(v, k); }},
        {"reduce.dim", [](auto& c, auto& v, auto& k) { c.reduce.layout.dim = detail::parse_size(v, k); }},
        {"reduce.neighbors", [](auto& c, auto& v, auto& k) { c.reduce.neighbors = detail::parse_size(v, k); }},
        {"reduce.epochs", [](auto& c, auto& v, auto& k) { c.reduce.layout.epochs = detail::parse_size(v, k); }},
        {"reduce.seed", [](auto& c, auto& v, auto& k) { c.reduce.layout.seed = detail::parse_size(v, k); }},
        {"cluster.grid",
         [](auto& c, auto& v, auto& k) { c.min_samples_grid = c.min_cluster_size_grid = detail::parse_grid(v, k); }},
        {"cluster.min_samples", [](auto& c, auto& v, auto& k) { c.min_samples_grid = detail::parse_grid(v, k); }},
        {"cluster.min_cluster_size", [](auto& c, auto& v, auto& k) { c.min_cluster_size_grid = detail::parse_grid(v, k); }},
        {"filter.multiplier", [](auto& c, auto& v, auto& k) { c.filter_multiplier = detail::parse_real(v, k); }},
        {"diverge.multiplier", [](auto& c, auto& v, auto& k) { c.divergence_multiplier = detail::parse_real(v, k); }},
        {"bias.mass", [](auto& c, auto& v, auto& k) { c.bias.mass = detail::parse_real(v, k); }},
        {"bias.min_group", [](auto& c, auto& v, auto& k) { c.bias.min_group = detail::parse_size(v, k); }},
        {"bias.ridge", [](auto& c, auto& v, auto& k) { c.bias.ridge = detail::parse_real(v, k); }},
        {"bias.lda_space",
         [](auto& c, auto& v, auto& k) {
             if (v == "original") {
                 c.lda_space = LdaSpace::original;
             } else if (v == "reduced") {
                 c.lda_space = LdaSpace::reduced;
             } else {
                 throw Error(fmt::format("config: '{}' must be original or reduced, got '{}'", k, v));
             }
         }},
        {"bias.measure",
         [](auto& c, auto& v, auto& k) {
             if (v == "length") {
                 c.bias.measure = RegionMeasure::length;
             } else if (v == "mass") {
                 c.bias.measure = RegionMeasure::mass;
             } else {
                 throw Error(fmt::format("config: '{}' must be length or mass, got '{}'", k, v));
             }
         }},
        {"output.dir", [&](auto& c, auto& v, auto&) { c.output_dir = path_of(v); }},
        {"run.threads", [](auto& c, auto& v, auto& k) { c.threads = detail::parse_size(v, k); }},
    };

    PipelineConfig cfg;
    cfg.output_dir = base_dir / "out";
    std::set<std::string> seen;
    std::string section;
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        const auto t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') {
            continue;
        }
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw Error(fmt::format("config line {}: malformed section header", no));
            }
            section = detail::trim(std::string_view(t).substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw Error(fmt::format("config line {}: expected key = value", no));
        }
        const std::string key = section + "." + detail::trim(std::string_view(t).substr(0, eq));
        const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end()) {
            throw Error(fmt::format("config line {}: unknown key '{}'", no, key));
        }
        if (!seen.insert(key).second) {
            throw Error(fmt::format("config line {}: '{}' given twice", no, key));
        }
        it->second(cfg, value, key);
    }
    if (!seen.count("input.corpus")) {
        throw Error("config: input.corpus is required");
    }
    return cfg;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open config '" + path.string() + "'");
    }
    return parse_config(in, path.parent_path());
}

/// Rejects configs that cannot run, before any stage starts.
inline void validate_config(const PipelineConfig& c) {
    if (!std::filesystem::is_regular_file(c.input)) {
        throw Error("config: input corpus '" + c.input.string() + "' does not exist");
    }
    if (c.window == 0) {
        throw Error("config: corpus.window must be positive");
    }
    if (!(c.filter_multiplier > 0) || !(c.divergence_multiplier > 0)) {
        throw Error("config: multipliers must be positive");
    }
    if (!(c.bias.mass > 0 && c.bias.mass < 1)) {
        throw Error("config: bias.mass must lie in (0, 1)");
    }
    if (c.bias.ridge < 0) {
        throw Error("config: bias.ridge must be non-negative");
    }
    if (c.embed.offline && c.embed.offline_dim < 2) {
        throw Error("config: embed.offline_dim must be at least 2");
    }
    if (c.reduce.layout.dim == 0 || c.reduce.neighbors == 0) {
        throw Error("config: reduce.dim and reduce.neighbors must be positive");
    }
    for (const auto* grid : {&c.min_samples_grid, &c.min_cluster_size_grid}) {
        for (auto v : *grid) {
            if (v == 0) {
                throw Error("config: cluster grid values must be positive");
            }
        }
    }
    for (const auto* g : {&c.min_cluster_size_grid}) {
        for (auto v : *g) {
            if (v < 2) {
                throw Error("config: min_cluster_size values must be at least 2");
            }
        }
    }
    if (std::filesystem::exists(c.output_dir) && !std::filesystem::is_directory(c.output_dir)) {
        throw Error("config: output dir '" + c.output_dir.string() + "' is not a directory");
    }
}

// ---------------------------------------------------------------------------------------------
// Cached runner

struct RunSummary {
    std::vector<std::string> executed;
    std::vector<std::string> skipped;
    nlohmann::ordered_json manifest;
};

namespace detail {

inline std::string join_grid(std::span<const std::size_t> g) {
    std::string out;
    for (auto v : g) {
        out += (out.empty() ? "" : ",") + std::to_string(v);
    }
    return out;
}

struct StageSpec {
    std::string name;
    std::string params;
    std::vector<std::string> inputs;   // paths (absolute or relative to the output dir)
    std::string artifact;              // primary output, relative to the output dir
    std::function<std::map<std::string, std::string>()> run;  // relative name -> bytes
};

}  // namespace detail

/**
 * Runs ingest, embed, reduce, cluster, filter, diverge, bias and report in order, writing into
 * the output directory. Each stage has a key hashed from its name, parameters and input bytes;
 * a stage whose key and output hashes match `manifest.json` is skipped. The manifest is
 * rewritten after every stage, so a failed run resumes from the last completed stage.
 */
inline RunSummary run_pipeline(const PipelineConfig& cfg, std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    validate_config(cfg);
    const fs::path out_dir = cfg.output_dir;
    fs::create_directories(out_dir / "figures");
    const fs::path manifest_path = out_dir / "manifest.json";

    nlohmann::ordered_json previous;
    if (fs::exists(manifest_path)) {
        try {
            previous = nlohmann::ordered_json::parse(read_file(manifest_path.string()));
        } catch (const std::exception&) {
            previous = nullptr;
        }
    }
    auto previous_stage = [&](const std::string& name) -> const nlohmann::ordered_json* {
        if (!previous.is_object() || !previous.contains("stages")) {
            return nullptr;
        }
        for (const auto& s : previous["stages"]) {
            if (s.value("name", "") == name) {
                return &s;
            }
        }
        return nullptr;
    };
    auto rel = [&](const std::string& name) { return (out_dir / name).string(); };

    const IngestOptions ingest_opt{cfg.window, CalendarOptions{std::chrono::seconds(std::llround(cfg.utc_offset_hours * 3600))}};
    UmapOptions umap_opt = cfg.reduce;
    umap_opt.knn.threads = cfg.threads;
    BiasOptions bias_opt = cfg.bias;
    bias_opt.threads = cfg.threads;
    const std::string bias_features = cfg.lda_space == LdaSpace::original ? "embeddings.bin" : "reduced.bin";

    std::vector<detail::StageSpec> stages;
    stages.push_back({"ingest", fmt::format("window={};utc_offset_hours={}", cfg.window, cfg.utc_offset_hours),
                      {cfg.input.string()}, "corpus.bin", [&] {
                          std::ifstream in(cfg.input, std::ios::binary);
                          if (!in) {
                              throw Error("cannot open '" + cfg.input.string() + "'");
                          }
                          auto res = ingest_documents(in, ingest_opt);
                          if (log && !res.warnings.empty()) {
                              *log << fmt::format("  ingest: {} records skipped\n", res.warnings.size());
                          }
                          return std::map<std::string, std::string>{{"corpus.bin", serialize_corpus(res.corpus)}};
                      }});
    stages.push_back({"embed",
                      cfg.embed.offline ? fmt::format("offline_dim={}", cfg.embed.offline_dim)
                                        : fmt::format("model={};endpoint={}", cfg.embed.service.model, cfg.embed.service.endpoint),
                      {"corpus.bin"}, "embeddings.bin", [&] {
                          const auto corpus = deserialize_corpus(read_file(rel("corpus.bin")));
                          return std::map<std::string, std::string>{
                              {"embeddings.bin", serialize_embeddings(embed_documents(corpus, cfg.embed))}};
                      }});
    stages.push_back({"reduce",
                      fmt::format("dim={};neighbors={};epochs={};seed={};min_dist={};spread={}", cfg.reduce.layout.dim,
                                  cfg.reduce.neighbors, cfg.reduce.layout.epochs, cfg.reduce.layout.seed,
                                  cfg.reduce.layout.min_dist, cfg.reduce.layout.spread),
                      {"embeddings.bin"}, "reduced.bin", [&] {
                          const auto emb = deserialize_embeddings(read_file(rel("embeddings.bin")));
                          return std::map<std::string, std::string>{
                              {"reduced.bin", serialize_embeddings(reduce_embeddings(emb, umap_opt), ContainerKind::reduced)}};
                      }});
    stages.push_back({"cluster",
                      fmt::format("min_samples={};min_cluster_size={}", detail::join_grid(cfg.min_samples_grid),
                                  detail::join_grid(cfg.min_cluster_size_grid)),
                      {"reduced.bin"}, "topics.bin", [&] {
                          const auto red = deserialize_embeddings(read_file(rel("reduced.bin")), ContainerKind::reduced);
                          auto res = cluster_embeddings(red, cfg.min_samples_grid, cfg.min_cluster_size_grid, cfg.threads);
                          if (log) {
                              *log << fmt::format("  cluster: {} topics (min_samples={}, min_cluster_size={}, dbcv={:.4f})\n",
                                                  res.table.topic_count, res.table.min_samples, res.table.min_cluster_size,
                                                  res.table.dbcv);
                          }
                          return std::map<std::string, std::string>{{"topics.bin", serialize_topics(res.table)},
                                                                    {"tuning.csv", tuning_csv(res.candidates)}};
                      }});
    stages.push_back({"filter", fmt::format("multiplier={}", cfg.filter_multiplier), {"topics.bin"}, "topics_filtered.bin", [&] {
                          auto res = filter_table(deserialize_topics(read_file(rel("topics.bin"))), cfg.filter_multiplier);
                          if (log) {
                              *log << fmt::format("  filter: {} retained, {} excluded\n", res.result.retained.size(),
                                                  res.result.excluded.size());
                          }
                          return std::map<std::string, std::string>{{"topics_filtered.bin", serialize_topics(res.table)},
                                                                    {"halfline.csv", halfline_csv(res)}};
                      }});
    stages.push_back({"diverge", fmt::format("multiplier={}", cfg.divergence_multiplier), {"topics_filtered.bin"},
                      "divergence.csv", [&] {
                          auto res = diverge_table(deserialize_topics(read_file(rel("topics_filtered.bin"))),
                                                   cfg.divergence_multiplier);
                          if (log) {
                              *log << fmt::format("  diverge: {} outlier topics\n", res.outliers.size());
                          }
                          return std::map<std::string, std::string>{{"divergence.csv", divergence_csv(res.topics)}};
                      }});
    stages.push_back({"bias",
                      fmt::format("mass={};min_group={};ridge={};measure={};space={}", cfg.bias.mass, cfg.bias.min_group,
                                  cfg.bias.ridge, cfg.bias.measure == RegionMeasure::length ? "length" : "mass",
                                  bias_features),
                      {"topics_filtered.bin", bias_features}, "bias.csv", [&] {
                          const auto table = deserialize_topics(read_file(rel("topics_filtered.bin")));
                          const auto kind = cfg.lda_space == LdaSpace::original ? ContainerKind::embeddings : ContainerKind::reduced;
                          const auto features = deserialize_embeddings(read_file(rel(bias_features)), kind);
                          return std::map<std::string, std::string>{{"bias.csv", bias_csv(bias_table(table, features, bias_opt))}};
                      }});
    stages.push_back({"report", "", {"topics_filtered.bin", "bias.csv"}, "strata.json", [&] {
                          const auto table = deserialize_topics(read_file(rel("topics_filtered.bin")));
                          std::ifstream in(rel("bias.csv"));
                          const auto bias = read_bias_csv(in);
                          const auto rep = build_report(table, bias);
                          std::map<std::string, std::string> files{{"strata.json", strata_json_text(rep.strata)}};
                          for (const auto& [name, svg] : rep.figures) {
                              files["figures/" + name] = svg;
                          }
                          return files;
                      }});

    RunSummary summary;
    nlohmann::ordered_json manifest;
    manifest["version"] = 1;
    manifest["stages"] = nlohmann::ordered_json::array();
    manifest["artifacts"] = nlohmann::ordered_json::object();
    auto write_manifest = [&] { write_file(manifest_path.string(), manifest.dump(2) + "\n"); };

    for (const auto& stage : stages) {
        std::string key_material = stage.name + "\n" + stage.params + "\n";
        for (const auto& input : stage.inputs) {
            const fs::path p = fs::path(input).is_absolute() ? fs::path(input) : out_dir / input;
            // The corpus input is keyed by content only, so moving it does not invalidate the cache.
            key_material += (fs::path(input).is_absolute() ? std::string("input") : input) + "=" + sha256_file(p.string()) + "\n";
        }
        const std::string key = sha256_hex(key_material);

        nlohmann::ordered_json entry;
        entry["name"] = stage.name;
        entry["key"] = key;
        bool reuse = false;
        if (const auto* prev = previous_stage(stage.name); prev && prev->value("key", "") == key && prev->contains("outputs")) {
            reuse = true;
            for (const auto& [name, hash] : (*prev)["outputs"].items()) {
                const fs::path p = out_dir / name;
                if (!fs::is_regular_file(p) || sha256_file(p.string()) != hash.get<std::string>()) {
                    reuse = false;
                    break;
                }
            }
            if (reuse) {
                entry["outputs"] = (*prev)["outputs"];
            }
        }
        if (reuse) {
            summary.skipped.push_back(stage.name);
            if (log) {
                *log << "[skip] " << stage.name << "\n";
            }
        } else {
            if (log) {
                *log << "[run]  " << stage.name << "\n";
            }
            std::map<std::string, std::string> files;
            try {
                files = stage.run();
            } catch (const std::exception& e) {
                write_manifest();
                throw Error("stage '" + stage.name + "' failed: " + e.what());
            }
            entry["outputs"] = nlohmann::ordered_json::object();
            for (const auto& [name, bytes] : files) {
                write_file(rel(name), bytes);
                entry["outputs"][name] = sha256_hex(bytes);
            }
            summary.executed.push_back(stage.name);
        }
        manifest["artifacts"][stage.artifact] = entry["outputs"].value(stage.artifact, "");
        manifest["stages"].push_back(std::move(entry));
        write_manifest();
    }
    summary.manifest = manifest;
    return summary;
}

}  // namespace engage

#endif
