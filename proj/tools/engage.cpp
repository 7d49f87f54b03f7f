#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "engage/engage.hpp"

namespace fs = std::filesystem;
using namespace engage;

namespace {

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path + "'");
    }
    return in;
}

void ensure_parent(const std::string& path) {
    const auto parent = fs::path(path).parent_path();
    if (!parent.empty()) {
        fs::create_directories(parent);
    }
}

void save(const std::string& path, std::string_view bytes) {
    ensure_parent(path);
    write_file(path, bytes);
}

/// Embeddings or reduced coordinates, whichever the file holds.
EmbeddingSet load_features(const std::string& path) {
    const auto bytes = read_file(path);
    const auto kind = container_kind(bytes);
    if (kind != ContainerKind::embeddings && kind != ContainerKind::reduced) {
        throw Error("'" + path + "' holds a " + kind_name(kind) + " container, not embeddings");
    }
    return deserialize_embeddings(bytes, kind);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Early/late engager topic and semantic-bias analysis"};
    app.require_subcommand(1);
    std::size_t threads = 0;
    app.add_option("--threads", threads, "Worker threads (0 = all cores)");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Parse JSONL records, split users into cohorts, write corpus.bin");
    std::string ingest_input, ingest_out = "corpus.bin";
    std::size_t window = 7;
    double utc_offset = 0;
    ingest->add_option("--input", ingest_input, "Line-delimited JSON records")->required();
    ingest->add_option("--window", window, "Trailing window (days) for the new-user average");
    ingest->add_option("--utc-offset-hours", utc_offset, "Calendar offset used for daily bucketing");
    ingest->add_option("--out", ingest_out);

    // embed
    auto* embed = app.add_subcommand("embed", "Embed analysis documents, write embeddings.bin");
    std::string embed_corpus = "corpus.bin", embed_out = "embeddings.bin", cache_dir;
    std::size_t offline_dim = 0;
    ServiceConfig service;
    embed->add_option("--corpus", embed_corpus);
    embed->add_option("--model", service.model, "Embedding model name");
    embed->add_option("--endpoint", service.endpoint, "Embeddings endpoint URL");
    embed->add_option("--cache-dir", cache_dir, "Persistent embedding cache directory");
    embed->add_option("--batch-size", service.batch_size);
    embed->add_option("--offline-dim", offline_dim, "Use the offline hashing embedder with this dimension");
    embed->add_option("--out", embed_out);

    // reduce
    auto* reduce = app.add_subcommand("reduce", "UMAP reduction, write reduced.bin");
    std::string reduce_in = "embeddings.bin", reduce_out = "reduced.bin";
    UmapOptions umap_opt;
    reduce->add_option("--embeddings", reduce_in);
    reduce->add_option("--dim", umap_opt.layout.dim);
    reduce->add_option("--neighbors", umap_opt.neighbors);
    reduce->add_option("--epochs", umap_opt.layout.epochs);
    reduce->add_option("--seed", umap_opt.layout.seed);
    reduce->add_option("--out", reduce_out);

    // cluster
    auto* cluster = app.add_subcommand("cluster", "HDBSCAN with DBCV grid search, write topics.bin");
    std::string cluster_in = "reduced.bin", cluster_out = "topics.bin", tuning_out = "tuning.csv";
    std::string grid = "10,25,50,100,200";
    cluster->add_option("--reduced", cluster_in);
    cluster->add_option("--grid", grid, "Values tried for both min_samples and min_cluster_size");
    cluster->add_option("--out", cluster_out);
    cluster->add_option("--report", tuning_out);

    // filter
    auto* filter = app.add_subcommand("filter", "Drop topics dominated by few users, write topics_filtered.bin");
    std::string filter_in = "topics.bin", filter_out = "topics_filtered.bin", halfline_out = "halfline.csv";
    double filter_mult = 1.5;
    filter->add_option("--topics", filter_in);
    filter->add_option("--multiplier", filter_mult);
    filter->add_option("--out", filter_out);
    filter->add_option("--report", halfline_out);

    // diverge
    auto* diverge = app.add_subcommand("diverge", "Per-topic divergence scores and outlier topics, write divergence.csv");
    std::string diverge_in = "topics_filtered.bin", diverge_out = "divergence.csv";
    double diverge_mult = 4.0;
    diverge->add_option("--topics", diverge_in);
    diverge->add_option("--multiplier", diverge_mult);
    diverge->add_option("--out", diverge_out);

    // bias
    auto* bias = app.add_subcommand("bias", "Within-topic region overlap per cohort, write bias.csv");
    std::string bias_topics = "topics_filtered.bin", bias_features, bias_out = "bias.csv", measure = "length";
    BiasOptions bias_opt;
    bias->add_option("--topics", bias_topics);
    bias->add_option("--embeddings", bias_features, "embeddings.bin (original space) or reduced.bin")->required();
    bias->add_option("--mass", bias_opt.mass);
    bias->add_option("--min-group", bias_opt.min_group);
    bias->add_option("--ridge", bias_opt.ridge);
    bias->add_option("--measure", measure)->check(CLI::IsMember({"length", "mass"}));
    bias->add_option("--out", bias_out);

    // bias-report
    auto* bias_report = app.add_subcommand("bias-report", "Stratified comparison of bias.csv, write strata.json");
    std::string br_in = "bias.csv", br_out = "strata.json";
    bias_report->add_option("--in", br_in);
    bias_report->add_option("--out", br_out);

    // report
    auto* report = app.add_subcommand("report", "strata.json and SVG figures");
    std::string report_topics = "topics_filtered.bin", report_bias = "bias.csv", report_dir = ".";
    report->add_option("--topics", report_topics);
    report->add_option("--bias", report_bias);
    report->add_option("--out-dir", report_dir);

    // run
    auto* run = app.add_subcommand("run", "Full pipeline from a config file, with stage caching");
    std::string config_path;
    run->add_option("--config", config_path)->required();

    // synth
    auto* synth = app.add_subcommand("synth", "Write the planted synthetic corpus as JSONL");
    SyntheticOptions synth_opt;
    std::string synth_out = "synthetic.jsonl", truth_out;
    synth->add_option("--documents", synth_opt.documents);
    synth->add_option("--users", synth_opt.users);
    synth->add_option("--seed", synth_opt.seed);
    synth->add_option("--out", synth_out);
    synth->add_option("--truth", truth_out, "Also write doc_id,topic,variant");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) {
            auto in = open_input(ingest_input);
            IngestOptions opt{window, CalendarOptions{std::chrono::seconds(std::llround(utc_offset * 3600))}};
            const auto res = ingest_documents(in, opt);
            for (const auto& w : res.warnings) {
                std::cerr << fmt::format("line {}: {}\n", w.line, w.message);
            }
            save(ingest_out, serialize_corpus(res.corpus));
            const auto [e, l] = res.corpus.analysis_user_counts();
            std::cout << fmt::format("{} documents, threshold {}, early users {}, late users {}, {} records skipped\n",
                                     res.corpus.documents.size(), format_date(res.corpus.threshold_date), e, l,
                                     res.warnings.size());
        } else if (*embed) {
            const auto corpus = deserialize_corpus(read_file(embed_corpus));
            EmbedSettings settings;
            settings.offline = offline_dim > 0;
            settings.offline_dim = offline_dim;
            settings.service = service;
            settings.service.max_in_flight = threads == 0 ? settings.service.max_in_flight : threads;
            settings.cache_dir = cache_dir;
            EmbedStats stats;
            const auto set = embed_documents(corpus, settings, &stats);
            save(embed_out, serialize_embeddings(set));
            std::cout << fmt::format("{} rows x {} dims ({}), {} cache hits, {} requests, {} retries\n", set.matrix.rows,
                                     set.matrix.dim, set.model, stats.cache_hits, stats.requests, stats.retries);
        } else if (*reduce) {
            umap_opt.knn.threads = threads;
            const auto set = reduce_embeddings(load_features(reduce_in), umap_opt);
            save(reduce_out, serialize_embeddings(set, ContainerKind::reduced));
            std::cout << fmt::format("{} rows reduced to {} dims\n", set.matrix.rows, set.matrix.dim);
        } else if (*cluster) {
            const auto g = parse_grid(grid);
            const auto res = cluster_embeddings(load_features(cluster_in), g, g, threads);
            save(cluster_out, serialize_topics(res.table));
            save(tuning_out, tuning_csv(res.candidates));
            std::cout << fmt::format("{} topics, min_samples={}, min_cluster_size={}, dbcv={}\n", res.table.topic_count,
                                     res.table.min_samples, res.table.min_cluster_size, res.table.dbcv);
        } else if (*filter) {
            const auto res = filter_table(deserialize_topics(read_file(filter_in)), filter_mult);
            save(filter_out, serialize_topics(res.table));
            save(halfline_out, halfline_csv(res));
            std::cout << fmt::format("{} topics retained, {} excluded, half-line cutoff {}\n", res.result.retained.size(),
                                     res.result.excluded.size(), res.result.cutoff);
        } else if (*diverge) {
            const auto res = diverge_table(deserialize_topics(read_file(diverge_in)), diverge_mult);
            save(diverge_out, divergence_csv(res.topics));
            std::cout << fmt::format("{} outlier topics\n", res.outliers.size());
            for (const auto& o : res.outliers) {
                std::cout << fmt::format("  topic {} score {} dominant {}\n", o.topic_id, o.score, group_name(o.dominant));
            }
            const auto& s = res.scatter;
            std::cout << fmt::format(
                "above y=x: {:.3f}, below y=x: {:.3f}; per-capita slope {:.4f}: below {:.3f}, above {:.3f}\n",
                s.above_diagonal, s.below_diagonal, s.per_capita_slope, s.below_per_capita, s.above_per_capita);
        } else if (*bias) {
            bias_opt.measure = measure == "mass" ? RegionMeasure::mass : RegionMeasure::length;
            bias_opt.threads = threads;
            const auto results =
                bias_table(deserialize_topics(read_file(bias_topics)), load_features(bias_features), bias_opt);
            save(bias_out, bias_csv(results));
            std::size_t analysed = 0;
            for (const auto& r : results) {
                analysed += !r.insufficient;
            }
            std::cout << fmt::format("{} topics analysed, {} insufficient\n", analysed, results.size() - analysed);
        } else if (*bias_report) {
            auto in = open_input(br_in);
            const auto rep = stratified_compare(read_bias_csv(in));
            save(br_out, strata_json_text(rep));
            std::cout << fmt::format("{} topics; mean ratio_E {}, mean ratio_L {}\n", rep.topics, rep.mean_E, rep.mean_L);
        } else if (*report) {
            auto in = open_input(report_bias);
            const auto rep = build_report(deserialize_topics(read_file(report_topics)), read_bias_csv(in));
            const fs::path dir(report_dir);
            save((dir / "strata.json").string(), strata_json_text(rep.strata));
            for (const auto& [name, svg] : rep.figures) {
                save((dir / "figures" / name).string(), svg);
            }
            std::cout << fmt::format("strata.json and {} figures written to {}\n", rep.figures.size(), dir.string());
        } else if (*run) {
            auto cfg = load_config(config_path);
            if (threads != 0) {
                cfg.threads = threads;
            }
            const auto summary = run_pipeline(cfg, &std::cout);
            std::cout << fmt::format("{} stages run, {} reused; manifest at {}\n", summary.executed.size(),
                                     summary.skipped.size(), (cfg.output_dir / "manifest.json").string());
        } else if (*synth) {
            const auto corpus = make_synthetic_corpus(synth_opt);
            ensure_parent(synth_out);
            std::ofstream out(synth_out, std::ios::binary);
            write_jsonl(out, corpus.documents);
            if (!truth_out.empty()) {
                ensure_parent(truth_out);
                std::ofstream truth(truth_out, std::ios::binary);
                truth << "doc_id,topic,variant\n";
                for (const auto& d : corpus.documents) {
                    if (auto it = corpus.planted_topic.find(d.doc_id); it != corpus.planted_topic.end()) {
                        const auto v = corpus.planted_variant.find(d.doc_id);
                        truth << d.doc_id << ',' << it->second << ',' << (v == corpus.planted_variant.end() ? 0 : v->second)
                              << '\n';
                    }
                }
            }
            std::cout << fmt::format("{} documents, planted threshold {}\n", corpus.documents.size(),
                                     format_date(corpus.threshold));
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
