// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "engage.hpp"
#include "support/naive_hdbscan.hpp"

using namespace engage;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << ": " << name;
    if (!o.detail.empty()) {
        std::cout << " (" << o.detail << ")";
    }
    std::cout << std::endl;
    failures += o.pass ? 0 : 1;
}

template <class Fn>
void run_criterion(int id, const std::string& name, Fn fn) {
    Outcome o;
    try {
        o = fn();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    report(id, name, o);
}

// Acklam's rational approximation refined by one Halley step.
double normal_quantile(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                               1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                               6.680131188771972e+01, -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                               -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                               3.754408661907416e+00};
    double x;
    if (p < 0.02425 || p > 1 - 0.02425) {
        const double q = std::sqrt(-2 * std::log(p < 0.5 ? p : 1 - p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
        x = p < 0.5 ? x : -x;
    } else {
        const double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    }
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2 * M_PI) * std::exp(x * x / 2);
    return x - u / (1 + x * u / 2);
}

double entropy2(const std::vector<double>& p) {
    double h = 0;
    for (double v : p) {
        if (v > 0) {
            h -= v * std::log2(v);
        }
    }
    return h;
}

// ---------------------------------------------------------------------------------------------

Outcome hdbscan_oracle() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240601);
    const std::vector<std::size_t> grid{2, 3, 5};
    std::size_t mismatches = 0, comparisons = 0;
    for (int ds = 0; ds < 100; ++ds) {
        const std::size_t n = 12 + rng() % 49;
        const std::size_t dim = 2 + rng() % 4;
        const std::size_t centres = 1 + rng() % 4;
        std::normal_distribution<double> noise(0.0, 0.4 + 0.4 * static_cast<double>(rng() % 3));
        std::uniform_real_distribution<double> where(-6, 6);
        std::vector<std::vector<double>> c(centres, std::vector<double>(dim));
        for (auto& v : c) {
            for (auto& x : v) {
                x = where(rng);
            }
        }
        Matrix x(n, dim);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& centre = c[rng() % centres];
            for (std::size_t k = 0; k < dim; ++k) {
                x(i, k) = centre[k] + noise(rng);
            }
        }
        for (auto ms : grid) {
            for (auto mcs : grid) {
                const auto fast = hdbscan(x, ms, mcs).labels;
                const auto slow = naive::hdbscan(x, ms, mcs);
                ++comparisons;
                if (naive::rand_index(fast, slow) != 1.0) {
                    ++mismatches;
                }
            }
        }
    }
    const double elapsed = seconds_since(t0);
    std::ostringstream d;
    d << comparisons << " clusterings, " << mismatches << " with Rand < 1, " << elapsed << " s";
    return {mismatches == 0 && elapsed < 30.0, d.str()};
}

Outcome jsd_consistency() {
    std::mt19937_64 rng(7);
    double worst = 0;
    bool ok = true;
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<TopicCounts> counts(50);
        for (int i = 0; i < 50; ++i) {
            counts[i] = {i, rng() % 5 == 0 ? 0 : rng() % 1000, rng() % 5 == 0 ? 0 : rng() % 1000};
        }
        counts[trial % 50].early += 1;
        counts[(trial + 1) % 50].late += 1;
        const auto d = topic_divergences(counts);
        std::vector<double> p, q, m;
        double total = 0;
        for (const auto& t : d) {
            p.push_back(t.p);
            q.push_back(t.q);
            m.push_back(0.5 * (t.p + t.q));
            total += t.score;
            ok = ok && t.score >= 0 && topic_divergence(t.q, t.p) == t.score;
        }
        const double jsd = entropy2(m) - 0.5 * (entropy2(p) + entropy2(q));
        worst = std::max(worst, std::abs(total - jsd));
        ok = ok && total <= 1.0;
    }
    std::ostringstream d;
    d << "max |sum - JSD| = " << worst;
    return {ok && worst <= 1e-12, d.str()};
}

Outcome kde_hdi() {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> z(0, 1);
    double worst_mass = 0;
    auto check_mass = [&](const DensityTable& t, const IntervalSet& r) {
        worst_mass = std::max(worst_mass, std::abs(r.mass_within(t) - 0.95));
    };

    // Random shapes with cross-validated bandwidths.
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> s(20 + rng() % 200);
        const double skew = 0.5 * static_cast<double>(trial % 4);
        for (auto& v : s) {
            const double a = z(rng);
            v = a + skew * a * a + (rng() % 3 == 0 ? 3.0 : 0.0);
        }
        const double h = kde_bandwidth_cv(s, default_bandwidth_grid(s));
        const auto t = kde_density(s, h);
        check_mass(t, hdi_region(t, 0.95));
    }

    std::vector<double> normal(500);
    for (auto& v : normal) {
        v = z(rng);
    }
    // Small bandwidth: a tenth of the unit standard deviation.
    const auto tn = kde_density(normal, 0.1);
    const auto rn = hdi_region(tn, 0.95);
    check_mass(tn, rn);
    const double lo = rn.intervals().front().lo, hi = rn.intervals().back().hi;
    const bool endpoints = std::abs(lo + 1.96) <= 0.1 && std::abs(hi - 1.96) <= 0.1;

    // Diagnostic only: the same estimate on normal quantile points, free of sampling noise.
    std::vector<double> quantiles(500);
    for (std::size_t i = 0; i < quantiles.size(); ++i) {
        quantiles[i] = normal_quantile((static_cast<double>(i) + 0.5) / 500.0);
    }
    const auto rq = hdi_region(kde_density(quantiles, 0.1), 0.95);

    std::vector<double> bimodal;
    for (int i = 0; i < 400; ++i) {
        bimodal.push_back((i % 2 ? -4.0 : 4.0) + 0.5 * z(rng));
    }
    const auto tb = kde_density(bimodal, kde_bandwidth_cv(bimodal, default_bandwidth_grid(bimodal)));
    const auto rb = hdi_region(tb, 0.95);
    check_mass(tb, rb);

    std::ostringstream d;
    d << "max |mass - 0.95| = " << worst_mass << ", normal HDI [" << lo << ", " << hi << "] in " << rn.size()
      << " piece(s), bimodal pieces = " << rb.size() << "; on quantile points [" << rq.intervals().front().lo
      << ", " << rq.intervals().back().hi << "]";
    return {worst_mass <= 0.005 && endpoints && rb.size() == 2, d.str()};
}

Outcome fisher_optimality() {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> z(0, 1);
    std::uniform_real_distribution<double> u(-2, 2);
    double worst = 0;
    for (int ds = 0; ds < 50; ++ds) {
        const std::size_t ne = 10 + rng() % 40, nl = 10 + rng() % 40;
        // Correlated anisotropic clouds with a random mean shift.
        const double a11 = 0.3 + std::abs(u(rng)), a12 = u(rng), a22 = 0.3 + std::abs(u(rng));
        const double sx = u(rng), sy = u(rng);
        Matrix e(ne, 2), l(nl, 2);
        for (std::size_t i = 0; i < ne; ++i) {
            const double g1 = z(rng), g2 = z(rng);
            e(i, 0) = a11 * g1 + a12 * g2;
            e(i, 1) = a22 * g2;
        }
        for (std::size_t i = 0; i < nl; ++i) {
            const double g1 = z(rng), g2 = z(rng);
            l(i, 0) = sx + a11 * g1 + a12 * g2;
            l(i, 1) = sy + a22 * g2;
        }
        const auto r = lda_direction(e, l);
        const double at_solution = fisher_criterion(e, l, r.direction);
        double best_grid = 0;
        for (int k = 0; k < 3600; ++k) {
            const double theta = M_PI * 2.0 * k / 3600.0;
            const std::vector<double> w{std::cos(theta), std::sin(theta)};
            best_grid = std::max(best_grid, fisher_criterion(e, l, w));
        }
        worst = std::max(worst, (best_grid - at_solution) / best_grid);
    }
    std::ostringstream d;
    d << "largest relative shortfall vs grid = " << worst;
    return {worst <= 1e-9, d.str()};
}

IntervalSet random_intervals(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> at(-20, 20), len(0.05, 5);
    std::vector<Interval> parts;
    const int k = 1 + static_cast<int>(rng() % 4);
    for (int i = 0; i < k; ++i) {
        const double a = at(rng);
        parts.push_back({a, a + len(rng)});
    }
    return IntervalSet(parts);
}

Outcome overlap_algebra() {
    std::mt19937_64 rng(13);
    std::size_t sum_fail = 0, iff_fail = 0, disjoint_fail = 0, nested = 0, disjoint = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto e = random_intervals(rng);
        IntervalSet l;
        switch (trial % 3) {
            case 0: l = random_intervals(rng); break;
            case 1: {  // a subset of e
                std::vector<Interval> parts;
                for (const auto& iv : e.intervals()) {
                    if (rng() % 2 == 0 || parts.empty()) {
                        const double w = iv.length();
                        parts.push_back({iv.lo + 0.25 * w, iv.hi - 0.25 * w * static_cast<double>(rng() % 2)});
                    }
                }
                l = IntervalSet(parts);
                break;
            }
            default: {  // shifted past e
                std::vector<Interval> parts;
                const double off = e.intervals().back().hi + 1.0;
                const auto far = random_intervals(rng);
                for (const auto& iv : far.intervals()) {
                    parts.push_back({iv.lo + 40 + off, iv.hi + 40 + off});
                }
                l = IntervalSet(parts);
            }
        }
        const auto r = region_overlap(e, l);
        sum_fail += r.only_E + r.only_L + r.shared != 1.0;
        const bool inside = e.contains(l);
        nested += inside;
        iff_fail += (r.ratio_E == 1.0) != inside;
        if (set_intersection(e, l).empty()) {
            ++disjoint;
            disjoint_fail += r.shared != 0.0;
        }
    }
    std::ostringstream d;
    d << "sum failures " << sum_fail << ", iff failures " << iff_fail << " (" << nested << " nested), disjoint failures "
      << disjoint_fail << " (" << disjoint << " disjoint)";
    return {sum_fail == 0 && iff_fail == 0 && disjoint_fail == 0 && nested > 0 && disjoint > 0, d.str()};
}

// ---------------------------------------------------------------------------------------------
// Planted corpus

struct PlantedRun {
    fs::path dir;
    SyntheticCorpus corpus;
    double seconds = 0;
};

PipelineConfig planted_config(const fs::path& dir) {
    std::istringstream in("[input]\ncorpus = corpus.jsonl\n[embed]\noffline = true\noffline_dim = 64\n[run]\nthreads = 1\n");
    return parse_config(in, dir);
}

PlantedRun run_planted(const std::string& tag) {
    PlantedRun run;
    run.dir = fs::temp_directory_path() / ("engage_acceptance_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(run.dir);
    fs::create_directories(run.dir);
    run.corpus = make_synthetic_corpus();
    {
        std::ofstream out(run.dir / "corpus.jsonl");
        write_jsonl(out, run.corpus.documents);
    }
    const auto t0 = Clock::now();
    run_pipeline(planted_config(run.dir));
    run.seconds = seconds_since(t0);
    return run;
}

Outcome planted_end_to_end(const PlantedRun& run) {
    const auto out = run.dir / "out";
    const auto table = deserialize_topics(read_file((out / "topics.bin").string()));
    const auto& sc = run.corpus;

    // (a) topic recovery on non-noise rows
    std::vector<int> found, planted;
    std::map<int, std::map<int, std::size_t>> by_cluster, by_topic;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto it = sc.planted_topic.find(table.rows[i].doc_id);
        const int label = table.labels[i];
        if (label == noise_label || it == sc.planted_topic.end()) {
            continue;
        }
        const int truth = it->second;
        found.push_back(label);
        planted.push_back(truth);
        ++by_cluster[label][truth];
        ++by_topic[truth][label];
    }
    const double rand = naive::rand_index(found, planted);
    std::map<int, int> cluster_of;  // planted topic -> cluster holding most of it, when mutual
    for (const auto& [topic, clusters] : by_topic) {
        std::size_t total = 0, best = 0;
        int arg = -1;
        for (const auto& [c, n] : clusters) {
            total += n;
            if (n > best) {
                best = n;
                arg = c;
            }
        }
        std::size_t cluster_total = 0;
        for (const auto& [t, n] : by_cluster[arg]) {
            cluster_total += n;
        }
        if (2 * best > total && 2 * best > cluster_total) {
            cluster_of[topic] = arg;
        }
    }
    const bool a = cluster_of.size() >= 5 && rand >= 0.9;

    // (b) top-2 divergence ranking
    const auto filtered = deserialize_topics(read_file((out / "topics_filtered.bin").string()));
    const auto div = diverge_table(filtered);
    const auto ranking = rank_by_score(div.topics);
    bool b = ranking.size() >= 2 && cluster_of.count(sc.exclusive_early) && cluster_of.count(sc.exclusive_late);
    if (b) {
        const std::set<int> top{ranking[0], ranking[1]};
        b = top == std::set<int>{cluster_of[sc.exclusive_early], cluster_of[sc.exclusive_late]};
    }

    // (c) asymmetric-breadth topic
    std::ifstream bias_in(out / "bias.csv");
    const auto bias = read_bias_csv(bias_in);
    double margin = std::nan("");
    if (cluster_of.count(sc.asymmetric)) {
        for (const auto& r : bias) {
            if (r.topic_id == cluster_of[sc.asymmetric] && !r.insufficient) {
                margin = r.ratios.ratio_L - r.ratios.ratio_E;
            }
        }
    }
    const bool c = margin >= 0.15;
    const bool d = run.seconds < 60.0;

    std::ostringstream s;
    s << "(a) " << cluster_of.size() << "/6 topics, Rand " << rand << " " << (a ? "ok" : "no") << "; (b) top-2 "
      << (b ? "ok" : "no") << ", " << div.outliers.size() << " above the x4 fence; (c) margin " << margin << " "
      << (c ? "ok" : "no") << "; (d) " << run.seconds << " s " << (d ? "ok" : "no");
    return {a && b && c && d, s.str()};
}

Outcome statistical_primitives() {
    const std::vector<double> a{1, 2, 3, 4}, b{2, 3, 4, 5};
    const auto w = welch_t(a, b);
    const bool welch = std::abs(w.t + 1.0954) <= 1e-3 && std::abs(w.df - 6.0) <= 1e-6 && std::abs(w.p - 0.315) <= 2e-3;
    std::vector<double> x, up, down;
    for (int i = 0; i < 25; ++i) {
        x.push_back(0.37 * i - 2);
        up.push_back(3.0 * x.back() + 2.0);
        down.push_back(-0.5 * x.back() + 1.0);
    }
    const double r_up = pearson_r(x, up), r_down = pearson_r(x, down);
    const bool pearson = std::abs(r_up - 1) <= 1e-12 && std::abs(r_down + 1) <= 1e-12;
    std::ostringstream d;
    d << "t=" << w.t << " df=" << w.df << " p=" << w.p << "; r=" << r_up << ", " << r_down;
    return {welch && pearson, d.str()};
}

Outcome determinism(const PlantedRun& first, const PlantedRun& second) {
    std::vector<std::string> files{"divergence.csv", "bias.csv"};
    for (const auto& entry : fs::directory_iterator(first.dir / "out" / "figures")) {
        files.push_back("figures/" + entry.path().filename().string());
    }
    std::sort(files.begin(), files.end());
    std::vector<std::string> differ;
    for (const auto& f : files) {
        const auto p = second.dir / "out" / f;
        if (!fs::exists(p) || read_file((first.dir / "out" / f).string()) != read_file(p.string())) {
            differ.push_back(f);
        }
    }
    std::ostringstream d;
    d << files.size() << " files compared, " << differ.size() << " differ";
    for (const auto& f : differ) {
        d << " " << f;
    }
    return {differ.empty() && files.size() >= 4, d.str()};
}

Outcome half_line_and_fences() {
    const std::vector<std::string> authors{"a", "a", "a", "a", "a", "b", "c", "d"};
    const double h = user_half_line(authors);
    const std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 100};
    const double fence = iqr_fences(v, 1.5).high;
    std::ostringstream d;
    d << "half line " << h << ", high fence " << fence;
    return {h == 0.25 && fence == 14.5, d.str()};
}

}  // namespace

int main() {
    std::cout.precision(6);
    run_criterion(1, "HDBSCAN matches the naive reference", hdbscan_oracle);
    run_criterion(2, "per-topic divergence sums to JSD", jsd_consistency);
    run_criterion(3, "KDE and HDI regions", kde_hdi);
    run_criterion(4, "Fisher direction is optimal", fisher_optimality);
    run_criterion(5, "overlap-ratio algebra", overlap_algebra);

    std::optional<PlantedRun> first, second;
    try {
        first = run_planted("a");
    } catch (const std::exception& e) {
        std::cout << "planted pipeline run failed: " << e.what() << std::endl;
    }
    run_criterion(6, "planted end-to-end", [&]() -> Outcome {
        if (!first) {
            return {false, "pipeline did not complete"};
        }
        return planted_end_to_end(*first);
    });
    run_criterion(7, "Welch and Pearson primitives", statistical_primitives);
    run_criterion(8, "byte-identical reruns", [&]() -> Outcome {
        if (!first) {
            return {false, "first run missing"};
        }
        second = run_planted("b");
        return determinism(*first, *second);
    });
    run_criterion(9, "user half line and IQR fence", half_line_and_fences);

    for (const auto* r : {&first, &second}) {
        if (*r) {
            fs::remove_all((*r)->dir);
        }
    }
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
    return failures == 0 ? 0 : 1;
}
