#include <gtest/gtest.h>

#include <functional>
#include <numeric>
#include <random>

#include "clusterer.hpp"
#include "support/naive_hdbscan.hpp"
#include "topics.hpp"

using namespace engage;

namespace {

Matrix blobs(std::mt19937_64& rng, std::size_t n, std::size_t dim, std::size_t centres) {
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> where(-8.0, 8.0);
    std::vector<std::vector<double>> c(centres, std::vector<double>(dim));
    for (auto& v : c) {
        for (auto& x : v) {
            x = where(rng);
        }
    }
    Matrix m(n, dim);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& centre = c[rng() % centres];
        for (std::size_t k = 0; k < dim; ++k) {
            m(i, k) = centre[k] + noise(rng);
        }
    }
    return m;
}

Matrix dbcv_points() {
    const std::vector<std::pair<double, double>> pts{
        {1.02, -1.278}, {0.209, -0.284}, {-0.226, -0.108}, {-1.01, -0.116}, {-0.433, 1.661}, {0.113, -0.176},
        {-0.141, -0.334}, {-0.528, -0.195}, {0.241, -0.119}, {0.479, -0.1}, {0.012, 0.773}, {0.273, -0.253},
        {3.872, 1.378}, {5.355, 0.811}, {3.83, 1.702}, {3.379, 0.796}, {4.618, 1.406}, {4.064, 1.469},
        {2.02, 1.715}, {3.328, -0.168}, {4.194, 1.49}, {3.689, 0.247}, {1.01, 4.979}, {1.562, 5.299},
        {1.078, 5.445}, {0.918, 4.63}, {1.234, 5.233}, {0.914, 4.687}, {1.092, 4.002}, {1.276, 5.197},
        {0.344, 5.025}, {2.536, 5.369}, {-0.354, 4.807}, {-0.648, 5.715}};
    Matrix m(pts.size(), 2);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        m(i, 0) = pts[i].first;
        m(i, 1) = pts[i].second;
    }
    return m;
}

std::vector<int> dbcv_labels() {
    std::vector<int> l;
    l.insert(l.end(), 12, 0);
    l.insert(l.end(), 10, 1);
    l.insert(l.end(), 9, 2);
    l.insert(l.end(), 3, -1);
    return l;
}

}  // namespace

TEST(CoreDistances, ExcludeSelf) {
    Matrix x(4, 1);
    x(0, 0) = 0;
    x(1, 0) = 1;
    x(2, 0) = 3;
    x(3, 0) = 7;
    const auto core = core_distances(x, 2);
    EXPECT_DOUBLE_EQ(core[0], 3.0);
    EXPECT_DOUBLE_EQ(core[1], 2.0);
    EXPECT_DOUBLE_EQ(core[2], 3.0);
    EXPECT_DOUBLE_EQ(core[3], 6.0);
    EXPECT_THROW(core_distances(x, 4), Error);
}

TEST(Mst, WeightMatchesPrimOnDenseGraph) {
    std::mt19937_64 rng(4);
    const auto x = blobs(rng, 60, 3, 3);
    const auto core = core_distances(x, 4);
    const auto mst = build_mst(x, core);
    ASSERT_EQ(mst.size(), x.rows - 1);
    const auto w = naive::mutual_reachability(x, 4);
    // Kruskal on the naive mutual-reachability matrix
    std::vector<std::tuple<double, std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i < x.rows; ++i) {
        for (std::size_t j = i + 1; j < x.rows; ++j) {
            edges.emplace_back(w[i][j], i, j);
        }
    }
    std::sort(edges.begin(), edges.end());
    std::vector<std::size_t> parent(x.rows);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<std::size_t(std::size_t)> find = [&](std::size_t a) {
        return parent[a] == a ? a : parent[a] = find(parent[a]);
    };
    double kruskal = 0;
    for (const auto& [d, a, b] : edges) {
        if (find(a) != find(b)) {
            parent[find(a)] = find(b);
            kruskal += d;
        }
    }
    double total = 0;
    for (const auto& e : mst) {
        total += e.weight;
    }
    EXPECT_NEAR(total, kruskal, 1e-9);
}

TEST(Hdbscan, AgreesWithNaiveReference) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 30 + rng() % 40;
        const auto x = blobs(rng, n, 2, 2 + rng() % 3);
        const std::size_t ms = 2 + rng() % 5;
        const std::size_t mcs = 3 + rng() % 6;
        const auto fast = hdbscan(x, ms, mcs);
        const auto slow = naive::hdbscan(x, ms, mcs);
        EXPECT_EQ(fast.labels, slow) << "trial " << trial << " ms=" << ms << " mcs=" << mcs;
    }
}

TEST(Hdbscan, LabelsNumberedByFirstMember) {
    std::mt19937_64 rng(2);
    const auto x = blobs(rng, 120, 2, 4);
    const auto m = hdbscan(x, 5, 10);
    int next = 0;
    for (int l : m.labels) {
        if (l >= 0) {
            EXPECT_LE(l, next);
            next = std::max(next, l + 1);
        }
    }
    EXPECT_EQ(static_cast<std::size_t>(next), m.topic_count);
}

TEST(Hdbscan, TwoFarBlobsFound) {
    Matrix x(40, 2);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> noise(0.0, 0.3);
    for (std::size_t i = 0; i < 40; ++i) {
        x(i, 0) = (i < 20 ? 0.0 : 50.0) + noise(rng);
        x(i, 1) = noise(rng);
    }
    const auto m = hdbscan(x, 3, 5);
    EXPECT_EQ(m.topic_count, 2u);
    for (std::size_t i = 0; i < 40; ++i) {
        if (m.labels[i] >= 0) {
            EXPECT_EQ(m.labels[i], i < 20 ? 0 : 1);
        }
    }
}

// Mutual reachability ties are common, so the frozen values assume Prim's tree grown from the
// first member with the lowest index winning ties.
TEST(Dbcv, MatchesReferenceImplementation) {
    const auto x = dbcv_points();
    auto labels = dbcv_labels();
    EXPECT_NEAR(dbcv_score(x, labels), 0.6808673566435629, 1e-10);
    for (auto& l : labels) {
        if (l < 0) {
            l = 2;
        }
    }
    EXPECT_NEAR(dbcv_score(x, labels), 0.7189631423930715, 1e-10);
}

TEST(Dbcv, Bounded) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = blobs(rng, 80, 3, 3);
        const auto m = hdbscan(x, 4, 8);
        if (m.topic_count < 2) {
            continue;
        }
        const double s = dbcv_score(x, m.labels);
        EXPECT_GE(s, -1.0);
        EXPECT_LE(s, 1.0);
    }
    const std::vector<int> short_labels{0, 1};
    EXPECT_THROW(dbcv_score(dbcv_points(), short_labels), Error);
}

TEST(Tuning, PicksHighestDbcvAndRecordsEveryCell) {
    std::mt19937_64 rng(5);
    const auto x = blobs(rng, 150, 2, 3);
    const std::vector<std::size_t> ms{3, 5, 8};
    const std::vector<std::size_t> mcs{5, 10, 20};
    const auto r = tune_hdbscan(x, ms, mcs, 1);
    ASSERT_EQ(r.candidates.size(), 9u);
    double best = -2;
    for (const auto& c : r.candidates) {
        if (c.dbcv) {
            best = std::max(best, *c.dbcv);
        }
    }
    EXPECT_EQ(r.best.dbcv, best);
    const auto again = hdbscan(x, r.best.min_samples, r.best.min_cluster_size);
    EXPECT_EQ(again.labels, r.best.labels);
    EXPECT_EQ(tune_hdbscan(x, ms, mcs, 2).best.labels, r.best.labels);
}

TEST(Tuning, TiePrefersSmallerParameters) {
    Matrix x(40, 2);
    for (std::size_t i = 0; i < 40; ++i) {
        x(i, 0) = (i < 20 ? 0.0 : 100.0) + static_cast<double>(i % 20) * 0.01;
        x(i, 1) = static_cast<double>(i % 5) * 0.01;
    }
    const std::vector<std::size_t> ms{3, 2};
    const std::vector<std::size_t> mcs{10, 5};
    const auto r = tune_hdbscan(x, ms, mcs, 1);
    std::size_t equal = 0;
    for (const auto& c : r.candidates) {
        equal += c.dbcv && *c.dbcv == r.best.dbcv;
    }
    if (equal > 1) {
        EXPECT_EQ(r.best.min_cluster_size, 5u);
    }
}

TEST(Tuning, EmptyGridRejected) {
    std::mt19937_64 rng(1);
    const auto x = blobs(rng, 20, 2, 2);
    const std::vector<std::size_t> none;
    const std::vector<std::size_t> some{5};
    EXPECT_THROW(tune_hdbscan(x, none, some), Error);
}

TEST(TopicContainer, RoundTrip) {
    EmbeddingSet src;
    src.rows = {{"a", "u1", Group::early}, {"b", "u2", Group::late}, {"c", "u1", Group::early}};
    src.early_users = 1;
    src.late_users = 1;
    TopicModel m;
    m.labels = {0, -1, 1};
    m.min_samples = 2;
    m.min_cluster_size = 3;
    m.dbcv = 0.25;
    m.topic_count = 2;
    auto t = make_topic_table(src, m);
    EXPECT_EQ(t.retained, (std::vector<int>{0, 1}));
    t.retained = {1};
    t.half_line_cutoff = 0.5;
    const auto back = deserialize_topics(serialize_topics(t));
    EXPECT_EQ(back.rows, t.rows);
    EXPECT_EQ(back.labels, t.labels);
    EXPECT_EQ(back.retained, t.retained);
    EXPECT_EQ(back.dbcv, 0.25);
    EXPECT_EQ(back.half_line_cutoff, 0.5);
    EXPECT_EQ(back.members().at(1), (std::vector<std::size_t>{2}));
    EXPECT_TRUE(back.is_retained(1));
    EXPECT_FALSE(back.is_retained(0));
}

TEST(CoreDistances, LineExamples) {
    Matrix x(3, 1);
    x(0, 0) = 0;
    x(1, 0) = 1;
    x(2, 0) = 2;
    EXPECT_EQ(core_distances(x, 1), (std::vector<double>{1, 1, 1}));
    EXPECT_EQ(core_distances(x, 2), (std::vector<double>{2, 1, 2}));
    Matrix dup(3, 1);
    dup(0, 0) = 4;
    dup(1, 0) = 4;
    dup(2, 0) = 9;
    EXPECT_EQ(core_distances(dup, 1)[0], 0.0);
    EXPECT_EQ(core_distances(dup, 1)[1], 0.0);
}

TEST(Mst, EqualCoresKeepTwoShortestEdges) {
    Matrix x(3, 2);
    x(1, 0) = 3;
    x(2, 1) = 4;  // edges 3, 4, 5
    const std::vector<double> core{1, 1, 1};
    const auto mst = build_mst(x, core);
    ASSERT_EQ(mst.size(), 2u);
    std::vector<double> w{mst[0].weight, mst[1].weight};
    std::sort(w.begin(), w.end());
    EXPECT_EQ(w, (std::vector<double>{3, 4}));
}

TEST(Mst, MatchesExhaustiveSpanningTrees) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 4 + trial % 4;  // up to 7 points
        const auto x = blobs(rng, n, 2, 2);
        const std::size_t ms = 1 + trial % 3;
        const auto w = naive::mutual_reachability(x, ms);
        std::vector<std::pair<std::size_t, std::size_t>> all;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                all.emplace_back(i, j);
            }
        }
        // every (n-1)-edge subset; keep the connected ones
        double best = std::numeric_limits<double>::infinity();
        std::vector<bool> pick(all.size(), false);
        std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(n - 1), true);
        do {
            std::vector<std::size_t> parent(n);
            std::iota(parent.begin(), parent.end(), 0);
            std::function<std::size_t(std::size_t)> find = [&](std::size_t a) {
                return parent[a] == a ? a : parent[a] = find(parent[a]);
            };
            double total = 0;
            std::size_t merged = 0;
            for (std::size_t e = 0; e < all.size(); ++e) {
                if (pick[e]) {
                    const auto [a, b] = all[e];
                    total += w[a][b];
                    if (find(a) != find(b)) {
                        parent[find(a)] = find(b);
                        ++merged;
                    }
                }
            }
            if (merged == n - 1) {
                best = std::min(best, total);
            }
        } while (std::prev_permutation(pick.begin(), pick.end()));
        double got = 0;
        for (const auto& e : build_mst(x, core_distances(x, ms))) {
            got += e.weight;
        }
        EXPECT_NEAR(got, best, 1e-9) << "trial " << trial;
    }
}

TEST(Mst, IdenticalPointsGiveZeroEdges) {
    Matrix x(4, 2, 1.5);
    const auto mst = build_mst(x, core_distances(x, 1));
    ASSERT_EQ(mst.size(), 3u);
    for (const auto& e : mst) {
        EXPECT_EQ(e.weight, 0.0);
    }
}

TEST(Hdbscan, TwoDistantBlobsNoNoise) {
    std::mt19937_64 rng(14);
    std::normal_distribution<double> z(0.0, 0.5);
    Matrix x(60, 2);
    for (std::size_t i = 0; i < 60; ++i) {
        x(i, 0) = (i < 30 ? 0.0 : 100.0) + z(rng);
        x(i, 1) = z(rng);
    }
    const auto m = hdbscan(x, 5, 25);
    EXPECT_EQ(m.topic_count, 2u);
    EXPECT_EQ(m.noise_count(), 0u);
}

TEST(Hdbscan, TooFewPointsAreAllNoise) {
    std::mt19937_64 rng(15);
    const auto x = blobs(rng, 10, 2, 3);
    const auto m = hdbscan(x, 3, 25);
    EXPECT_EQ(m.topic_count, 0u);
    EXPECT_EQ(m.noise_count(), 10u);
}

TEST(Dbcv, TightDistantBlobsScoreHigh) {
    Matrix x(6, 2);
    const double pts[6][2] = {{0, 0}, {0.1, 0}, {0, 0.1}, {10, 10}, {10.1, 10}, {10, 10.1}};
    for (std::size_t i = 0; i < 6; ++i) {
        x(i, 0) = pts[i][0];
        x(i, 1) = pts[i][1];
    }
    const std::vector<int> good{0, 0, 0, 1, 1, 1};
    const std::vector<int> shuffled{0, 1, 0, 1, 0, 1};
    EXPECT_GT(dbcv_score(x, good), 0.5);
    EXPECT_LT(dbcv_score(x, shuffled), dbcv_score(x, good));
}

TEST(Dbcv, IdenticalPointsPerClusterScoreOne) {
    Matrix x(6, 2);
    for (std::size_t i = 3; i < 6; ++i) {
        x(i, 0) = 5;
    }
    EXPECT_EQ(dbcv_score(x, std::vector<int>{0, 0, 0, 1, 1, 1}), 1.0);
}

TEST(Tuning, RecoversThreeBlobs) {
    std::mt19937_64 rng(16);
    std::normal_distribution<double> z(0.0, 0.6);
    Matrix x(240, 2);
    std::vector<int> truth(240);
    const double centres[3][2] = {{0, 0}, {12, 0}, {0, 12}};
    for (std::size_t i = 0; i < 240; ++i) {
        truth[i] = static_cast<int>(i / 80);
        x(i, 0) = centres[i / 80][0] + z(rng);
        x(i, 1) = centres[i / 80][1] + z(rng);
    }
    const std::vector<std::size_t> grid{5, 10, 25};
    const auto r = tune_hdbscan(x, grid, grid, 1);
    EXPECT_GE(naive::rand_index(r.best.labels, truth), 0.95);
}

TEST(Tuning, SingleCellEqualsDirectCall) {
    std::mt19937_64 rng(18);
    const auto x = blobs(rng, 90, 2, 3);
    const std::vector<std::size_t> ms{4}, mcs{9};
    const auto r = tune_hdbscan(x, ms, mcs, 1);
    ASSERT_EQ(r.candidates.size(), 1u);
    EXPECT_EQ(r.best.labels, hdbscan(x, 4, 9).labels);
}
