#include <gtest/gtest.h>

#include <random>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "stats.hpp"

using namespace engage;

TEST(IncompleteBeta, MatchesScipy) {
    EXPECT_NEAR(incomplete_beta(0.5, 0.5, 0.3), 0.36901011956554536, 1e-13);
    EXPECT_NEAR(incomplete_beta(2, 3, 0.4), 0.5248, 1e-13);
    EXPECT_NEAR(incomplete_beta(10, 0.5, 0.9), 0.15164090963470994, 1e-13);
    EXPECT_NEAR(incomplete_beta(3, 0.5, 0.999), 0.9407468104840536, 1e-13);
    EXPECT_NEAR(incomplete_beta(50, 60, 0.45), 0.46423529143060444, 1e-12);
    EXPECT_EQ(incomplete_beta(2, 3, 0.0), 0.0);
    EXPECT_EQ(incomplete_beta(2, 3, 1.0), 1.0);
    EXPECT_THROW(incomplete_beta(2, 3, 1.5), Error);
    EXPECT_THROW(incomplete_beta(0, 3, 0.5), Error);
}

TEST(IncompleteBeta, AgreesWithBoostOnRandomArguments) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> shape(0.05, 80.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        const double a = shape(rng), b = shape(rng), x = unit(rng);
        const double expect = boost::math::ibeta(a, b, x);
        EXPECT_NEAR(incomplete_beta(a, b, x), expect, 1e-11 + 1e-10 * expect) << a << " " << b << " " << x;
    }
}

TEST(StudentT, TwoSidedPValues) {
    EXPECT_NEAR(student_t_two_sided(2.0, 5), 0.10193947882985828, 1e-13);
    EXPECT_NEAR(student_t_two_sided(0.5, 30.5), 0.6206635239145257, 1e-13);
    EXPECT_NEAR(student_t_two_sided(-10, 3), 0.0021283990584141494, 1e-14);
    EXPECT_EQ(student_t_two_sided(0, 4), 1.0);
    EXPECT_EQ(student_t_two_sided(std::numeric_limits<double>::infinity(), 4), 0.0);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> tt(-8, 8), nu(1, 200);
    for (int i = 0; i < 500; ++i) {
        const double t = tt(rng), df = nu(rng);
        const boost::math::students_t dist(df);
        const double expect = 2 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
        EXPECT_NEAR(student_t_two_sided(t, df), expect, 1e-11);
    }
}

TEST(Welch, MatchesScipyTtest) {
    const std::vector<double> a{1, 2, 3, 4}, b{2, 3, 4, 5};
    const auto r = welch_t(a, b);
    EXPECT_NEAR(r.t, -1.0954451150103324, 1e-13);
    EXPECT_NEAR(r.p, 0.3153335962012296, 1e-12);
    EXPECT_NEAR(r.df, 6.0, 1e-12);

    const std::vector<double> c{0.2, 1.5, 2.2, 3.9, 4.1, 5.5}, d{3.1, 2.7, 6.6, 7.0, 8.2};
    const auto s = welch_t(c, d);
    EXPECT_NEAR(s.t, -1.9269220898621802, 1e-13);
    EXPECT_NEAR(s.p, 0.0921106642599166, 1e-12);
    EXPECT_NEAR(s.df, 7.591229836962023, 1e-12);
}

TEST(Welch, AntisymmetricAndDegenerate) {
    const std::vector<double> a{0.2, 1.5, 2.2, 3.9}, b{3.1, 2.7, 6.6};
    const auto ab = welch_t(a, b), ba = welch_t(b, a);
    EXPECT_DOUBLE_EQ(ab.t, -ba.t);
    EXPECT_DOUBLE_EQ(ab.p, ba.p);
    const std::vector<double> one{1.0};
    EXPECT_THROW(welch_t(one, b), Error);
    const std::vector<double> flat1{2, 2, 2}, flat2{2, 2};
    EXPECT_THROW(welch_t(flat1, flat2), Error);
    const std::vector<double> flat3{3, 3};
    const auto sep = welch_t(flat1, flat3);
    EXPECT_TRUE(std::isinf(sep.t));
    EXPECT_LT(sep.t, 0);
    EXPECT_EQ(sep.p, 0.0);
}

TEST(Pearson, MatchesNumpy) {
    const std::vector<double> x{1, 2, 3.5, 4, 4.5, 6, 7.25, 8, 9.5, 10};
    const std::vector<double> y{2.1, 3.9, 6.2, 8.8, 9.1, 11.5, 15.2, 15.9, 19.4, 21.0};
    EXPECT_NEAR(pearson_r(x, y), 0.9967656589154511, 1e-14);
    std::vector<double> neg(y.rbegin(), y.rend());
    EXPECT_LT(pearson_r(x, neg), 0);
    EXPECT_DOUBLE_EQ(pearson_r(x, x), 1.0);
    const std::vector<double> flat(10, 1.0);
    EXPECT_THROW(pearson_r(x, flat), Error);
    EXPECT_THROW(pearson_r(x, std::vector<double>{1, 2}), Error);
}

TEST(Pearson, InvariantUnderAffineMaps) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> x(20), y(20), x2(20), y2(20);
        for (int i = 0; i < 20; ++i) {
            x[i] = n(rng);
            y[i] = 0.5 * x[i] + n(rng);
            x2[i] = 3 * x[i] - 7;
            y2[i] = 0.01 * y[i] + 100;
        }
        EXPECT_NEAR(pearson_r(x, y), pearson_r(x2, y2), 1e-10);
    }
}

TEST(Welch, IdenticalSamples) {
    const std::vector<double> a{1.5, 2.0, 4.0, 3.2};
    const auto w = welch_t(a, a);
    EXPECT_EQ(w.t, 0.0);
    EXPECT_DOUBLE_EQ(w.p, 1.0);
}

TEST(Welch, WellSeparatedSamples) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> z(0, 1);
    std::vector<double> a(20), b(20);
    for (std::size_t i = 0; i < 20; ++i) {
        a[i] = z(rng);
        b[i] = 10 + z(rng);
    }
    EXPECT_LT(welch_t(a, b).p, 1e-6);
}

TEST(Pearson, PerfectLines) {
    const std::vector<double> x{-3, -1, 0, 2, 5, 8};
    std::vector<double> up, down;
    for (double v : x) {
        up.push_back(2 * v + 1);
        down.push_back(-v);
    }
    EXPECT_NEAR(pearson_r(x, up), 1.0, 1e-12);
    EXPECT_NEAR(pearson_r(x, down), -1.0, 1e-12);
}
