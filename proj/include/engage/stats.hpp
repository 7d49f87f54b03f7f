#ifndef ENGAGE_STATS_HPP
#define ENGAGE_STATS_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "common.hpp"

namespace engage {

namespace detail {

// Continued fraction for I_x(a, b), modified Lentz evaluation.
inline double beta_continued_fraction(double a, double b, double x) {
    constexpr int max_iterations = 500;
    constexpr double eps = 1e-15;
    constexpr double tiny = 1e-300;
    const double qab = a + b, qap = a + 1, qam = a - 1;
    double c = 1;
    double d = 1 - qab * x / qap;
    if (std::abs(d) < tiny) {
        d = tiny;
    }
    d = 1 / d;
    double h = d;
    for (int m = 1; m <= max_iterations; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1 + aa * d;
        if (std::abs(d) < tiny) {
            d = tiny;
        }
        c = 1 + aa / c;
        if (std::abs(c) < tiny) {
            c = tiny;
        }
        d = 1 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1 + aa * d;
        if (std::abs(d) < tiny) {
            d = tiny;
        }
        c = 1 + aa / c;
        if (std::abs(c) < tiny) {
            c = tiny;
        }
        d = 1 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1) < eps) {
            return h;
        }
    }
    return h;
}

}  // namespace detail

/// Regularised incomplete beta function I_x(a, b) for a, b > 0 and x in [0, 1].
inline double incomplete_beta(double a, double b, double x) {
    if (!(a > 0 && b > 0) || !(x >= 0 && x <= 1)) {
        throw Error("incomplete_beta: argument out of domain");
    }
    if (x == 0 || x == 1) {
        return x;
    }
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1) / (a + b + 2)) {
        return front * detail::beta_continued_fraction(a, b, x) / a;
    }
    return 1 - front * detail::beta_continued_fraction(b, a, 1 - x) / b;
}

/// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
inline double student_t_two_sided(double t, double df) {
    if (std::isinf(t)) {
        return 0.0;
    }
    return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

struct WelchResult {
    double t = 0;
    double df = 0;
    double p = 1;
};

inline double sample_mean(std::span<const double> v) {
    double s = 0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

inline double sample_variance(std::span<const double> v) {
    const double m = sample_mean(v);
    double s = 0;
    for (double x : v) {
        s += (x - m) * (x - m);
    }
    return s / static_cast<double>(v.size() - 1);
}

/**
 * Welch's unequal-variance t test of mean(a) - mean(b), with Welch-Satterthwaite degrees of
 * freedom and a two-sided p value. If both samples are constant but differ, t is infinite and
 * p is 0; constant equal samples have no defined statistic.
 */
inline WelchResult welch_t(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) {
        throw Error("welch_t: each sample needs at least 2 values");
    }
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double ma = sample_mean(a), mb = sample_mean(b);
    const double va = sample_variance(a) / na, vb = sample_variance(b) / nb;
    const double se2 = va + vb;
    WelchResult r;
    if (se2 == 0) {
        if (ma == mb) {
            throw Error("welch_t: both samples constant with equal means");
        }
        r.t = ma > mb ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.df = na + nb - 2;
        r.p = 0;
        return r;
    }
    r.t = (ma - mb) / std::sqrt(se2);
    r.df = se2 * se2 / (va * va / (na - 1) + vb * vb / (nb - 1));
    r.p = student_t_two_sided(r.t, r.df);
    return r;
}

/// Sample Pearson correlation.
inline double pearson_r(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw Error("pearson_r: need two equal-length series of at least 2 values");
    }
    const double mx = sample_mean(x), my = sample_mean(y);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0 || syy == 0) {
        throw Error("pearson_r: constant series");
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace engage

#endif
