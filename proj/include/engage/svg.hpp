#ifndef ENGAGE_SVG_HPP
#define ENGAGE_SVG_HPP

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "common.hpp"
#include "semantic_bias.hpp"
#include "topic_filter.hpp"

/**
 * @file svg.hpp
 *
 * @brief Static scatter and box plots as standalone SVG text. Output depends only on the input
 * values, so identical inputs give identical bytes.
 */

namespace engage {

struct ScatterPoint {
    double x = 0;
    double y = 0;
    int topic_id = 0;
};

struct ReferenceLine {
    double slope = 1;
    std::string css_class = "reference";
};

struct ScatterPlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<ScatterPoint> points;
    std::vector<ReferenceLine> lines;  // through the origin, y = slope * x
    bool log_axes = false;             // plots log10(1 + v) on both axes
};

namespace svg_detail {

inline constexpr double width = 480, height = 400;
inline constexpr double left = 64, right = 16, top = 36, bottom = 52;

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string header(const std::string& title) {
    return fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
        "<style>text{{font-family:sans-serif;font-size:11px}} .point{{fill:#1f77b4;fill-opacity:0.7}} "
        ".reference{{stroke:#888;stroke-dasharray:4 3}} .per-capita{{stroke:#d62728;stroke-dasharray:6 3}} "
        ".box{{stroke:#333;fill-opacity:0.6}} .E{{fill:#1f77b4}} .L{{fill:#ff7f0e}} .median{{stroke:#000;stroke-width:2}} "
        ".whisker{{stroke:#333}} .outlier{{fill:none;stroke:#333}} .axis{{stroke:#000}}</style>\n"
        "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
        "<text x=\"{2}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{3}</text>\n",
        width, height, width / 2, escape(title));
}

/// Maps [lo, hi] to a pixel range, padding a degenerate span.
struct Scale {
    double lo = 0, hi = 1, p0 = 0, p1 = 1;

    Scale(double l, double h, double a, double b) : lo(l), hi(h), p0(a), p1(b) {
        if (!(hi > lo)) {
            lo -= 0.5;
            hi += 0.5;
        }
    }

    double operator()(double v) const { return p0 + (v - lo) / (hi - lo) * (p1 - p0); }
};

inline std::string num(double v) { return fmt::format("{:.2f}", v); }

inline std::string axes(const Scale& sx, const Scale& sy, const std::string& xl, const std::string& yl) {
    std::string out;
    out += fmt::format("<line class=\"axis\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>\n", num(left), num(height - bottom),
                       num(width - right), num(height - bottom));
    out += fmt::format("<line class=\"axis\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>\n", num(left), num(top), num(left),
                       num(height - bottom));
    for (int i = 0; i <= 4; ++i) {
        const double vx = sx.lo + (sx.hi - sx.lo) * i / 4.0;
        const double vy = sy.lo + (sy.hi - sy.lo) * i / 4.0;
        out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{:.3g}</text>\n", num(sx(vx)),
                           num(height - bottom + 14), vx);
        out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3g}</text>\n", num(left - 4), num(sy(vy) + 4), vy);
    }
    out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", num((left + width - right) / 2),
                       num(height - 12), escape(xl));
    out += fmt::format("<text x=\"14\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {0})\">{1}</text>\n",
                       num((top + height - bottom) / 2), escape(yl));
    return out;
}

}  // namespace svg_detail

/**
 * Scatter plot with one `<circle class="point">` per point and one dashed line per reference
 * slope, annotated "y=<slope>x".
 */
inline std::string render_scatter(const ScatterPlot& plot) {
    using namespace svg_detail;
    if (plot.points.empty()) {
        throw Error("render_scatter: no points");
    }
    for (const auto& p : plot.points) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw Error(fmt::format("render_scatter: topic {} has a non-finite coordinate", p.topic_id));
        }
        if (plot.log_axes && (p.x < 0 || p.y < 0)) {
            throw Error(fmt::format("render_scatter: topic {} has a negative count on a log axis", p.topic_id));
        }
    }
    auto tx = [&](double v) { return plot.log_axes ? std::log10(1 + v) : v; };
    double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
    bool first = true;
    for (const auto& p : plot.points) {
        const double x = tx(p.x), y = tx(p.y);
        xmin = first ? x : std::min(xmin, x);
        xmax = first ? x : std::max(xmax, x);
        ymin = first ? y : std::min(ymin, y);
        ymax = first ? y : std::max(ymax, y);
        first = false;
    }
    if (!plot.lines.empty()) {
        xmin = std::min(xmin, 0.0);
        ymin = std::min(ymin, 0.0);
    }
    const Scale sx(xmin, xmax, left, width - right);
    const Scale sy(ymin, ymax, height - bottom, top);

    std::string out = header(plot.title);
    out += axes(sx, sy, plot.log_axes ? plot.x_label + " (log10 1+n)" : plot.x_label,
                plot.log_axes ? plot.y_label + " (log10 1+n)" : plot.y_label);
    for (const auto& line : plot.lines) {
        if (!std::isfinite(line.slope)) {
            throw Error("render_scatter: reference slope is not finite");
        }
        // Sample the line so it stays straight in data space under the log transform.
        constexpr int steps = 64;
        const double raw_max = plot.log_axes ? std::pow(10.0, sx.hi) - 1 : sx.hi;
        const double raw_min = plot.log_axes ? 0.0 : sx.lo;
        std::string pts;
        double last_x = 0, last_y = 0;
        for (int i = 0; i <= steps; ++i) {
            const double x = raw_min + (raw_max - raw_min) * i / steps;
            double y = line.slope * x;
            if (plot.log_axes && y < 0) {
                continue;
            }
            y = std::clamp(tx(y), sy.lo, sy.hi);
            last_x = sx(tx(x));
            last_y = sy(y);
            pts += fmt::format("{}{},{}", pts.empty() ? "" : " ", num(last_x), num(last_y));
        }
        out += fmt::format("<polyline class=\"{}\" fill=\"none\" points=\"{}\"/>\n", line.css_class, pts);
        out += fmt::format("<text class=\"line-label\" x=\"{}\" y=\"{}\" text-anchor=\"end\">y={:.2f}x</text>\n",
                           num(last_x - 2), num(std::max(last_y - 4, top + 10)), line.slope);
    }
    for (const auto& p : plot.points) {
        out += fmt::format("<circle class=\"point\" data-topic=\"{}\" cx=\"{}\" cy=\"{}\" r=\"3.5\"/>\n", p.topic_id,
                           num(sx(tx(p.x))), num(sy(tx(p.y))));
    }
    out += "</svg>\n";
    return out;
}

struct BoxSummary {
    double q1 = 0;
    double median = 0;
    double q3 = 0;
    double whisker_low = 0;
    double whisker_high = 0;
    std::vector<double> outliers;
};

/// Quartiles by linear interpolation; whiskers reach the extreme data inside 1.5 IQR fences.
inline BoxSummary box_summary(std::span<const double> values) {
    if (values.empty()) {
        throw Error("box_summary: no values");
    }
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    BoxSummary b;
    b.q1 = interpolated_quantile(v, 0.25);
    b.median = interpolated_quantile(v, 0.5);
    b.q3 = interpolated_quantile(v, 0.75);
    const double lo = b.q1 - 1.5 * (b.q3 - b.q1), hi = b.q3 + 1.5 * (b.q3 - b.q1);
    b.whisker_low = b.q1;
    b.whisker_high = b.q3;
    for (double x : v) {
        if (x < lo || x > hi) {
            b.outliers.push_back(x);
        } else {
            b.whisker_low = std::min(b.whisker_low, x);
            b.whisker_high = std::max(b.whisker_high, x);
        }
    }
    return b;
}

/**
 * Paired ratio_E / ratio_L boxes for every non-empty stratum. Each box is a
 * `<rect class="box">` and its median a `<line class="median">` carrying the exact value in
 * `data-value`.
 */
inline std::string render_box(const StrataReport& report, const std::string& title = "Overlap ratios by volume stratum") {
    using namespace svg_detail;
    std::vector<const StratumReport*> shown;
    for (const auto& s : report.strata) {
        if (s.size() > 0) {
            shown.push_back(&s);
        }
    }
    if (shown.empty()) {
        throw Error("render_box: every stratum is empty");
    }
    const Scale sy(0.0, 1.0, height - bottom, top);
    std::string out = header(title);
    out += fmt::format("<line class=\"axis\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>\n", num(left), num(top), num(left),
                       num(height - bottom));
    for (int i = 0; i <= 4; ++i) {
        out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.2f}</text>\n", num(left - 4),
                           num(sy(i / 4.0) + 4), i / 4.0);
    }
    out += fmt::format("<text x=\"14\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {0})\">overlap ratio</text>\n",
                       num((top + height - bottom) / 2));
    const double slot = (width - left - right) / static_cast<double>(shown.size());
    for (std::size_t k = 0; k < shown.size(); ++k) {
        const auto& s = *shown[k];
        const double centre = left + slot * (static_cast<double>(k) + 0.5);
        const char* name = stratum_names[s.index];
        out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{} [{:.2f}, {:.2f}{} n={}</text>\n", num(centre),
                           num(height - bottom + 16), name, s.lower, s.upper, s.index == 2 ? "]" : ")", s.size());
        for (int g = 0; g < 2; ++g) {
            const auto& values = g == 0 ? s.ratio_E : s.ratio_L;
            const char* group = g == 0 ? "E" : "L";
            const auto b = box_summary(values);
            const double bw = std::min(36.0, slot / 3);
            const double x0 = centre + (g == 0 ? -bw - 3 : 3);
            const double mid = x0 + bw / 2;
            out += fmt::format("<line class=\"whisker\" x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\"/>\n", num(mid),
                               num(sy(b.whisker_low)), num(sy(b.whisker_high)));
            out += fmt::format(
                "<rect class=\"box {}\" data-stratum=\"{}\" data-group=\"{}\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\"/>\n",
                group, name, group, num(x0), num(sy(b.q3)), num(bw), num(sy(b.q1) - sy(b.q3)));
            out += fmt::format(
                "<line class=\"median\" data-stratum=\"{}\" data-group=\"{}\" data-value=\"{}\" x1=\"{}\" y1=\"{}\" x2=\"{}\" "
                "y2=\"{}\"/>\n",
                name, group, b.median, num(x0), num(sy(b.median)), num(x0 + bw), num(sy(b.median)));
            for (double o : b.outliers) {
                out += fmt::format("<circle class=\"outlier\" cx=\"{}\" cy=\"{}\" r=\"2.5\"/>\n", num(mid), num(sy(o)));
            }
        }
    }
    out += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">blue: ratio_E, orange: ratio_L</text>\n",
                       num(width / 2), num(height - 8));
    out += "</svg>\n";
    return out;
}

}  // namespace engage

#endif
