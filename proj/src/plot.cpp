#include "rlol/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace rlol {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else if (c == '"') out += "&quot;";
        else out += c;
    }
    return out;
}

std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", x);
    return buf;
}

std::string tick_label(double v) {
    char buf[32];
    if (v != 0.0 && (std::abs(v) >= 1e4 || std::abs(v) < 1e-2)) std::snprintf(buf, sizeof buf, "%.0e", v);
    else std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

struct Axis {
    double lo = 0, hi = 1;
    bool log = false;

    double map(double v, double a, double b) const {
        const double t = log ? (std::log10(v) - lo) / (hi - lo) : (v - lo) / (hi - lo);
        return a + t * (b - a);
    }
    std::vector<double> ticks() const {
        std::vector<double> out;
        if (log) {
            for (double e = std::ceil(lo - 1e-9); e <= hi + 1e-9; e += 1.0) out.push_back(std::pow(10.0, e));
            return out;
        }
        const double raw = (hi - lo) / 5.0;
        const double mag = std::pow(10.0, std::floor(std::log10(raw)));
        double step = mag;
        for (double m : {1.0, 2.0, 5.0, 10.0})
            if (raw <= m * mag) {
                step = m * mag;
                break;
            }
        for (double v = std::ceil(lo / step - 1e-9) * step; v <= hi + 1e-9 * step; v += step)
            out.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
        return out;
    }
};

bool usable(double v, bool log) { return std::isfinite(v) && (!log || v > 0.0); }

Axis make_axis(const std::vector<PlotSeries>& series, bool use_x, bool log) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : series) {
        const std::size_t n = std::min(s.x.size(), s.y.size());
        for (std::size_t i = 0; i < n; ++i) {
            if (!usable(s.x[i], false) || !usable(s.y[i], false)) continue;
            const double v = use_x ? s.x[i] : s.y[i];
            if (!usable(v, log)) continue;
            const double t = log ? std::log10(v) : v;
            lo = std::min(lo, t);
            hi = std::max(hi, t);
        }
    }
    Axis a;
    a.log = log;
    if (!std::isfinite(lo)) return a;
    if (hi - lo < 1e-12) {
        lo -= log ? 0.5 : std::max(0.5, std::abs(lo) * 0.1);
        hi += log ? 0.5 : std::max(0.5, std::abs(hi) * 0.1);
    }
    a.lo = lo;
    a.hi = hi;
    return a;
}

}  // namespace

std::string line_chart_svg(const std::vector<PlotSeries>& series, const PlotOptions& o) {
    const double W = o.width, H = o.height;
    const double left = 70, right = W - 150, top = 40, bottom = H - 50;
    const Axis ax = make_axis(series, true, o.log_x), ay = make_axis(series, false, o.log_y);

    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(o.width) + "\" height=\"" +
                      std::to_string(o.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + num((left + right) / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + esc(o.title) + "</text>\n";
    for (double t : ax.ticks()) {
        const double x = ax.map(t, left, right);
        svg += "<line x1=\"" + num(x) + "\" y1=\"" + num(top) + "\" x2=\"" + num(x) + "\" y2=\"" + num(bottom) +
               "\" stroke=\"#eee\"/>\n";
        svg += "<text x=\"" + num(x) + "\" y=\"" + num(bottom + 16) + "\" text-anchor=\"middle\">" + tick_label(t) + "</text>\n";
    }
    for (double t : ay.ticks()) {
        const double y = ay.map(t, bottom, top);
        svg += "<line x1=\"" + num(left) + "\" y1=\"" + num(y) + "\" x2=\"" + num(right) + "\" y2=\"" + num(y) +
               "\" stroke=\"#eee\"/>\n";
        svg += "<text x=\"" + num(left - 6) + "\" y=\"" + num(y + 4) + "\" text-anchor=\"end\">" + tick_label(t) + "</text>\n";
    }
    svg += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(right - left) + "\" height=\"" +
           num(bottom - top) + "\" fill=\"none\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + num((left + right) / 2) + "\" y=\"" + num(H - 12) + "\" text-anchor=\"middle\">" + esc(o.x_label) + "</text>\n";
    svg += "<text transform=\"translate(16," + num((top + bottom) / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
           esc(o.y_label) + "</text>\n";

    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = kPalette[k % std::size(kPalette)];
        std::string pts;
        const std::size_t n = std::min(s.x.size(), s.y.size());
        std::size_t used = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!usable(s.x[i], o.log_x) || !usable(s.y[i], o.log_y)) continue;
            pts += num(ax.map(s.x[i], left, right)) + "," + num(ay.map(s.y[i], bottom, top)) + " ";
            ++used;
        }
        if (used > 1)
            svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
        if (used <= 20) {
            for (std::size_t i = 0; i < n; ++i) {
                if (!usable(s.x[i], o.log_x) || !usable(s.y[i], o.log_y)) continue;
                svg += "<circle cx=\"" + num(ax.map(s.x[i], left, right)) + "\" cy=\"" + num(ay.map(s.y[i], bottom, top)) +
                       "\" r=\"3\" fill=\"" + color + "\"/>\n";
            }
        }
        const double ly = top + 14 + 18 * static_cast<double>(k);
        svg += "<line x1=\"" + num(right + 10) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(right + 30) + "\" y2=\"" +
               num(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        svg += "<text x=\"" + num(right + 36) + "\" y=\"" + num(ly) + "\">" + esc(s.label) + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace rlol
