#pragma once

// Minimal SVG line and scatter plots for the experiment reports.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

namespace noisydfa::svg {

struct Series {
    std::string name;
    std::vector<double> x, y;
};

struct Axes {
    std::string title, xlabel, ylabel;
    bool log_x = false;
    double width = 640, height = 400;
};

namespace detail {

inline const char* color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return palette[i % 10];
}

struct Frame {
    double x0, x1, y0, y1;
    Axes ax;
    static constexpr double left = 60, right = 20, top = 30, bottom = 45;

    double px(double x) const {
        if (ax.log_x) x = std::log10(std::max(x, 1e-300));
        return left + (x - x0) / (x1 - x0) * (ax.width - left - right);
    }
    double py(double y) const { return ax.height - bottom - (y - y0) / (y1 - y0) * (ax.height - top - bottom); }
};

inline Frame frame(const std::vector<Series>& series, const Axes& ax) {
    Frame f{1e300, -1e300, 1e300, -1e300, ax};
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double x = ax.log_x ? std::log10(std::max(s.x[i], 1e-300)) : s.x[i];
            f.x0 = std::min(f.x0, x);
            f.x1 = std::max(f.x1, x);
            f.y0 = std::min(f.y0, s.y[i]);
            f.y1 = std::max(f.y1, s.y[i]);
        }
    if (f.x0 > f.x1) f.x0 = 0, f.x1 = 1, f.y0 = 0, f.y1 = 1;
    if (f.x1 - f.x0 < 1e-12) f.x0 -= 0.5, f.x1 += 0.5;
    if (f.y1 - f.y0 < 1e-12) f.y0 -= 0.5, f.y1 += 0.5;
    const double pad = 0.05 * (f.y1 - f.y0);
    f.y0 -= pad;
    f.y1 += pad;
    return f;
}

inline void open(std::ostream& os, const Frame& f) {
    const auto& ax = f.ax;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << ax.width << "\" height=\"" << ax.height
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << ax.width / 2 << "\" y=\"18\" text-anchor=\"middle\">" << ax.title << "</text>\n";
    os << "<line x1=\"" << Frame::left << "\" y1=\"" << ax.height - Frame::bottom << "\" x2=\""
       << ax.width - Frame::right << "\" y2=\"" << ax.height - Frame::bottom << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << Frame::left << "\" y1=\"" << Frame::top << "\" x2=\"" << Frame::left << "\" y2=\""
       << ax.height - Frame::bottom << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << ax.width / 2 << "\" y=\"" << ax.height - 8 << "\" text-anchor=\"middle\">" << ax.xlabel
       << "</text>\n";
    os << "<text x=\"14\" y=\"" << ax.height / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
       << ax.height / 2 << ")\">" << ax.ylabel << "</text>\n";
    for (int k = 0; k <= 4; ++k) {
        const double y = f.y0 + (f.y1 - f.y0) * k / 4.0;
        os << "<text x=\"" << Frame::left - 4 << "\" y=\"" << f.py(y) + 4 << "\" text-anchor=\"end\">"
           << std::round(y * 1000) / 1000 << "</text>\n";
        const double xv = f.x0 + (f.x1 - f.x0) * k / 4.0;
        const double label = ax.log_x ? std::pow(10.0, xv) : xv;
        const double xpos = Frame::left + (ax.width - Frame::left - Frame::right) * k / 4.0;
        os << "<text x=\"" << xpos << "\" y=\"" << ax.height - Frame::bottom + 15 << "\" text-anchor=\"middle\">"
           << (ax.log_x ? std::round(label) : std::round(label * 1000) / 1000) << "</text>\n";
    }
}

inline void legend(std::ostream& os, const std::vector<Series>& series, const Axes& ax) {
    for (std::size_t i = 0; i < series.size(); ++i)
        os << "<text x=\"" << ax.width - Frame::right - 4 << "\" y=\"" << Frame::top + 14 * (i + 1)
           << "\" text-anchor=\"end\" fill=\"" << color(i) << "\">" << series[i].name << "</text>\n";
}

} // namespace detail

inline void line_plot(std::ostream& os, const std::vector<Series>& series, const Axes& ax) {
    const auto f = detail::frame(series, ax);
    detail::open(os, f);
    for (std::size_t i = 0; i < series.size(); ++i) {
        os << "<polyline fill=\"none\" stroke=\"" << detail::color(i) << "\" points=\"";
        for (std::size_t k = 0; k < series[i].x.size(); ++k)
            os << f.px(series[i].x[k]) << ',' << f.py(series[i].y[k]) << ' ';
        os << "\"/>\n";
    }
    detail::legend(os, series, ax);
    os << "</svg>\n";
}

inline void scatter_plot(std::ostream& os, const std::vector<Series>& series, const Axes& ax) {
    const auto f = detail::frame(series, ax);
    detail::open(os, f);
    for (std::size_t i = 0; i < series.size(); ++i)
        for (std::size_t k = 0; k < series[i].x.size(); ++k)
            os << "<circle cx=\"" << f.px(series[i].x[k]) << "\" cy=\"" << f.py(series[i].y[k])
               << "\" r=\"2.5\" fill=\"" << detail::color(i) << "\"/>\n";
    detail::legend(os, series, ax);
    os << "</svg>\n";
}

} // namespace noisydfa::svg
