#include "mimesim/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace mimesim {
namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

// A fixed palette keeps repeated renders byte-identical.
const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                         "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape_xml(const std::string& s) {
    std::string out;
    out.reserve(s.size());
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

}  // namespace

std::string render_line_plot(const std::string& title, const std::string& y_label,
                             const std::vector<PlotSeries>& series) {
    const double width = 860, height = 560;
    const double left = 70, right = 210, top = 40, bottom = 50;
    const double plot_w = width - left - right, plot_h = height - top - bottom;

    double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
    double y_min = x_min, y_max = -x_min;
    for (const PlotSeries& s : series) {
        for (auto [x, y] : s.points) {
            x_min = std::min(x_min, x);
            x_max = std::max(x_max, x);
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    }
    if (!(x_min < x_max)) x_max = x_min + 1;
    if (!(y_min < y_max)) {
        y_min -= 1;
        y_max += 1;
    }
    auto px = [&](double x) { return left + (x - x_min) / (x_max - x_min) * plot_w; };
    auto py = [&](double y) { return top + plot_h - (y - y_min) / (y_max - y_min) * plot_h; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">"
        << escape_xml(title) << "</text>\n";
    svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << plot_w << "\" height=\""
        << plot_h << "\" fill=\"none\" stroke=\"#444\"/>\n";

    // Four horizontal and vertical grid lines with tick labels.
    for (int i = 0; i <= 4; ++i) {
        double fx = x_min + (x_max - x_min) * i / 4.0;
        double fy = y_min + (y_max - y_min) * i / 4.0;
        svg << "<line x1=\"" << num(px(fx)) << "\" y1=\"" << top << "\" x2=\"" << num(px(fx))
            << "\" y2=\"" << top + plot_h << "\" stroke=\"#ddd\"/>\n";
        svg << "<line x1=\"" << left << "\" y1=\"" << num(py(fy)) << "\" x2=\"" << left + plot_w
            << "\" y2=\"" << num(py(fy)) << "\" stroke=\"#ddd\"/>\n";
        svg << "<text x=\"" << num(px(fx)) << "\" y=\"" << height - bottom + 18
            << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << num(fx)
            << "</text>\n";
        svg << "<text x=\"" << left - 6 << "\" y=\"" << num(py(fy) + 4)
            << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << num(fy)
            << "</text>\n";
    }
    svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10
        << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">round</text>\n";
    svg << "<text x=\"18\" y=\"" << top + plot_h / 2
        << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
        << top + plot_h / 2 << ")\">" << escape_xml(y_label) << "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* color = kColors[s % (sizeof kColors / sizeof kColors[0])];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (auto [x, y] : series[s].points) svg << num(px(x)) << ',' << num(py(y)) << ' ';
        svg << "\"/>\n";
        double ly = top + 16 + 18.0 * static_cast<double>(s);
        svg << "<line x1=\"" << width - right + 10 << "\" y1=\"" << num(ly - 4) << "\" x2=\""
            << width - right + 34 << "\" y2=\"" << num(ly - 4) << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
        svg << "<text x=\"" << width - right + 40 << "\" y=\"" << num(ly)
            << "\" font-family=\"sans-serif\" font-size=\"12\">" << escape_xml(series[s].label)
            << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace mimesim
