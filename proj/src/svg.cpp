#include "chunkrl/svg.hpp"

#include <algorithm>
#include <cmath>

namespace chunkrl::svg {

namespace {

constexpr int kWidth = 800;
constexpr int kHeight = 500;
constexpr int kMarginL = 70, kMarginR = 150, kMarginT = 50, kMarginB = 60;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                          "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string num(double v) { return format_double(v); }

struct Range {
    double lo = 0.0, hi = 1.0;
};

Range padded_range(double lo, double hi) {
    if (!std::isfinite(lo) || !std::isfinite(hi)) return {0.0, 1.0};
    if (lo == hi) {
        const double pad = (lo == 0.0) ? 1.0 : std::abs(lo) * 0.1;
        return {lo - pad, hi + pad};
    }
    const double pad = (hi - lo) * 0.1;
    return {lo - pad, hi + pad};
}

}  // namespace

std::string line_chart(const std::vector<Series>& series, const std::string& title,
                       const std::string& x_label, const std::string& y_label) {
    require(!series.empty(), "line_chart: empty table");
    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    for (const auto& s : series) {
        require(!s.x.empty() && s.x.size() == s.y.size(), "line_chart: bad series");
        for (double v : s.x) {
            xlo = std::min(xlo, v);
            xhi = std::max(xhi, v);
        }
        for (double v : s.y) {
            ylo = std::min(ylo, v);
            yhi = std::max(yhi, v);
        }
    }
    const Range xr = padded_range(xlo, xhi);
    const Range yr = padded_range(ylo, yhi);
    const double px = (kWidth - kMarginL - kMarginR) / (xr.hi - xr.lo);
    const double py = (kHeight - kMarginT - kMarginB) / (yr.hi - yr.lo);
    auto sx = [&](double x) { return kMarginL + (x - xr.lo) * px; };
    auto sy = [&](double y) { return kHeight - kMarginB - (y - yr.lo) * py; };

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " +
           std::to_string(kWidth) + " " + std::to_string(kHeight) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + std::to_string(kWidth / 2) +
           "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" font-family=\"sans-serif\">" +
           title + "</text>\n";

    // Axes with five ticks each.
    out += "<line x1=\"" + num(kMarginL) + "\" y1=\"" + num(kHeight - kMarginB) + "\" x2=\"" +
           num(kWidth - kMarginR) + "\" y2=\"" + num(kHeight - kMarginB) +
           "\" stroke=\"black\"/>\n";
    out += "<line x1=\"" + num(kMarginL) + "\" y1=\"" + num(kMarginT) + "\" x2=\"" +
           num(kMarginL) + "\" y2=\"" + num(kHeight - kMarginB) + "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xr.lo + (xr.hi - xr.lo) * i / 4.0;
        const double fy = yr.lo + (yr.hi - yr.lo) * i / 4.0;
        out += "<text x=\"" + num(sx(fx)) + "\" y=\"" + num(kHeight - kMarginB + 18) +
               "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" +
               num(fx) + "</text>\n";
        out += "<text x=\"" + num(kMarginL - 8) + "\" y=\"" + num(sy(fy) + 4) +
               "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" + num(fy) +
               "</text>\n";
    }
    out += "<text x=\"" + std::to_string((kMarginL + kWidth - kMarginR) / 2) + "\" y=\"" +
           std::to_string(kHeight - 16) +
           "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">" + x_label +
           "</text>\n";
    out += "<text x=\"18\" y=\"" + std::to_string((kMarginT + kHeight - kMarginB) / 2) +
           "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
           "transform=\"rotate(-90 18 " +
           std::to_string((kMarginT + kHeight - kMarginB) / 2) + ")\">" + y_label + "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kPalette[si % 8];
        if (s.x.size() == 1) {
            out += "<circle cx=\"" + num(sx(s.x[0])) + "\" cy=\"" + num(sy(s.y[0])) +
                   "\" r=\"4\" fill=\"" + color + "\"/>\n";
        } else {
            std::string pts;
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                if (i) pts += ' ';
                pts += num(sx(s.x[i])) + "," + num(sy(s.y[i]));
            }
            out += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
                   "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
        }
        const double ly = kMarginT + 16.0 * static_cast<double>(si);
        out += "<rect x=\"" + num(kWidth - kMarginR + 10) + "\" y=\"" + num(ly) +
               "\" width=\"12\" height=\"4\" fill=\"" + color + "\"/>\n";
        out += "<text x=\"" + num(kWidth - kMarginR + 28) + "\" y=\"" + num(ly + 6) +
               "\" font-size=\"12\" font-family=\"sans-serif\">" + s.label + "</text>\n";
    }
    out += "</svg>\n";
    return out;
}

std::string heatmap(const std::vector<double>& values, int rows, int cols,
                    const std::string& title) {
    require(rows >= 1 && cols >= 1, "heatmap: empty grid");
    require(static_cast<int>(values.size()) == rows * cols, "heatmap: size mismatch");
    double lo = 1e300, hi = -1e300;
    for (double v : values) {
        if (!std::isfinite(v)) continue;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    require(hi >= lo, "heatmap: no finite cells");
    if (hi == lo) hi = lo + 1.0;

    const double cw = (kWidth - kMarginL - kMarginR) / static_cast<double>(cols);
    const double ch = (kHeight - kMarginT - kMarginB) / static_cast<double>(rows);

    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " +
           std::to_string(kWidth) + " " + std::to_string(kHeight) + "\">\n";
    out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out += "<text x=\"" + std::to_string(kWidth / 2) +
           "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" font-family=\"sans-serif\">" +
           title + "</text>\n";
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double v = values[static_cast<std::size_t>(r) * cols + c];
            const double x = kMarginL + c * cw;
            const double y = kMarginT + r * ch;
            if (!std::isfinite(v)) continue;
            const double t = (v - lo) / (hi - lo);
            const int red = static_cast<int>(std::lround(255 * t));
            const int blue = static_cast<int>(std::lround(255 * (1.0 - t)));
            out += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(cw) +
                   "\" height=\"" + num(ch) + "\" fill=\"rgb(" + std::to_string(red) + ",64," +
                   std::to_string(blue) + ")\" stroke=\"white\"/>\n";
            out += "<text x=\"" + num(x + cw / 2) + "\" y=\"" + num(y + ch / 2 + 4) +
                   "\" text-anchor=\"middle\" font-size=\"11\" fill=\"white\" "
                   "font-family=\"sans-serif\">" +
                   num(v) + "</text>\n";
        }
    }
    out += "</svg>\n";
    return out;
}

}  // namespace chunkrl::svg
