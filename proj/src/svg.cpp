#include "ssmko/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ssmko {

namespace {

constexpr int kWidth = 720;
constexpr int kHeight = 480;
constexpr int kMarginLeft = 70;
constexpr int kMarginRight = 30;
constexpr int kMarginTop = 40;
constexpr int kMarginBottom = 55;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::string escape(const std::string & s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Bounds {
    double lo = 0.0, hi = 1.0;

    void expand(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void pad() {
        if (hi == lo) {
            hi = lo + 1.0;
        }
        const double margin = 0.05 * (hi - lo);
        lo -= margin;
        hi += margin;
    }
    double to_unit(double v) const { return (v - lo) / (hi - lo); }
};

double plot_x(const Bounds & b, double v) {
    return kMarginLeft + b.to_unit(v) * (kWidth - kMarginLeft - kMarginRight);
}

double plot_y(const Bounds & b, double v) {
    return kHeight - kMarginBottom - b.to_unit(v) * (kHeight - kMarginTop - kMarginBottom);
}

std::vector<double> nice_ticks(const Bounds & b, int approx = 6) {
    const double span = b.hi - b.lo;
    const double raw = span / approx;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (raw <= m * mag) {
            step = m * mag;
            break;
        }
    }
    std::vector<double> ticks;
    const double start = std::ceil(b.lo / step) * step;
    for (double v = start; v <= b.hi + 1e-12 * span; v += step) {
        // snap tiny offsets so "0" prints as 0
        ticks.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
    }
    return ticks;
}

void open_svg(std::ostringstream & out, const std::string & title) {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    out << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"15\">" << escape(title) << "</text>\n";
}

void draw_axes(std::ostringstream & out, const Bounds & bx, const Bounds & by,
               const std::string & x_label, const std::string & y_label) {
    const double x0 = kMarginLeft, x1 = kWidth - kMarginRight;
    const double y0 = kHeight - kMarginBottom, y1 = kMarginTop;
    out << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
        << "\" stroke=\"black\"/>\n";
    for (double t : nice_ticks(bx)) {
        const double px = plot_x(bx, t);
        out << "<line x1=\"" << fmt(px) << "\" y1=\"" << y0 << "\" x2=\"" << fmt(px) << "\" y2=\""
            << y0 + 5 << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << fmt(px) << "\" y=\"" << y0 + 20
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << fmt_tick(t) << "</text>\n";
    }
    for (double t : nice_ticks(by)) {
        const double py = plot_y(by, t);
        out << "<line x1=\"" << x0 - 5 << "\" y1=\"" << fmt(py) << "\" x2=\"" << x0 << "\" y2=\""
            << fmt(py) << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << x0 - 9 << "\" y=\"" << fmt(py + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
            << fmt_tick(t) << "</text>\n";
    }
    out << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 14
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
        << escape(x_label) << "</text>\n";
    out << "<text x=\"18\" y=\"" << (y0 + y1) / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
        << "transform=\"rotate(-90 18 " << (y0 + y1) / 2 << ")\">" << escape(y_label)
        << "</text>\n";
}

}  // namespace

std::string svg_line_chart(const std::string & title, const std::string & x_label,
                           const std::string & y_label, const std::vector<SvgSeries> & series) {
    Bounds bx, by;
    bool any = false;
    for (const SvgSeries & s : series) {
        for (const auto & [x, y] : s.points) {
            if (!any) {
                bx.lo = bx.hi = x;
                by.lo = by.hi = y;
                any = true;
            }
            bx.expand(x);
            by.expand(y);
        }
    }
    by.expand(0.0);  // keep the zero line in frame
    bx.pad();
    by.pad();

    std::ostringstream out;
    open_svg(out, title);
    draw_axes(out, bx, by, x_label, y_label);
    // zero reference
    out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << fmt(plot_y(by, 0.0)) << "\" x2=\""
        << kWidth - kMarginRight << "\" y2=\"" << fmt(plot_y(by, 0.0))
        << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 3\"/>\n";
    int legend_y = kMarginTop + 8;
    for (const SvgSeries & s : series) {
        out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.8\" points=\"";
        for (const auto & [x, y] : s.points) {
            out << fmt(plot_x(bx, x)) << "," << fmt(plot_y(by, y)) << " ";
        }
        out << "\"/>\n";
        for (const auto & [x, y] : s.points) {
            out << "<circle cx=\"" << fmt(plot_x(bx, x)) << "\" cy=\"" << fmt(plot_y(by, y))
                << "\" r=\"2.5\" fill=\"" << s.color << "\"/>\n";
        }
        out << "<rect x=\"" << kWidth - kMarginRight - 150 << "\" y=\"" << legend_y - 9
            << "\" width=\"12\" height=\"12\" fill=\"" << s.color << "\"/>\n";
        out << "<text x=\"" << kWidth - kMarginRight - 133 << "\" y=\"" << legend_y + 1
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(s.label)
            << "</text>\n";
        legend_y += 17;
    }
    out << "</svg>\n";
    return out.str();
}

std::string svg_scatter(const std::string & title, const std::string & x_label,
                        const std::string & y_label,
                        const std::vector<std::pair<double, double>> & points,
                        bool diagonal_reference) {
    Bounds bx{0.0, 1.0}, by{0.0, 1.0};
    for (const auto & [x, y] : points) {
        bx.expand(x);
        by.expand(y);
    }
    bx.pad();
    by.pad();

    std::ostringstream out;
    open_svg(out, title);
    draw_axes(out, bx, by, x_label, y_label);
    if (diagonal_reference) {
        const double lo = std::max(bx.lo, by.lo);
        const double hi = std::min(bx.hi, by.hi);
        out << "<line x1=\"" << fmt(plot_x(bx, lo)) << "\" y1=\"" << fmt(plot_y(by, lo))
            << "\" x2=\"" << fmt(plot_x(bx, hi)) << "\" y2=\"" << fmt(plot_y(by, hi))
            << "\" stroke=\"#999999\" stroke-dasharray=\"5 4\"/>\n";
    }
    for (const auto & [x, y] : points) {
        out << "<circle cx=\"" << fmt(plot_x(bx, x)) << "\" cy=\"" << fmt(plot_y(by, y))
            << "\" r=\"3\" fill=\"#1f77b4\" fill-opacity=\"0.75\"/>\n";
    }
    out << "</svg>\n";
    return out.str();
}

std::string svg_heatmap(const std::string & title, const Eigen::Ref<const Matrix> & values,
                        const std::vector<std::string> & row_labels,
                        const std::vector<std::string> & col_labels) {
    const Index rows = values.rows();
    const Index cols = values.cols();
    if (rows == 0 || cols == 0) {
        throw InvalidInput("svg_heatmap: empty matrix");
    }
    const double vmax = std::max(values.cwiseAbs().maxCoeff(), 1e-12);

    const int label_w = 150;
    const int cell = std::max<int>(14, std::min<int>(42, 540 / static_cast<int>(cols)));
    const int width = label_w + cell * static_cast<int>(cols) + 40;
    const int height = 60 + cell * static_cast<int>(rows) + 50;

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"14\">" << escape(title) << "</text>\n";

    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            // diverging scale: blue for negative, red for positive
            const double t = std::clamp(values(r, c) / vmax, -1.0, 1.0);
            int red = 255, green = 255, blue = 255;
            if (t < 0.0) {
                red = static_cast<int>(255 * (1.0 + t));
                green = static_cast<int>(255 * (1.0 + 0.6 * t));
            } else {
                blue = static_cast<int>(255 * (1.0 - t));
                green = static_cast<int>(255 * (1.0 - 0.6 * t));
            }
            out << "<rect x=\"" << label_w + c * cell << "\" y=\"" << 50 + r * cell
                << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"rgb(" << red
                << "," << green << "," << blue << ")\" stroke=\"#dddddd\"/>\n";
        }
        const std::string label = r < static_cast<Index>(row_labels.size())
                                      ? row_labels[r]
                                      : std::to_string(r);
        out << "<text x=\"" << label_w - 6 << "\" y=\"" << 50 + r * cell + cell / 2 + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
            << escape(label) << "</text>\n";
    }
    for (Index c = 0; c < cols; ++c) {
        const std::string label = c < static_cast<Index>(col_labels.size())
                                      ? col_labels[c]
                                      : std::to_string(c);
        out << "<text x=\"" << label_w + c * cell + cell / 2 << "\" y=\""
            << 50 + rows * cell + 16
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << escape(label) << "</text>\n";
    }
    out << "<text x=\"" << label_w + (cols * cell) / 2 << "\" y=\"" << 50 + rows * cell + 38
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
        << "first layer of knockout window</text>\n";
    out << "</svg>\n";
    return out.str();
}

void write_text_file(const std::string & path, const std::string & content) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) {
        throw IoError("svg: cannot open " + path);
    }
    out << content;
}

}  // namespace ssmko
