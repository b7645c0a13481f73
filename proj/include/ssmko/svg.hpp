#pragma once

// Hand-emitted SVG figures: line charts, scatter plots, heatmaps. No
// plotting stack; output bytes are deterministic for identical inputs.

#include <string>
#include <utility>
#include <vector>

#include "ssmko/numerics.hpp"

namespace ssmko {

struct SvgSeries {
    std::string label;
    std::string color;
    std::vector<std::pair<double, double>> points;
};

std::string svg_line_chart(const std::string & title, const std::string & x_label,
                           const std::string & y_label, const std::vector<SvgSeries> & series);

// Scatter with an optional y = x reference line.
std::string svg_scatter(const std::string & title, const std::string & x_label,
                        const std::string & y_label,
                        const std::vector<std::pair<double, double>> & points,
                        bool diagonal_reference);

// Diverging heatmap (blue negative, white zero, red positive), row labels on
// the left, column labels underneath.
std::string svg_heatmap(const std::string & title, const Eigen::Ref<const Matrix> & values,
                        const std::vector<std::string> & row_labels,
                        const std::vector<std::string> & col_labels);

void write_text_file(const std::string & path, const std::string & content);

}  // namespace ssmko
