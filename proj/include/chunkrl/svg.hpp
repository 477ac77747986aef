#pragma once

// Self-rendered deterministic SVG output: line charts for ablation curves
// and heatmaps for k*-usage maps. Fixed viewbox, stable element ordering,
// fixed float formatting; identical inputs produce identical bytes.

#include "chunkrl/common.hpp"

#include <string>
#include <vector>

namespace chunkrl::svg {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

std::string line_chart(const std::vector<Series>& series, const std::string& title,
                       const std::string& x_label, const std::string& y_label);

// values laid out row-major, rows x cols; nan cells render empty.
std::string heatmap(const std::vector<double>& values, int rows, int cols,
                    const std::string& title);

}  // namespace chunkrl::svg
