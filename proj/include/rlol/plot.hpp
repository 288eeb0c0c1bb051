#pragma once

#include <string>
#include <vector>

namespace rlol {

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct PlotOptions {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_x = false;
    bool log_y = false;
    int width = 640;
    int height = 400;
};

/// Self-contained SVG line chart with axes, ticks and a legend. Non-finite
/// points (and non-positive ones on log axes) are skipped.
std::string line_chart_svg(const std::vector<PlotSeries>& series, const PlotOptions& options);

}  // namespace rlol
