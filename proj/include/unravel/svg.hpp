#pragma once

#include <string>
#include <vector>

namespace unravel {

struct PlotLabels {
  std::string title;
  std::string x_label;
  std::string y_label;
};

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// One <circle class="point"> per point.
std::string svg_scatter(const PlotLabels& labels, const std::vector<double>& x, const std::vector<double>& y,
                        std::vector<std::size_t> highlight = {});
// One <polyline class="series"> per series plus its point markers.
std::string svg_lines(const PlotLabels& labels, const std::vector<Series>& series);
// One <rect class="cell"> per entry of a row-major [rows x cols] matrix with
// values in [lo, hi].
std::string svg_heatmap(const PlotLabels& labels, int rows, int cols, const std::vector<double>& values,
                        double lo = 0.0, double hi = 1.0);

std::string xml_escape(const std::string& text);

}  // namespace unravel
