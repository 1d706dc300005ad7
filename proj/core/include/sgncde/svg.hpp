#pragma once

#include <limits>
#include <string>
#include <vector>

namespace sgncde::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;  // non-finite values break the line
  std::string color = "#1f77b4";
  bool markers = false;   // dots instead of a polyline
};

struct Panel {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  /// Optional vertical marker (e.g. the end of the observed data); ignored when NaN.
  double marker_x = std::numeric_limits<double>::quiet_NaN();
};

/// Stacks the panels vertically into one standalone SVG document.
std::string render(const std::vector<Panel>& panels, int width = 800, int panel_height = 260);

}  // namespace sgncde::svg
