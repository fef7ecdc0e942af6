// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace mtr::harness {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool dashed = false;
  bool markers = true;
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = false;
  std::vector<Series> series;
};

/// Axes, ticks, one polyline per series and a legend. Non-finite points are
/// dropped; log axes drop nonpositive x.
std::string render_line_plot(const LinePlot& plot);

struct Heatmap {
  std::string title;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  /// Row-major; NaN cells are drawn empty.
  std::vector<double> values;
};

/// Diverging colour scale centred at zero, cell values printed in place.
std::string render_heatmap(const Heatmap& map);

/// Escapes &, <, >, and quotes for SVG text.
std::string xml_escape(const std::string& s);

}  // namespace mtr::harness
