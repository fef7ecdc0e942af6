// SPDX-License-Identifier: Apache-2.0
#include "harness/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "common/error.hpp"

namespace mtr::harness {

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 170, kTop = 40, kBottom = 55;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

/// About five round-number ticks covering [lo, hi].
std::vector<double> nice_ticks(double lo, double hi) {
  const double span = hi - lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (span / step <= 6.0) break;
  }
  std::vector<double> out;
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step) out.push_back(std::abs(t) < 1e-12 * step ? 0.0 : t);
  return out;
}

}  // namespace

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string render_line_plot(const LinePlot& plot) {
  auto tx = [&](double x) { return plot.log_x ? std::log10(x) : x; };
  auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!plot.log_x || x > 0.0); };
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const Series& s : plot.series) {
    if (s.x.size() != s.y.size()) throw InvalidArgument("series '" + s.name + "' has mismatched x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 <= 0) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 <= 0) {
    const double pad = std::max(std::abs(y0) * 0.1, 1e-9);
    y0 -= pad, y1 += pad;
  }
  const double ypad = 0.05 * (y1 - y0);
  y0 -= ypad;
  y1 += ypad;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (tx(x) - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::string o;
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(kWidth) + "\" height=\"" + fmt(kHeight) +
       "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + fmt(kLeft + pw / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
       xml_escape(plot.title) + "</text>\n";
  o += "<rect x=\"" + fmt(kLeft) + "\" y=\"" + fmt(kTop) + "\" width=\"" + fmt(pw) + "\" height=\"" + fmt(ph) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : nice_ticks(y0, y1)) {
    const double y = py(t);
    o += "<line x1=\"" + fmt(kLeft - 4) + "\" y1=\"" + fmt(y) + "\" x2=\"" + fmt(kLeft + pw) + "\" y2=\"" + fmt(y) +
         "\" stroke=\"#ddd\"/>\n";
    o += "<text x=\"" + fmt(kLeft - 6) + "\" y=\"" + fmt(y + 4) + "\" text-anchor=\"end\">" + tick_label(t) +
         "</text>\n";
  }
  std::vector<double> xt;
  if (plot.log_x) {
    for (double e = std::floor(x0); e <= std::ceil(x1); e += 1.0) {
      if (e >= x0 - 1e-9 && e <= x1 + 1e-9) xt.push_back(std::pow(10.0, e));
    }
  } else {
    xt = nice_ticks(x0, x1);
  }
  for (double t : xt) {
    const double x = px(t);
    o += "<line x1=\"" + fmt(x) + "\" y1=\"" + fmt(kTop + ph) + "\" x2=\"" + fmt(x) + "\" y2=\"" + fmt(kTop + ph + 4) +
         "\" stroke=\"black\"/>\n";
    o += "<text x=\"" + fmt(x) + "\" y=\"" + fmt(kTop + ph + 18) + "\" text-anchor=\"middle\">" + tick_label(t) +
         "</text>\n";
  }
  o += "<text x=\"" + fmt(kLeft + pw / 2) + "\" y=\"" + fmt(kHeight - 12) + "\" text-anchor=\"middle\">" +
       xml_escape(plot.x_label) + (plot.log_x ? " (log)" : "") + "</text>\n";
  o += "<text transform=\"translate(18," + fmt(kTop + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       xml_escape(plot.y_label) + "</text>\n";

  for (std::size_t k = 0; k < plot.series.size(); ++k) {
    const Series& s = plot.series[k];
    const std::string colour = kPalette[k % std::size(kPalette)];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!usable(s.x[i], s.y[i])) continue;
      points += fmt(px(s.x[i])) + "," + fmt(py(s.y[i])) + " ";
    }
    if (!points.empty()) points.pop_back();
    o += "<polyline fill=\"none\" stroke=\"" + colour + "\" stroke-width=\"2\"" +
         (s.dashed ? " stroke-dasharray=\"6,4\"" : "") + " points=\"" + points + "\"/>\n";
    if (s.markers) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!usable(s.x[i], s.y[i])) continue;
        o += "<circle cx=\"" + fmt(px(s.x[i])) + "\" cy=\"" + fmt(py(s.y[i])) + "\" r=\"3\" fill=\"" + colour +
             "\"/>\n";
      }
    }
    const double ly = kTop + 10 + 18.0 * static_cast<double>(k);
    const double lx = kLeft + pw + 12;
    o += "<line x1=\"" + fmt(lx) + "\" y1=\"" + fmt(ly) + "\" x2=\"" + fmt(lx + 22) + "\" y2=\"" + fmt(ly) +
         "\" stroke=\"" + colour + "\" stroke-width=\"2\"" + (s.dashed ? " stroke-dasharray=\"6,4\"" : "") + "/>\n";
    o += "<text x=\"" + fmt(lx + 28) + "\" y=\"" + fmt(ly + 4) + "\">" + xml_escape(s.name) + "</text>\n";
  }
  o += "</svg>\n";
  return o;
}

std::string render_heatmap(const Heatmap& map) {
  const std::size_t rows = map.row_labels.size(), cols = map.col_labels.size();
  if (map.values.size() != rows * cols) throw InvalidArgument("heatmap value count does not match its labels");
  constexpr double cell = 64, left = 100, top = 70;
  const double w = left + cell * static_cast<double>(cols) + 20;
  const double h = top + cell * static_cast<double>(rows) + 30;
  double scale = 0.0;
  for (double v : map.values) {
    if (std::isfinite(v)) scale = std::max(scale, std::abs(v));
  }
  if (scale == 0.0) scale = 1.0;

  std::string o;
  o += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(w) + "\" height=\"" + fmt(h) +
       "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o += "<text x=\"" + fmt(w / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + xml_escape(map.title) +
       "</text>\n";
  for (std::size_t c = 0; c < cols; ++c) {
    o += "<text x=\"" + fmt(left + cell * (static_cast<double>(c) + 0.5)) + "\" y=\"" + fmt(top - 8) +
         "\" text-anchor=\"middle\">" + xml_escape(map.col_labels[c]) + "</text>\n";
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = top + cell * static_cast<double>(r);
    o += "<text x=\"" + fmt(left - 8) + "\" y=\"" + fmt(y + cell / 2 + 4) + "\" text-anchor=\"end\">" +
         xml_escape(map.row_labels[r]) + "</text>\n";
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = map.values[r * cols + c];
      const double x = left + cell * static_cast<double>(c);
      std::string fill = "#f4f4f4";
      if (std::isfinite(v)) {
        // White at zero, blue for positive, red for negative.
        const double a = std::min(1.0, std::abs(v) / scale);
        const int fade = static_cast<int>(std::lround(255.0 * (1.0 - 0.75 * a)));
        char buf[16];
        if (v >= 0) {
          std::snprintf(buf, sizeof buf, "#%02x%02xff", fade, fade);
        } else {
          std::snprintf(buf, sizeof buf, "#ff%02x%02x", fade, fade);
        }
        fill = buf;
      }
      o += "<rect x=\"" + fmt(x) + "\" y=\"" + fmt(y) + "\" width=\"" + fmt(cell) + "\" height=\"" + fmt(cell) +
           "\" fill=\"" + fill + "\" stroke=\"white\"/>\n";
      if (std::isfinite(v)) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%+.1f%%", 100.0 * v);
        o += "<text x=\"" + fmt(x + cell / 2) + "\" y=\"" + fmt(y + cell / 2 + 4) + "\" text-anchor=\"middle\">" +
             buf + "</text>\n";
      }
    }
  }
  o += "</svg>\n";
  return o;
}

}  // namespace mtr::harness
