#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "psrpn/errors.hpp"

namespace psrpn {

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> pts;
};

struct ChartSpec {
  std::string title, x_label, y_label;
  bool log_x = false;               // plot against log10(x)
  std::vector<double> x_ticks;      // data-space ticks; empty picks round ones
  double y_min_hint = 0.0, y_max_hint = -1.0;  // hint ignored unless max > min
  int width = 720, height = 440;
};

namespace detail_svg {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline double nice_step(double span, int target) {
  const double raw = span / std::max(1, target);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (raw <= m * mag + 1e-12) return m * mag;
  return 10.0 * mag;
}

inline const char* palette(std::size_t i) {
  static const char* kColors[] = {"#4477aa", "#cc3311", "#228833",
                                  "#ee7733", "#aa3377", "#66ccee"};
  return kColors[i % 6];
}

}  // namespace detail_svg

// Static polyline chart. Everything is computed from the data; no external
// assets, so the output opens anywhere.
inline std::string render_chart(const ChartSpec& spec, const std::vector<Series>& series) {
  using detail_svg::fmt;
  if (series.empty()) throw ConfigError("render_chart: no series");

  auto tx = [&spec](double x) {
    if (!spec.log_x) return x;
    if (x <= 0) throw ConfigError("render_chart: log axis needs positive x");
    return std::log10(x);
  };

  double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
  for (const Series& s : series)
    for (const auto& [x, y] : s.pts) {
      x_lo = std::min(x_lo, tx(x));
      x_hi = std::max(x_hi, tx(x));
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
    }
  if (x_lo > x_hi) throw ConfigError("render_chart: no points");
  if (spec.y_max_hint > spec.y_min_hint) {
    y_lo = spec.y_min_hint;
    y_hi = spec.y_max_hint;
  }
  if (x_hi - x_lo < 1e-12) x_hi = x_lo + 1.0;
  if (y_hi - y_lo < 1e-12) y_hi = y_lo + 1.0;

  const double ml = 62, mr = 16, mt = 34, mb = 46;
  const double pw = spec.width - ml - mr, ph = spec.height - mt - mb;
  auto px = [&](double x) { return ml + (tx(x) - x_lo) / (x_hi - x_lo) * pw; };
  auto py = [&](double y) { return mt + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph; };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(spec.width) +
         "\" height=\"" + std::to_string(spec.height) + "\" viewBox=\"0 0 " +
         std::to_string(spec.width) + " " + std::to_string(spec.height) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "<text x=\"" + fmt(ml + pw / 2) + "\" y=\"20\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"15\">" + spec.title + "</text>\n";

  // y grid and ticks
  const double ys = detail_svg::nice_step(y_hi - y_lo, 5);
  for (double v = std::ceil(y_lo / ys) * ys; v <= y_hi + 1e-9; v += ys) {
    out += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(py(v)) + "\" x2=\"" + fmt(ml + pw) +
           "\" y2=\"" + fmt(py(v)) + "\" stroke=\"#dddddd\"/>\n";
    out += "<text x=\"" + fmt(ml - 6) + "\" y=\"" + fmt(py(v) + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + fmt(v) +
           "</text>\n";
  }

  // x ticks: explicit list, or round steps in (possibly log) space
  std::vector<double> xt = spec.x_ticks;
  if (xt.empty()) {
    const double xs = detail_svg::nice_step(x_hi - x_lo, 6);
    for (double v = std::ceil(x_lo / xs) * xs; v <= x_hi + 1e-9; v += xs)
      xt.push_back(spec.log_x ? std::pow(10.0, v) : v);
  }
  for (double v : xt) {
    const double gx = px(v);
    if (gx < ml - 1e-6 || gx > ml + pw + 1e-6) continue;
    out += "<line x1=\"" + fmt(gx) + "\" y1=\"" + fmt(mt) + "\" x2=\"" + fmt(gx) + "\" y2=\"" +
           fmt(mt + ph) + "\" stroke=\"#eeeeee\"/>\n";
    out += "<text x=\"" + fmt(gx) + "\" y=\"" + fmt(mt + ph + 16) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + fmt(v) +
           "</text>\n";
  }

  // frame and axis labels
  out += "<rect x=\"" + fmt(ml) + "\" y=\"" + fmt(mt) + "\" width=\"" + fmt(pw) +
         "\" height=\"" + fmt(ph) + "\" fill=\"none\" stroke=\"#333333\"/>\n";
  out += "<text x=\"" + fmt(ml + pw / 2) + "\" y=\"" + fmt(spec.height - 8.0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
         spec.x_label + "</text>\n";
  out += "<text x=\"16\" y=\"" + fmt(mt + ph / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
         "transform=\"rotate(-90 16 " + fmt(mt + ph / 2) + ")\">" + spec.y_label + "</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const char* color = detail_svg::palette(si);
    std::string pts;
    for (const auto& [x, y] : series[si].pts)
      pts += fmt(px(x)) + "," + fmt(py(std::clamp(y, y_lo, y_hi))) + " ";
    out += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color +
           "\" stroke-width=\"1.8\"/>\n";
    for (const auto& [x, y] : series[si].pts)
      out += "<circle cx=\"" + fmt(px(x)) + "\" cy=\"" + fmt(py(std::clamp(y, y_lo, y_hi))) +
             "\" r=\"2.4\" fill=\"" + color + "\"/>\n";
    out += "<rect x=\"" + fmt(ml + pw - 150) + "\" y=\"" + fmt(mt + 8 + 16.0 * si) +
           "\" width=\"14\" height=\"4\" fill=\"" + color + "\"/>\n";
    out += "<text x=\"" + fmt(ml + pw - 132) + "\" y=\"" + fmt(mt + 14 + 16.0 * si) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + series[si].label + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace psrpn
