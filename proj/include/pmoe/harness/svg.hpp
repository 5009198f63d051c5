#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pmoe/core/error.hpp"
#include "pmoe/harness/metrics.hpp"

namespace pmoe {

struct NamedCurve {
  std::string label;
  Curve curve;
};

namespace detail {

inline std::string fixed(double v, int digits = 1) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

// Learning curves (smoothed with a trailing moving average) as a standalone SVG.
inline std::string render_curves_svg(const std::vector<NamedCurve>& curves, std::size_t smoothing_window = 10,
                                     const std::string& y_label = "eval return") {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  const double width = 720, height = 440, left = 70, right = 170, top = 20, bottom = 50;
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  std::vector<std::vector<double>> smoothed;
  for (const NamedCurve& c : curves) {
    std::vector<double> ys;
    for (const CurvePoint& p : c.curve) ys.push_back(p.value);
    smoothed.push_back(moving_average(ys, smoothing_window));
    for (std::size_t i = 0; i < c.curve.size(); ++i) {
      x0 = std::min(x0, c.curve[i].step);
      x1 = std::max(x1, c.curve[i].step);
      y0 = std::min(y0, smoothed.back()[i]);
      y1 = std::max(y1, smoothed.back()[i]);
    }
  }
  if (!std::isfinite(x0)) {
    x0 = 0;
    x1 = 1;
    y0 = 0;
    y1 = 1;
  }
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) {
    y0 -= 1;
    y1 += 1;
  }
  const double pw = width - left - right, ph = height - top - bottom;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto sy = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = x0 + (x1 - x0) * t / 4.0, fy = y0 + (y1 - y0) * t / 4.0;
    os << "<text x=\"" << detail::fixed(sx(fx)) << "\" y=\"" << height - bottom + 18
       << "\" text-anchor=\"middle\">" << detail::fixed(fx, 0) << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << detail::fixed(sy(fy) + 4) << "\" text-anchor=\"end\">"
       << detail::fixed(fy, 1) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">env steps</text>\n";
  os << "<text x=\"15\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 15 " << top + ph / 2
     << ")\" text-anchor=\"middle\">" << detail::escape_xml(y_label) << "</text>\n";
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const char* color = kColors[c % 8];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < curves[c].curve.size(); ++i) {
      os << (i ? " " : "") << detail::fixed(sx(curves[c].curve[i].step), 2) << ',' << detail::fixed(sy(smoothed[c][i]), 2);
    }
    os << "\"/>\n";
    const double ly = top + 16 + 18.0 * static_cast<double>(c);
    os << "<line x1=\"" << width - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << width - right + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << width - right + 36 << "\" y=\"" << ly + 4 << "\">" << detail::escape_xml(curves[c].label)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_curves_svg(const std::vector<NamedCurve>& curves, const std::string& path, std::size_t window = 10) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path);
  out << render_curves_svg(curves, window);
}

}  // namespace pmoe
