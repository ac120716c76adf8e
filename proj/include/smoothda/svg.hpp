/*
 * Copyright 2026 The smoothda Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Minimal self-contained SVG line charts.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace smoothda::svg {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct Chart {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  std::vector<Series> series;
};

namespace detail {

inline constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                       "#9467bd", "#8c564b", "#e377c2", "#17becf"};

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace detail

/// Renders `chart` into a w x h box whose top-left corner is (ox, oy).
inline void render_chart(std::ostringstream& os, const Chart& chart, double ox, double oy, double w, double h) {
  const double ml = 60, mr = 110, mt = 28, mb = 40;
  const double pw = w - ml - mr, ph = h - mt - mb;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : chart.series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]), x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]), y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad, y1 += pad;
  auto px = [&](double x) { return ox + ml + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return oy + mt + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<text x=\"" << ox + ml + pw / 2 << "\" y=\"" << oy + 16 << "\" text-anchor=\"middle\" font-size=\"13\">"
     << detail::escape(chart.title) << "</text>\n";
  os << "<rect x=\"" << ox + ml << "\" y=\"" << oy + mt << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4, yv = y0 + (y1 - y0) * t / 4;
    os << "<text x=\"" << px(xv) << "\" y=\"" << oy + mt + ph + 14 << "\" text-anchor=\"middle\">" << detail::num(xv)
       << "</text>\n";
    os << "<text x=\"" << ox + ml - 4 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << detail::num(yv)
       << "</text>\n";
    os << "<line x1=\"" << ox + ml << "\" x2=\"" << ox + ml + pw << "\" y1=\"" << py(yv) << "\" y2=\"" << py(yv)
       << "\" stroke=\"#ddd\"/>\n";
  }
  os << "<text x=\"" << ox + ml + pw / 2 << "\" y=\"" << oy + h - 6 << "\" text-anchor=\"middle\">"
     << detail::escape(chart.xlabel) << "</text>\n";
  os << "<text transform=\"translate(" << ox + 14 << "," << oy + mt + ph / 2
     << ") rotate(-90)\" text-anchor=\"middle\">" << detail::escape(chart.ylabel) << "</text>\n";
  for (std::size_t k = 0; k < chart.series.size(); ++k) {
    const auto& s = chart.series[k];
    const char* col = detail::kPalette[k % detail::kPalette.size()];
    os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.3\" points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    os << "\"/>\n";
    const double ly = oy + mt + 12 + 14.0 * static_cast<double>(k);
    os << "<line x1=\"" << ox + ml + pw + 8 << "\" x2=\"" << ox + ml + pw + 24 << "\" y1=\"" << ly << "\" y2=\"" << ly
       << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << ox + ml + pw + 28 << "\" y=\"" << ly + 4 << "\">" << detail::escape(s.name) << "</text>\n";
  }
  os << "</g>\n";
}

/// Charts laid out row-major in a grid with `cols` columns.
inline std::string render(const std::vector<Chart>& charts, std::size_t cols = 1, double cell_w = 480,
                          double cell_h = 300) {
  cols = std::max<std::size_t>(1, cols);
  const std::size_t rows = (charts.size() + cols - 1) / cols;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cell_w * cols << "\" height=\""
     << cell_h * std::max<std::size_t>(rows, 1) << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < charts.size(); ++i)
    render_chart(os, charts[i], cell_w * (i % cols), cell_h * (i / cols), cell_w, cell_h);
  os << "</svg>\n";
  return os.str();
}

}  // namespace smoothda::svg
