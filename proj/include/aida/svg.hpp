#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "aida/error.hpp"

namespace aida {

struct Series {
  std::string name;
  std::vector<double> values;  // x is the index
};

namespace detail {
inline std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}
}  // namespace detail

// Self-contained SVG line chart. The final value of each series is printed as
// a text label so reports can be checked against the raw CSV.
inline void write_line_chart(const std::string& path, const std::string& title,
                             const std::vector<Series>& series) {
  if (series.empty()) throw ContractError("write_line_chart needs at least one series");
  const int width = 860, height = 420;
  const int ml = 70, mr = 170, mt = 40, mb = 45;
  const double plot_w = width - ml - mr, plot_h = height - mt - mb;

  std::size_t n = 0;
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const Series& s : series) {
    n = std::max(n, s.values.size());
    for (const double v : s.values) {
      if (first) {
        lo = hi = v;
        first = false;
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (n == 0) throw ContractError("write_line_chart: all series empty");
  if (hi - lo < 1e-12) {
    hi += 1.0;
    lo -= 1.0;
  }

  const auto x_at = [&](std::size_t i) {
    return ml + (n <= 1 ? 0.0 : plot_w * static_cast<double>(i) / static_cast<double>(n - 1));
  };
  const auto y_at = [&](double v) { return mt + plot_h * (1.0 - (v - lo) / (hi - lo)); };

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

  std::ofstream out(path);
  if (!out) throw IoError("cannot open svg for writing: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << ml << "\" y=\"24\" font-family=\"monospace\" font-size=\"15\">" << title
      << "</text>\n";
  // Axes.
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << (mt + plot_h)
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << (mt + plot_h) << "\" x2=\"" << (ml + plot_w)
      << "\" y2=\"" << (mt + plot_h) << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = lo + (hi - lo) * tick / 4.0;
    const double y = y_at(v);
    out << "<text x=\"8\" y=\"" << detail::fmt6(y + 4) << "\" font-family=\"monospace\" "
        << "font-size=\"11\">" << detail::fmt6(v) << "</text>\n";
    out << "<line x1=\"" << (ml - 4) << "\" y1=\"" << detail::fmt6(y) << "\" x2=\"" << ml
        << "\" y2=\"" << detail::fmt6(y) << "\" stroke=\"black\"/>\n";
  }
  out << "<text x=\"" << (ml + plot_w / 2) << "\" y=\"" << (height - 10)
      << "\" font-family=\"monospace\" font-size=\"11\">step</text>\n";

  for (std::size_t si = 0; si < series.size(); ++si) {
    const Series& s = series[si];
    if (s.values.empty()) continue;
    const char* color = kColors[si % 8];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      out << detail::fmt6(x_at(i)) << ',' << detail::fmt6(y_at(s.values[i])) << ' ';
    }
    out << "\"/>\n";
    const double ly = mt + 18.0 * static_cast<double>(si);
    out << "<rect x=\"" << (ml + plot_w + 12) << "\" y=\"" << detail::fmt6(ly) << "\" width=\"10\""
        << " height=\"10\" fill=\"" << color << "\"/>\n";
    // Legend entry carries the series' final value for parse-back checks.
    out << "<text x=\"" << (ml + plot_w + 28) << "\" y=\"" << detail::fmt6(ly + 9)
        << "\" font-family=\"monospace\" font-size=\"11\" data-series=\"" << s.name
        << "\" data-final=\"" << detail::fmt6(s.values.back()) << "\">" << s.name << "="
        << detail::fmt6(s.values.back()) << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw IoError("svg write failed: " + path);
}

}  // namespace aida
