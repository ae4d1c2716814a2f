// Copyright 2026 The boed-bandits Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Static SVG summaries: overlaid histograms and annotated heatmaps. The
// output depends only on the inputs, so reruns are byte-identical.

#ifndef BOED_SVG_HPP
#define BOED_SVG_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace boed::svg {

inline std::string escape(const std::string& s) {
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

inline std::string num(double v, int precision = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

struct Series {
  std::string label;
  std::vector<double> values;
};

inline constexpr std::array<const char*, 4> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

/// Density-normalised histograms on shared bins over [lo, hi].
inline std::string histograms(const std::string& title, const std::string& x_label, const std::vector<Series>& series,
                              double lo, double hi, std::size_t bins = 30) {
  if (!(hi > lo) || bins < 1) throw std::invalid_argument("histogram needs hi > lo and at least one bin");
  const double w = 640, h = 400, ml = 60, mr = 20, mt = 40, mb = 50;
  const double pw = w - ml - mr, ph = h - mt - mb, bw = (hi - lo) / static_cast<double>(bins);
  std::vector<std::vector<double>> dens;
  double top = 0.0;
  for (const auto& s : series) {
    std::vector<double> c(bins, 0.0);
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      const auto b = static_cast<std::size_t>(std::clamp((v - lo) / bw, 0.0, static_cast<double>(bins) - 0.5));
      c[b] += 1.0;
    }
    const double n = s.values.empty() ? 1.0 : static_cast<double>(s.values.size());
    for (auto& x : c) top = std::max(top, x /= n * bw);
    dens.push_back(std::move(c));
  }
  if (top == 0.0) top = 1.0;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n"
     << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double x = ml + pw * t / 4.0, v = lo + (hi - lo) * t / 4.0;
    os << "<text x=\"" << num(x, 1) << "\" y=\"" << mt + ph + 16 << "\" text-anchor=\"middle\">" << num(v, 2) << "</text>\n";
    const double y = mt + ph - ph * t / 4.0;
    os << "<text x=\"" << ml - 6 << "\" y=\"" << num(y + 4, 1) << "\" text-anchor=\"end\">" << num(top * t / 4.0, 2) << "</text>\n";
  }
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
  for (std::size_t s = 0; s < dens.size(); ++s) {
    const char* colour = kPalette[s % kPalette.size()];
    for (std::size_t b = 0; b < bins; ++b) {
      const double bh = ph * dens[s][b] / top;
      if (bh <= 0.0) continue;
      os << "<rect x=\"" << num(ml + pw * static_cast<double>(b) / static_cast<double>(bins), 2) << "\" y=\""
         << num(mt + ph - bh, 2) << "\" width=\"" << num(pw / static_cast<double>(bins), 2) << "\" height=\"" << num(bh, 2)
         << "\" fill=\"" << colour << "\" fill-opacity=\"0.45\"/>\n";
    }
    os << "<rect x=\"" << ml + pw - 150 << "\" y=\"" << mt + 8 + 18.0 * static_cast<double>(s) << "\" width=\"12\" height=\"12\" fill=\""
       << colour << "\" fill-opacity=\"0.6\"/>\n"
       << "<text x=\"" << ml + pw - 132 << "\" y=\"" << mt + 18 + 18.0 * static_cast<double>(s) << "\">" << escape(series[s].label)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

/// Row-major values in [0, 1], shaded white to blue and annotated.
inline std::string heatmap(const std::string& title, const std::vector<std::string>& rows, const std::vector<std::string>& cols,
                           const std::vector<std::vector<double>>& values, const std::string& row_label,
                           const std::string& col_label) {
  if (values.size() != rows.size()) throw std::invalid_argument("heatmap row count mismatch");
  for (const auto& r : values)
    if (r.size() != cols.size()) throw std::invalid_argument("heatmap column count mismatch");
  const double cell = 80, ml = 110, mt = 70;
  const double w = ml + cell * static_cast<double>(cols.size()) + 20, h = mt + cell * static_cast<double>(rows.size()) + 40;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title) << "</text>\n"
     << "<text x=\"" << ml + cell * static_cast<double>(cols.size()) / 2 << "\" y=\"44\" text-anchor=\"middle\">" << escape(col_label)
     << "</text>\n"
     << "<text x=\"14\" y=\"" << mt + cell * static_cast<double>(rows.size()) / 2 << "\" transform=\"rotate(-90 14 "
     << mt + cell * static_cast<double>(rows.size()) / 2 << ")\" text-anchor=\"middle\">" << escape(row_label) << "</text>\n";
  for (std::size_t j = 0; j < cols.size(); ++j)
    os << "<text x=\"" << ml + cell * (static_cast<double>(j) + 0.5) << "\" y=\"" << mt - 6 << "\" text-anchor=\"middle\">"
       << escape(cols[j]) << "</text>\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double y = mt + cell * static_cast<double>(i);
    os << "<text x=\"" << ml - 8 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"end\">" << escape(rows[i]) << "</text>\n";
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const double v = std::clamp(values[i][j], 0.0, 1.0);
      const int r = static_cast<int>(std::lround(255 - 224 * v)), g = static_cast<int>(std::lround(255 - 136 * v)),
                b = static_cast<int>(std::lround(255 - 75 * v));
      char fill[8];
      std::snprintf(fill, sizeof fill, "#%02x%02x%02x", r, g, b);
      const double x = ml + cell * static_cast<double>(j);
      os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"" << fill
         << "\" stroke=\"#888\"/>\n"
         << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"middle\" fill=\""
         << (v > 0.6 ? "white" : "black") << "\">" << num(values[i][j], 2) << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace boed::svg

#endif  // BOED_SVG_HPP
