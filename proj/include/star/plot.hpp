#pragma once

// Minimal static SVG charts for the sweep outputs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

namespace star::plot {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

inline const char* color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  return palette[i % 6];
}

}  // namespace detail

inline std::string line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                              const std::vector<Series>& series) {
  const double W = 560, H = 380, L = 64, R = 150, T = 40, B = 52;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series) {
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (x0 > x1) x0 = 0, x1 = 1;
  if (y0 > y1) y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 1, x1 += 1;
  const double pad = std::max(1e-6, 0.1 * (y1 - y0));
  y0 -= pad;
  y1 += pad;
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"560\" height=\"380\" font-family=\"sans-serif\" "
                  "font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + detail::fmt("%.1f", W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
       detail::escape(title) + "</text>\n";
  s += "<line x1=\"" + detail::fmt("%.1f", L) + "\" y1=\"" + detail::fmt("%.1f", H - B) + "\" x2=\"" +
       detail::fmt("%.1f", W - R) + "\" y2=\"" + detail::fmt("%.1f", H - B) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + detail::fmt("%.1f", L) + "\" y1=\"" + detail::fmt("%.1f", T) + "\" x2=\"" +
       detail::fmt("%.1f", L) + "\" y2=\"" + detail::fmt("%.1f", H - B) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = y0 + (y1 - y0) * i / 4.0;
    s += "<text x=\"" + detail::fmt("%.1f", L - 6) + "\" y=\"" + detail::fmt("%.1f", py(v) + 4) +
         "\" text-anchor=\"end\">" + detail::fmt("%.1f", v) + "</text>\n";
  }
  std::vector<double> ticks;
  for (const auto& ser : series) ticks.insert(ticks.end(), ser.x.begin(), ser.x.end());
  std::sort(ticks.begin(), ticks.end());
  ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
  for (double v : ticks) {
    s += "<text x=\"" + detail::fmt("%.1f", px(v)) + "\" y=\"" + detail::fmt("%.1f", H - B + 16) +
         "\" text-anchor=\"middle\">" + detail::fmt("%g", v) + "</text>\n";
  }
  s += "<text x=\"" + detail::fmt("%.1f", (L + W - R) / 2) + "\" y=\"" + detail::fmt("%.1f", H - 12) +
       "\" text-anchor=\"middle\">" + detail::escape(xlabel) + "</text>\n";
  s += "<text transform=\"translate(16," + detail::fmt("%.1f", (T + H - B) / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">" + detail::escape(ylabel) + "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& ser = series[i];
    std::string pts;
    for (std::size_t k = 0; k < ser.x.size() && k < ser.y.size(); ++k) {
      pts += detail::fmt("%.1f", px(ser.x[k])) + "," + detail::fmt("%.1f", py(ser.y[k])) + " ";
      s += "<circle cx=\"" + detail::fmt("%.1f", px(ser.x[k])) + "\" cy=\"" + detail::fmt("%.1f", py(ser.y[k])) +
           "\" r=\"3\" fill=\"" + detail::color(i) + "\"/>\n";
    }
    s += "<polyline fill=\"none\" stroke=\"" + std::string(detail::color(i)) + "\" stroke-width=\"2\" points=\"" +
         pts + "\"/>\n";
    const double ly = T + 16 * static_cast<double>(i);
    s += "<line x1=\"" + detail::fmt("%.1f", W - R + 12) + "\" y1=\"" + detail::fmt("%.1f", ly) + "\" x2=\"" +
         detail::fmt("%.1f", W - R + 32) + "\" y2=\"" + detail::fmt("%.1f", ly) + "\" stroke=\"" +
         detail::color(i) + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + detail::fmt("%.1f", W - R + 38) + "\" y=\"" + detail::fmt("%.1f", ly + 4) + "\">" +
         detail::escape(ser.label) + "</text>\n";
  }
  return s + "</svg>\n";
}

// Cells keyed by (row, col); missing cells are left blank.
inline std::string heatmap(const std::string& title, const std::string& row_label, const std::string& col_label,
                           const std::map<std::pair<int, int>, double>& cells) {
  int rows = 0, cols = 0;
  double lo = 1e300, hi = -1e300;
  for (const auto& [k, v] : cells) {
    rows = std::max(rows, k.first + 1);
    cols = std::max(cols, k.second + 1);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double cell = 64, L = 90, T = 50;
  const double W = L + cell * cols + 30, H = T + cell * rows + 50;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt("%.0f", W) + "\" height=\"" +
                  detail::fmt("%.0f", H) + "\" font-family=\"sans-serif\" font-size=\"12\">\n"
                  "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + detail::fmt("%.1f", W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
       detail::escape(title) + "</text>\n";
  for (const auto& [k, v] : cells) {
    const double f = hi > lo ? (v - lo) / (hi - lo) : 0.5;
    const int r = static_cast<int>(255 - 200 * f), g = static_cast<int>(255 - 120 * f), b = 255;
    char fill[16];
    std::snprintf(fill, sizeof(fill), "#%02x%02x%02x", r, g, b);
    const double x = L + cell * k.second, y = T + cell * k.first;
    s += "<rect x=\"" + detail::fmt("%.1f", x) + "\" y=\"" + detail::fmt("%.1f", y) + "\" width=\"64\" height=\"64\" "
         "fill=\"" + fill + "\" stroke=\"#888\"/>\n";
    s += "<text x=\"" + detail::fmt("%.1f", x + cell / 2) + "\" y=\"" + detail::fmt("%.1f", y + cell / 2 + 4) +
         "\" text-anchor=\"middle\">" + detail::fmt("%.1f", v) + "</text>\n";
  }
  for (int r = 0; r < rows; ++r) {
    s += "<text x=\"" + detail::fmt("%.1f", L - 8) + "\" y=\"" + detail::fmt("%.1f", T + cell * r + cell / 2 + 4) +
         "\" text-anchor=\"end\">" + std::to_string(r) + "</text>\n";
  }
  for (int c = 0; c < cols; ++c) {
    s += "<text x=\"" + detail::fmt("%.1f", L + cell * c + cell / 2) + "\" y=\"" +
         detail::fmt("%.1f", T + cell * rows + 16) + "\" text-anchor=\"middle\">" + std::to_string(c) + "</text>\n";
  }
  s += "<text x=\"" + detail::fmt("%.1f", L + cell * cols / 2) + "\" y=\"" + detail::fmt("%.1f", H - 10) +
       "\" text-anchor=\"middle\">" + detail::escape(col_label) + "</text>\n";
  s += "<text transform=\"translate(20," + detail::fmt("%.1f", T + cell * rows / 2) +
       ") rotate(-90)\" text-anchor=\"middle\">" + detail::escape(row_label) + "</text>\n";
  return s + "</svg>\n";
}

}  // namespace star::plot
