#pragma once

// Static SVG figures: observed vs predicted hydrographs and adjacency heatmaps.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "caustream/core/panel.hpp"

namespace caustream::pipeline {

namespace detail {
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else if (c == '"') out += "&quot;";
    else out += c;
  }
  return out;
}

inline std::string polyline(const Eigen::VectorXd& y, double x0, double y0, double w, double h, double lo,
                            double hi, const char* colour) {
  std::ostringstream os;
  os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1\" points=\"";
  const Index n = y.size();
  const double span = hi > lo ? hi - lo : 1.0;
  for (Index i = 0; i < n; ++i) {
    const double px = x0 + (n > 1 ? w * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0);
    const double py = y0 + h - h * (y(i) - lo) / span;
    os << fmt(px) << ',' << fmt(py) << ' ';
  }
  os << "\"/>\n";
  return os.str();
}
}  // namespace detail

/// One panel per station; obs and pred are T x N in physical units.
inline std::string hydrograph_svg(const Matrix& obs, const Matrix& pred, const std::vector<std::string>& ids,
                                  const std::string& title) {
  using detail::fmt;
  const double w = 720, h = 120, margin = 50, gap = 30;
  const Index n = obs.cols();
  const double total_h = margin + static_cast<double>(n) * (h + gap);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(w + 2 * margin) << "\" height=\""
     << fmt(total_h) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << fmt(margin) << "\" y=\"20\" font-size=\"14\">" << detail::xml_escape(title) << "</text>\n";
  os << "<text x=\"" << fmt(margin + w - 160) << "\" y=\"20\"><tspan fill=\"black\">observed</tspan>"
     << " <tspan fill=\"#d62728\">predicted</tspan></text>\n";
  for (Index k = 0; k < n; ++k) {
    const double y0 = margin + static_cast<double>(k) * (h + gap);
    const double lo = std::min(obs.col(k).minCoeff(), pred.col(k).minCoeff());
    const double hi = std::max(obs.col(k).maxCoeff(), pred.col(k).maxCoeff());
    os << "<rect x=\"" << fmt(margin) << "\" y=\"" << fmt(y0) << "\" width=\"" << fmt(w) << "\" height=\"" << fmt(h)
       << "\" fill=\"none\" stroke=\"#999\"/>\n";
    os << "<text x=\"" << fmt(margin) << "\" y=\"" << fmt(y0 - 4) << "\">"
       << detail::xml_escape(ids[static_cast<std::size_t>(k)]) << "</text>\n";
    os << "<text x=\"4\" y=\"" << fmt(y0 + 10) << "\">" << detail::fmt(hi) << "</text>\n";
    os << "<text x=\"4\" y=\"" << fmt(y0 + h) << "\">" << detail::fmt(lo) << "</text>\n";
    os << detail::polyline(obs.col(k), margin, y0, w, h, lo, hi, "black");
    os << detail::polyline(pred.col(k), margin, y0, w, h, lo, hi, "#d62728");
  }
  os << "</svg>\n";
  return os.str();
}

struct Heatmap {
  std::string title;
  Matrix values;  // rows = targets, cols = sources
  std::vector<std::string> labels;
};

/// Side-by-side grayscale heatmaps, each scaled to its own maximum.
inline std::string heatmap_svg(const std::vector<Heatmap>& maps) {
  const double cell = 28, margin = 70, gap = 40;
  double width = margin, height = 0;
  for (const auto& m : maps) {
    width += static_cast<double>(m.values.cols()) * cell + gap;
    height = std::max(height, static_cast<double>(m.values.rows()) * cell);
  }
  height += 2 * margin;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << detail::fmt(width) << "\" height=\""
     << detail::fmt(height) << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  double x0 = margin;
  for (const auto& m : maps) {
    const double mx = m.values.size() ? m.values.cwiseAbs().maxCoeff() : 0.0;
    os << "<text x=\"" << detail::fmt(x0) << "\" y=\"" << detail::fmt(margin - 30) << "\" font-size=\"12\">"
       << detail::xml_escape(m.title) << "</text>\n";
    for (Index i = 0; i < m.values.rows(); ++i) {
      for (Index j = 0; j < m.values.cols(); ++j) {
        const double v = mx > 0.0 ? std::abs(m.values(i, j)) / mx : 0.0;
        const int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
        os << "<rect x=\"" << detail::fmt(x0 + static_cast<double>(j) * cell) << "\" y=\""
           << detail::fmt(margin + static_cast<double>(i) * cell) << "\" width=\"" << detail::fmt(cell)
           << "\" height=\"" << detail::fmt(cell) << "\" fill=\"rgb(" << shade << ',' << shade << ',' << shade
           << ")\" stroke=\"#ccc\"/>\n";
      }
      if (x0 == margin && static_cast<std::size_t>(i) < m.labels.size())
        os << "<text x=\"4\" y=\"" << detail::fmt(margin + (static_cast<double>(i) + 0.6) * cell) << "\">"
           << detail::xml_escape(m.labels[static_cast<std::size_t>(i)]) << "</text>\n";
    }
    for (Index j = 0; j < m.values.cols() && static_cast<std::size_t>(j) < m.labels.size(); ++j)
      os << "<text x=\"" << detail::fmt(x0 + static_cast<double>(j) * cell + 2) << "\" y=\""
         << detail::fmt(margin - 6) << "\">" << detail::xml_escape(m.labels[static_cast<std::size_t>(j)].substr(0, 4))
         << "</text>\n";
    x0 += static_cast<double>(m.values.cols()) * cell + gap;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace caustream::pipeline
