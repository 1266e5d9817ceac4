#pragma once

// Standalone SVG 1.1 line plot of ELBO against ratings accessed, with a
// log10 x-axis and a linear y-axis.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace svmp {

struct PlotCurve {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (ratings accessed, elbo)
  bool diverged = false;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
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

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// Points up to (excluding) the first non-finite y.
inline std::size_t finite_prefix(const PlotCurve& c) {
  std::size_t n = 0;
  while (n < c.points.size() && std::isfinite(c.points[n].second)) ++n;
  return n;
}

}  // namespace detail

/// Writes one polyline per curve plus a legend. A curve that is flagged
/// diverged or contains a non-finite ELBO is drawn up to its last finite
/// point and marked there. When some curves did not diverge, the y-range is
/// fitted to them and lower points are clamped to the bottom of the plot.
inline void emit_svg_plot(const std::vector<PlotCurve>& curves, std::ostream& out,
                          const std::string& title = "ELBO vs. ratings accessed") {
  if (curves.empty()) throw std::invalid_argument("emit_svg_plot: no curves");
  for (const PlotCurve& c : curves) {
    if (c.points.empty()) throw std::invalid_argument("emit_svg_plot: empty curve '" + c.label + "'");
    for (const auto& [x, y] : c.points) {
      if (!(x > 0.0) || !std::isfinite(x)) {
        throw std::invalid_argument("emit_svg_plot: x values must be positive and finite");
      }
    }
  }

  constexpr double kWidth = 900, kHeight = 560;
  constexpr double kLeft = 90, kRight = 230, kTop = 50, kBottom = 70;
  constexpr double kPlotW = kWidth - kLeft - kRight;
  constexpr double kPlotH = kHeight - kTop - kBottom;
  static constexpr std::array<const char*, 10> kPalette = {
      "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
      "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double y_lo = x_lo, y_hi = -x_lo;
  double y_lo_healthy = x_lo;
  bool any_healthy = false;
  for (const PlotCurve& c : curves) {
    const std::size_t n = detail::finite_prefix(c);
    const bool healthy = !c.diverged && n == c.points.size();
    for (std::size_t i = 0; i < n; ++i) {
      const auto [x, y] = c.points[i];
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
      if (healthy) y_lo_healthy = std::min(y_lo_healthy, y);
    }
    any_healthy = any_healthy || (healthy && n > 0);
  }
  if (!std::isfinite(x_lo)) {
    // No finite point at all; fall back to the x extent.
    for (const PlotCurve& c : curves) {
      for (const auto& p : c.points) {
        x_lo = std::min(x_lo, p.first);
        x_hi = std::max(x_hi, p.first);
      }
    }
    y_lo = -1.0;
    y_hi = 0.0;
  }
  if (any_healthy) y_lo = y_lo_healthy;
  double lx_lo = std::floor(std::log10(x_lo));
  double lx_hi = std::ceil(std::log10(x_hi));
  if (lx_hi <= lx_lo) lx_hi = lx_lo + 1.0;
  if (y_hi <= y_lo) {
    y_hi += 0.5;
    y_lo -= 0.5;
  }
  const double pad = 0.05 * (y_hi - y_lo);
  y_lo -= pad;
  y_hi += pad;

  auto px = [&](double x) { return kLeft + (std::log10(x) - lx_lo) / (lx_hi - lx_lo) * kPlotW; };
  auto py = [&](double y) {
    const double clamped = std::clamp(y, y_lo, y_hi);
    return kTop + (y_hi - clamped) / (y_hi - y_lo) * kPlotH;
  };

  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << kWidth
      << "\" height=\"" << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" fill=\"white\"/>\n"
      << "<text x=\"" << detail::fmt(kLeft + kPlotW / 2) << "\" y=\"28\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"16\">" << detail::escape_xml(title)
      << "</text>\n"
      << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kPlotW << "\" height=\""
      << kPlotH << "\" fill=\"none\" stroke=\"black\"/>\n";

  out << "<g font-family=\"sans-serif\" font-size=\"11\" stroke=\"#dddddd\">\n";
  for (double d = lx_lo; d <= lx_hi + 0.5; d += 1.0) {
    const double x = kLeft + (d - lx_lo) / (lx_hi - lx_lo) * kPlotW;
    out << "<line x1=\"" << detail::fmt(x) << "\" y1=\"" << kTop << "\" x2=\"" << detail::fmt(x)
        << "\" y2=\"" << kTop + kPlotH << "\"/>\n"
        << "<text x=\"" << detail::fmt(x) << "\" y=\"" << kTop + kPlotH + 18
        << "\" text-anchor=\"middle\" stroke=\"none\" fill=\"black\">1e"
        << static_cast<int>(d) << "</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double v = y_lo + (y_hi - y_lo) * i / 5.0;
    const double y = py(v);
    out << "<line x1=\"" << kLeft << "\" y1=\"" << detail::fmt(y) << "\" x2=\"" << kLeft + kPlotW
        << "\" y2=\"" << detail::fmt(y) << "\"/>\n"
        << "<text x=\"" << kLeft - 6 << "\" y=\"" << detail::fmt(y + 4)
        << "\" text-anchor=\"end\" stroke=\"none\" fill=\"black\">" << detail::tick_label(v)
        << "</text>\n";
  }
  out << "</g>\n"
      << "<text x=\"" << detail::fmt(kLeft + kPlotW / 2) << "\" y=\"" << kHeight - 20
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
      << "ratings accessed (log scale)</text>\n"
      << "<text x=\"20\" y=\"" << detail::fmt(kTop + kPlotH / 2)
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
      << "transform=\"rotate(-90 20 " << detail::fmt(kTop + kPlotH / 2) << ")\">ELBO</text>\n";

  for (std::size_t c = 0; c < curves.size(); ++c) {
    const PlotCurve& curve = curves[c];
    const char* color = kPalette[c % kPalette.size()];
    const std::size_t n = detail::finite_prefix(curve);
    const bool marked = curve.diverged || n < curve.points.size();
    if (n > 0) {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < n; ++i) {
        if (i) out << ' ';
        out << detail::fmt(px(curve.points[i].first)) << ','
            << detail::fmt(py(curve.points[i].second));
      }
      out << "\"/>\n";
    }
    if (marked) {
      const auto& last = n > 0 ? curve.points[n - 1] : curve.points.front();
      const double mx = px(last.first);
      const double my = n > 0 ? py(last.second) : kTop + kPlotH;
      out << "<g class=\"diverged\" stroke=\"" << color << "\" stroke-width=\"2\">"
          << "<line x1=\"" << detail::fmt(mx - 5) << "\" y1=\"" << detail::fmt(my - 5)
          << "\" x2=\"" << detail::fmt(mx + 5) << "\" y2=\"" << detail::fmt(my + 5) << "\"/>"
          << "<line x1=\"" << detail::fmt(mx - 5) << "\" y1=\"" << detail::fmt(my + 5)
          << "\" x2=\"" << detail::fmt(mx + 5) << "\" y2=\"" << detail::fmt(my - 5) << "\"/>"
          << "<text x=\"" << detail::fmt(mx + 7) << "\" y=\"" << detail::fmt(my - 7)
          << "\" stroke=\"none\" fill=\"" << color
          << "\" font-family=\"sans-serif\" font-size=\"10\">diverged</text></g>\n";
    }
    const double ly = kTop + 10 + 18.0 * static_cast<double>(c);
    out << "<line x1=\"" << kLeft + kPlotW + 15 << "\" y1=\"" << detail::fmt(ly) << "\" x2=\""
        << kLeft + kPlotW + 40 << "\" y2=\"" << detail::fmt(ly) << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << kLeft + kPlotW + 46 << "\" y=\"" << detail::fmt(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << detail::escape_xml(curve.label + (marked ? " (diverged)" : "")) << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace svmp
