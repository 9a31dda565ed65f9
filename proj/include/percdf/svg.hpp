#pragma once
// Dependency-free SVG forecast chart: one panel per variable with the truth
// line, the sample median and a 5-95% band. Text-based output keeps plots
// inspectable in tests.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "percdf/model.hpp"

namespace percdf {

namespace detail {

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * (static_cast<double>(sorted.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace detail

inline void write_forecast_svg(const ForecastSamples& samples, const SeriesFrame& truth,
                               const std::string& path) {
  if (samples.n_points() == 0) throw DataError("plot: no sampled points");
  // Per variable, per step: sorted draw values.
  std::map<int, std::map<int, std::vector<double>>> by_var;
  for (int i = 0; i < samples.n_points(); ++i) {
    auto& cell = by_var[samples.variables[static_cast<std::size_t>(i)]]
                       [samples.steps[static_cast<std::size_t>(i)]];
    for (int d = 0; d < samples.n_draws(); ++d) {
      cell.push_back(samples.draws[static_cast<std::size_t>(d)][static_cast<std::size_t>(i)]);
    }
  }
  for (auto& [v, cols] : by_var) {
    for (auto& [t, vals] : cols) std::sort(vals.begin(), vals.end());
  }

  const int width = 900, panel = 170, margin = 45;
  const int n_panels = static_cast<int>(by_var.size());
  const int height = n_panels * panel + margin;

  std::ofstream out(path);
  if (!out) throw DataError("plot: cannot open " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\">\n";

  int panel_idx = 0;
  for (const auto& [variable, cols] : by_var) {
    // x-range spans the full truth window; y-range covers truth and band.
    int t_lo = truth.origin_step, t_hi = truth.origin_step + truth.n_steps() - 1;
    double y_lo = 1e300, y_hi = -1e300;
    std::vector<std::pair<int, double>> truth_line;
    for (int t = 0; t < truth.n_steps(); ++t) {
      const TimePoint& p = truth.point(truth.point_id(variable, t));
      if (!p.value_known) continue;
      truth_line.emplace_back(truth.origin_step + t, p.value);
      y_lo = std::min(y_lo, p.value);
      y_hi = std::max(y_hi, p.value);
    }
    for (const auto& [t, vals] : cols) {
      y_lo = std::min(y_lo, detail::quantile_sorted(vals, 0.05));
      y_hi = std::max(y_hi, detail::quantile_sorted(vals, 0.95));
    }
    if (y_hi <= y_lo) y_hi = y_lo + 1.0;

    const double top = panel_idx * panel + 20.0;
    const double plot_h = panel - 40.0;
    auto sx = [&](double t) {
      return margin + (t - t_lo) / std::max(1.0, static_cast<double>(t_hi - t_lo)) *
                          (width - 2.0 * margin);
    };
    auto sy = [&](double y) { return top + (y_hi - y) / (y_hi - y_lo) * plot_h; };

    out << "<g>\n";
    out << "<text x=\"" << margin << "\" y=\"" << top - 5 << "\" font-size=\"12\">variable "
        << variable << "</text>\n";

    // 5-95% band over the sampled steps.
    out << "<polygon fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\" points=\"";
    for (const auto& [t, vals] : cols) {
      out << sx(t) << ',' << sy(detail::quantile_sorted(vals, 0.95)) << ' ';
    }
    for (auto it = cols.rbegin(); it != cols.rend(); ++it) {
      out << sx(it->first) << ',' << sy(detail::quantile_sorted(it->second, 0.05)) << ' ';
    }
    out << "\"/>\n";

    // Sample median.
    out << "<polyline fill=\"none\" stroke=\"#2171b5\" stroke-width=\"1.5\" points=\"";
    for (const auto& [t, vals] : cols) {
      out << sx(t) << ',' << sy(detail::quantile_sorted(vals, 0.5)) << ' ';
    }
    out << "\"/>\n";

    // Truth.
    out << "<polyline fill=\"none\" stroke=\"#333333\" stroke-width=\"1\" points=\"";
    for (const auto& [t, y] : truth_line) out << sx(t) << ',' << sy(y) << ' ';
    out << "\"/>\n";
    out << "</g>\n";
    ++panel_idx;
  }
  out << "</svg>\n";
  if (!out) throw DataError("plot: failed writing " + path);
}

}  // namespace percdf
