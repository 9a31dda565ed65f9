#pragma once
// Memory-consumption scaling harness. Runs one training-shaped forward pass
// per (variant, sweep value) cell over synthetic random-walk tasks and
// records the exact ledger, then fits log-log slopes. Four variants: the
// latent-bottleneck model with local windows, the global-attention baseline
// with global windows, and the two crosses.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "percdf/metrics.hpp"
#include "percdf/model.hpp"

namespace percdf {

struct VariantSpec {
  std::string name;       // perceiver-CDF | TACTiS | TACTiS-PE | TACTiS-MI
  bool perceiver_encoder = false;
  bool local_windows = false;
};

inline VariantSpec variant_by_name(const std::string& name) {
  if (name == "perceiver-CDF") return {name, true, true};
  if (name == "TACTiS") return {name, false, false};
  if (name == "TACTiS-PE") return {name, true, false};
  if (name == "TACTiS-MI") return {name, false, true};
  throw DataError("memscale: unknown variant '" + name + "'");
}

inline void validate_variant(const VariantSpec& v) {
  const VariantSpec canon = variant_by_name(v.name);
  if (canon.perceiver_encoder != v.perceiver_encoder || canon.local_windows != v.local_windows) {
    throw DataError("memscale: variant '" + v.name + "' is inconsistent with its encoder/window pair");
  }
}

inline std::vector<VariantSpec> all_variants() {
  return {variant_by_name("perceiver-CDF"), variant_by_name("TACTiS"),
          variant_by_name("TACTiS-PE"), variant_by_name("TACTiS-MI")};
}

enum class SweepAxis { PredLen, CondLen };

inline const char* sweep_axis_name(SweepAxis a) {
  return a == SweepAxis::PredLen ? "pred_len" : "cond_len";
}

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "pred" || s == "pred_len") return SweepAxis::PredLen;
  if (s == "cond" || s == "cond_len") return SweepAxis::CondLen;
  throw DataError("memscale: unknown axis '" + s + "' (want pred or cond)");
}

struct ScaleBase {
  int n_variables = 10;
  int observed_steps = 10;
  int predict_steps = 10;
};

struct ScaleRow {
  std::string variant;
  std::string axis;
  int value = 0;
  MemoryLedger ledger;
};

// One forward pass and one plan per cell; no training. Values must be sorted
// ascending.
inline std::vector<ScaleRow> run_scaling(const ScaleBase& base, SweepAxis axis,
                                         const std::vector<int>& values,
                                         const std::vector<VariantSpec>& variants,
                                         const ModelConfig& model_cfg, std::uint64_t seed = 7) {
  if (!std::is_sorted(values.begin(), values.end())) {
    throw DataError("memscale: sweep values must be ascending");
  }
  std::vector<ScaleRow> rows;
  for (const VariantSpec& variant : variants) {
    validate_variant(variant);
    for (int v : values) {
      const int obs = axis == SweepAxis::CondLen ? v : base.observed_steps;
      const int pred = axis == SweepAxis::PredLen ? v : base.predict_steps;

      SeriesFrame series = random_walk(base.n_variables, obs + pred, seed);
      WindowTask window;
      window.history = obs;
      window.horizon = pred;
      SeriesFrame task = make_forecast_task(series, window);

      ModelConfig cfg = model_cfg;
      cfg.use_perceiver_encoder = variant.perceiver_encoder;
      cfg.scheduler.global_windows = !variant.local_windows;
      if (variant.local_windows) {
        // Long horizons switch to the interval-limited order.
        cfg.scheduler.mode = pred > 64 ? PermutationMode::MidpointMaxInterval
                                       : PermutationMode::Midpoint;
      } else {
        cfg.scheduler.mode = PermutationMode::Random;
      }

      Forecaster model(cfg, base.n_variables, seed);
      PermutationPlan plan = model.plan_for(task, seed);
      ScaleRow row;
      row.variant = variant.name;
      row.axis = sweep_axis_name(axis);
      row.value = v;
      row.ledger = model.measure_forward(task, plan);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline void write_scale_csv(const std::vector<ScaleRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("write_scale_csv: cannot open " + path);
  out << "variant,axis,value,encoder_cross_scores,encoder_self_scores,decoder_scores,"
         "activation_scalars,total\n";
  for (const ScaleRow& r : rows) {
    out << r.variant << ',' << r.axis << ',' << r.value << ',' << r.ledger.encoder_cross_scores
        << ',' << r.ledger.encoder_self_scores << ',' << r.ledger.decoder_scores << ','
        << r.ledger.activation_scalars << ',' << r.ledger.total() << '\n';
  }
}

inline std::vector<ScaleRow> read_scale_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("read_scale_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("read_scale_csv: empty file " + path);
  std::vector<ScaleRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 8) throw DataError("read_scale_csv: malformed row in " + path);
    ScaleRow r;
    r.variant = f[0];
    r.axis = f[1];
    r.value = std::stoi(f[2]);
    r.ledger.encoder_cross_scores = std::stoll(f[3]);
    r.ledger.encoder_self_scores = std::stoll(f[4]);
    r.ledger.decoder_scores = std::stoll(f[5]);
    r.ledger.activation_scalars = std::stoll(f[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline double fit_loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw DataError("fit_slope: need matching xs/ys with at least two points");
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double lx = std::log(xs[i]);
    const double ly = std::log(ys[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// Least-squares slope of log(total scalars) against log(axis value).
inline double fit_slope(const std::vector<ScaleRow>& rows, const std::string& variant) {
  std::vector<double> xs, ys;
  for (const ScaleRow& r : rows) {
    if (r.variant != variant) continue;
    xs.push_back(static_cast<double>(r.value));
    ys.push_back(static_cast<double>(r.ledger.total()));
  }
  if (xs.size() < 4) {
    throw DataError("fit_slope: variant '" + variant + "' has fewer than 4 sweep points");
  }
  return fit_loglog_slope(xs, ys);
}

}  // namespace percdf
