#pragma once
// Forecast evaluation: NLL on held-out windows, RMSE of the conditional mean,
// CRPS with the unbiased pairwise estimator, and thresholded-event accuracy
// readouts. All sample-based metrics work from a ForecastSamples table plus a
// truth frame; truth is matched on (variable, absolute timestamp).

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "percdf/model.hpp"
#include "percdf/training.hpp"

namespace percdf {

struct EventRule {
  std::string name;
  int variable = 0;
  std::string comparator = ">";  // one of > >= < <=
  double threshold = 0.0;

  bool test(double value) const {
    if (comparator == ">") return value > threshold;
    if (comparator == ">=") return value >= threshold;
    if (comparator == "<") return value < threshold;
    if (comparator == "<=") return value <= threshold;
    throw DataError("event rule: unknown comparator '" + comparator + "'");
  }
};

struct EvalReport {
  std::optional<double> nll;
  double rmse_cm = 0.0;
  double crps = 0.0;
  std::map<int, double> rmse_by_variable;
  std::map<int, double> crps_by_variable;
  std::map<std::string, double> event_accuracy;
  int n_samples = 0;
};

namespace detail {

inline std::map<std::pair<int, int>, double> truth_lookup(const SeriesFrame& truth) {
  std::map<std::pair<int, int>, double> out;
  for (const TimePoint& p : truth.points()) {
    if (p.value_known) out[{p.variable, truth.origin_step + p.step}] = p.value;
  }
  return out;
}

inline double truth_at(const std::map<std::pair<int, int>, double>& lut, int variable, int step) {
  const auto it = lut.find({variable, step});
  if (it == lut.end()) {
    throw DataError("metrics: no truth value for variable " + std::to_string(variable) +
                    " at step " + std::to_string(step));
  }
  return it->second;
}

}  // namespace detail

// sqrt(mean over points of (mean over draws - truth)^2), in series units.
inline double rmse_cm(const ForecastSamples& samples, const SeriesFrame& truth,
                      std::map<int, double>* by_variable = nullptr) {
  if (samples.n_points() == 0) throw DataError("rmse_cm: no sampled points");
  const auto lut = detail::truth_lookup(truth);
  double acc = 0.0;
  std::map<int, std::pair<double, int>> per_var;
  for (int i = 0; i < samples.n_points(); ++i) {
    double mean = 0.0;
    for (int d = 0; d < samples.n_draws(); ++d) {
      mean += samples.draws[static_cast<std::size_t>(d)][static_cast<std::size_t>(i)];
    }
    mean /= samples.n_draws();
    const double y = detail::truth_at(lut, samples.variables[static_cast<std::size_t>(i)],
                                      samples.steps[static_cast<std::size_t>(i)]);
    const double sq = (mean - y) * (mean - y);
    acc += sq;
    auto& [vacc, vcount] = per_var[samples.variables[static_cast<std::size_t>(i)]];
    vacc += sq;
    ++vcount;
  }
  if (by_variable) {
    for (const auto& [v, p] : per_var) (*by_variable)[v] = std::sqrt(p.first / p.second);
  }
  return std::sqrt(acc / samples.n_points());
}

// Unbiased empirical CRPS per point: E|X - y| - 1/(2 m (m-1)) sum_{i != j}
// |x_i - x_j|; points are normalized per variable by the mean absolute truth
// of that variable (skipped when it is zero) and then averaged.
inline double crps(const ForecastSamples& samples, const SeriesFrame& truth,
                   std::map<int, double>* by_variable = nullptr) {
  const int m = samples.n_draws();
  if (m < 2) throw DataError("crps: needs at least two draws per point");
  if (samples.n_points() == 0) throw DataError("crps: no sampled points");
  const auto lut = detail::truth_lookup(truth);

  std::map<int, double> scale_acc;
  std::map<int, int> scale_count;
  std::vector<double> point_crps(static_cast<std::size_t>(samples.n_points()));
  std::vector<double> truths(static_cast<std::size_t>(samples.n_points()));
  for (int i = 0; i < samples.n_points(); ++i) {
    const double y = detail::truth_at(lut, samples.variables[static_cast<std::size_t>(i)],
                                      samples.steps[static_cast<std::size_t>(i)]);
    truths[static_cast<std::size_t>(i)] = y;
    scale_acc[samples.variables[static_cast<std::size_t>(i)]] += std::fabs(y);
    scale_count[samples.variables[static_cast<std::size_t>(i)]] += 1;

    double term1 = 0.0;
    for (int d = 0; d < m; ++d) {
      term1 += std::fabs(samples.draws[static_cast<std::size_t>(d)][static_cast<std::size_t>(i)] - y);
    }
    term1 /= m;
    double term2 = 0.0;
    for (int a = 0; a < m; ++a) {
      for (int b = 0; b < m; ++b) {
        if (a == b) continue;
        term2 += std::fabs(samples.draws[static_cast<std::size_t>(a)][static_cast<std::size_t>(i)] -
                           samples.draws[static_cast<std::size_t>(b)][static_cast<std::size_t>(i)]);
      }
    }
    term2 /= 2.0 * m * (m - 1);
    point_crps[static_cast<std::size_t>(i)] = term1 - term2;
  }

  std::map<int, double> scale;
  for (const auto& [v, acc] : scale_acc) {
    const double s = acc / scale_count[v];
    scale[v] = s > 0.0 ? s : 1.0;
  }
  double acc = 0.0;
  std::map<int, std::pair<double, int>> per_var;
  for (int i = 0; i < samples.n_points(); ++i) {
    const int v = samples.variables[static_cast<std::size_t>(i)];
    const double c = point_crps[static_cast<std::size_t>(i)] / scale[v];
    acc += c;
    auto& [vacc, vcount] = per_var[v];
    vacc += c;
    ++vcount;
  }
  if (by_variable) {
    for (const auto& [v, p] : per_var) (*by_variable)[v] = p.first / p.second;
  }
  return acc / samples.n_points();
}

// Majority vote over draws of (value <comparator> threshold) against the
// truth event. Ties vote for the event.
inline double event_accuracy(const ForecastSamples& samples, const EventRule& rule,
                             const SeriesFrame& truth) {
  const auto lut = detail::truth_lookup(truth);
  int points = 0, correct = 0;
  for (int i = 0; i < samples.n_points(); ++i) {
    if (samples.variables[static_cast<std::size_t>(i)] != rule.variable) continue;
    ++points;
    int votes = 0;
    for (int d = 0; d < samples.n_draws(); ++d) {
      if (rule.test(samples.draws[static_cast<std::size_t>(d)][static_cast<std::size_t>(i)])) ++votes;
    }
    const bool predicted = 2 * votes >= samples.n_draws();
    const bool actual = rule.test(detail::truth_at(
        lut, rule.variable, samples.steps[static_cast<std::size_t>(i)]));
    if (predicted == actual) ++correct;
  }
  if (points == 0) {
    throw DataError("event_accuracy: rule variable " + std::to_string(rule.variable) +
                    " has no sampled points");
  }
  return static_cast<double>(correct) / points;
}

// Mean joint NLL over the windows of the frame, one plan per window.
inline double eval_nll(Forecaster& model, const SeriesFrame& frame, const WindowTask& window,
                       std::uint64_t seed) {
  const auto offsets = enumerate_windows(frame, window);
  if (offsets.empty()) throw DataError("eval_nll: no windows fit the series");
  double acc = 0.0;
  Rng plan_rng(mix_seed(seed, 0x6576616c));
  for (int offset : offsets) {
    SeriesFrame task = make_forecast_task(frame, window, offset);
    PermutationPlan plan = model.plan_for(task, plan_rng.next_u64());
    Workspace ws(&model.params());
    acc += model.joint_nll(ws, task, plan).loss.item();
  }
  return acc / static_cast<double>(offsets.size());
}

// Last observed value carried forward; the reference forecast for smoke
// comparisons.
inline double persistence_rmse_cm(const SeriesFrame& task) {
  double acc = 0.0;
  int n = 0;
  for (int id : task.missing_ids()) {
    const TimePoint& p = task.point(id);
    if (!p.value_known) continue;
    double last = 0.0;
    bool found = false;
    for (int t = p.step - 1; t >= 0; --t) {
      const TimePoint& q = task.point(task.point_id(p.variable, t));
      if (q.observed) {
        last = q.value;
        found = true;
        break;
      }
    }
    if (!found) continue;
    acc += (last - p.value) * (last - p.value);
    ++n;
  }
  if (n == 0) throw DataError("persistence: no evaluable points");
  return std::sqrt(acc / n);
}

inline void write_report_csv(const EvalReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("write_report_csv: cannot open " + path);
  out << "metric,variable,value\n";
  if (r.nll) out << "nll,," << *r.nll << '\n';
  out << "rmse_cm,," << r.rmse_cm << '\n';
  out << "crps,," << r.crps << '\n';
  for (const auto& [v, x] : r.rmse_by_variable) out << "rmse_cm," << v << ',' << x << '\n';
  for (const auto& [v, x] : r.crps_by_variable) out << "crps," << v << ',' << x << '\n';
  for (const auto& [name, x] : r.event_accuracy) out << "event_accuracy:" << name << ",," << x << '\n';
  out << "n_samples,," << r.n_samples << '\n';
}

inline std::string report_text_table(const EvalReport& r) {
  char buf[128];
  std::string out;
  out += "metric            value\n";
  out += "----------------  ----------\n";
  if (r.nll) {
    std::snprintf(buf, sizeof(buf), "%-16s  %.6g\n", "nll", *r.nll);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%-16s  %.6g\n", "rmse_cm", r.rmse_cm);
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-16s  %.6g\n", "crps", r.crps);
  out += buf;
  for (const auto& [name, x] : r.event_accuracy) {
    std::snprintf(buf, sizeof(buf), "%-16s  %.6g\n", ("acc:" + name).c_str(), x);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%-16s  %d\n", "n_samples", r.n_samples);
  out += buf;
  return out;
}

}  // namespace percdf
