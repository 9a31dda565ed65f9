#pragma once
// Output variance testing: before an imputed value is allowed to condition
// later points, probe the conditional distribution with a few draws. If the
// probe variance exceeds threshold_multiplier times the variable's input
// variance the point is masked out of every later window and its u is never
// injected; the probe mean is still reported for metrics. Disabled, the
// sampler draws exactly once per point, so the gated and ungated paths use
// the random stream identically.

#include <cmath>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace percdf {

struct GuardConfig {
  int probe_draws = 16;
  double threshold_multiplier = 4.0;
  bool enabled = false;

  void validate() const {
    if (probe_draws < 2) throw std::runtime_error("guard: probe_draws must be >= 2");
    if (!(threshold_multiplier > 0.0)) {
      throw std::runtime_error("guard: threshold_multiplier must be positive");
    }
  }
};

struct GuardDecision {
  int point_id = -1;
  double input_variance = 0.0;
  double probe_variance = 0.0;
  bool masked = false;
};

struct GuardResult {
  double value = 0.0;  // accepted draw, or the probe mean when masked
  bool masked = false;
  double probe_variance = 0.0;
};

// conditional_sampler draws one value from the point's conditional
// distribution (bin draw pushed through the marginal inverse CDF).
inline GuardResult guard_point(const std::function<double()>& conditional_sampler,
                               double input_variance, const GuardConfig& cfg) {
  if (!cfg.enabled) {
    return {conditional_sampler(), false, 0.0};
  }
  cfg.validate();
  std::vector<double> draws(static_cast<std::size_t>(cfg.probe_draws));
  for (double& d : draws) d = conditional_sampler();
  double mean = 0.0;
  for (double d : draws) mean += d;
  mean /= cfg.probe_draws;
  double var = 0.0;
  for (double d : draws) var += (d - mean) * (d - mean);
  var /= (cfg.probe_draws - 1);

  GuardResult r;
  r.probe_variance = var;
  r.masked = var > cfg.threshold_multiplier * input_variance;
  // The first draw is the realized sample; the probe mean replaces it only
  // when the point is masked (reported, never conditioned on).
  r.value = r.masked ? mean : draws[0];
  return r;
}

inline void write_guard_log_csv(const std::vector<GuardDecision>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_guard_log_csv: cannot open " + path);
  out << "point_id,input_variance,probe_variance,decision\n";
  for (const GuardDecision& d : log) {
    out << d.point_id << ',' << d.input_variance << ',' << d.probe_variance << ','
        << (d.masked ? "mask" : "accept") << '\n';
  }
}

}  // namespace percdf
