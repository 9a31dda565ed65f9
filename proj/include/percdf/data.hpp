#pragma once
// Series ingestion and task construction. A SeriesFrame holds one observation
// per (variable, step) cell as an explicit point with a mask bit; missing data
// is never encoded through sentinel values. Frames are immutable after
// construction and safe to share across threads.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "percdf/rng.hpp"

namespace percdf {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One observation quadruple: value, variable index, time step, mask.
// value_known distinguishes a held-out truth carrier (re-masked for
// inference, value still valid) from a genuine data gap.
struct TimePoint {
  double value = 0.0;
  int variable = 0;
  int step = 0;
  bool observed = true;
  bool value_known = true;
};

struct VariableStats {
  double mean = 0.0;
  double stddev = 1.0;
};

struct WindowTask {
  int history = 1;   // observed steps per variable (H)
  int horizon = 1;   // steps to infer per variable (S)
  int stride = 1;

  void validate() const {
    if (history < 1) throw DataError("window: history must be >= 1");
    if (horizon < 1) throw DataError("window: horizon must be >= 1");
    if (stride < 1) throw DataError("window: stride must be >= 1");
  }
};

class SeriesFrame {
 public:
  SeriesFrame(int n_variables, int n_steps, std::vector<TimePoint> points)
      : n_variables_(n_variables), n_steps_(n_steps), points_(std::move(points)) {
    index_.assign(static_cast<std::size_t>(n_variables_) * n_steps_, -1);
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const TimePoint& p = points_[i];
      if (p.variable < 0 || p.variable >= n_variables_ || p.step < 0 || p.step >= n_steps_) {
        throw DataError("frame: point (" + std::to_string(p.variable) + "," +
                        std::to_string(p.step) + ") outside frame bounds");
      }
      int& slot = index_[cell(p.variable, p.step)];
      if (slot != -1) {
        throw DataError("frame: duplicate point for variable " + std::to_string(p.variable) +
                        " at step " + std::to_string(p.step));
      }
      slot = static_cast<int>(i);
    }
    compute_stats_all_observed();
  }

  int n_variables() const { return n_variables_; }
  int n_steps() const { return n_steps_; }
  const std::vector<TimePoint>& points() const { return points_; }
  const TimePoint& point(int id) const { return points_[static_cast<std::size_t>(id)]; }
  int n_points() const { return static_cast<int>(points_.size()); }

  int point_id(int variable, int step) const { return index_[cell(variable, step)]; }

  const VariableStats& stats(int variable) const {
    return stats_[static_cast<std::size_t>(variable)];
  }

  double standardized(int id) const {
    const TimePoint& p = point(id);
    const VariableStats& s = stats(p.variable);
    return (p.value - s.mean) / s.stddev;
  }

  double destandardize(int variable, double z) const {
    const VariableStats& s = stats(variable);
    return z * s.stddev + s.mean;
  }

  // Origin of this frame within a larger series; forecast output maps steps
  // back through it.
  int origin_step = 0;

  std::vector<int> observed_ids() const {
    std::vector<int> out;
    for (int i = 0; i < n_points(); ++i) {
      if (points_[static_cast<std::size_t>(i)].observed) out.push_back(i);
    }
    return out;
  }

  std::vector<int> missing_ids() const {
    std::vector<int> out;
    for (int i = 0; i < n_points(); ++i) {
      if (!points_[static_cast<std::size_t>(i)].observed) out.push_back(i);
    }
    return out;
  }

  // Sample variance of the standardized observed values of one variable.
  double observed_variance(int variable) const {
    double mean = 0.0;
    int n = 0;
    for (const TimePoint& p : points_) {
      if (p.variable == variable && p.observed) {
        mean += standardized(point_id(p.variable, p.step));
        ++n;
      }
    }
    if (n < 2) return 1.0;
    mean /= n;
    double acc = 0.0;
    for (const TimePoint& p : points_) {
      if (p.variable == variable && p.observed) {
        const double d = standardized(point_id(p.variable, p.step)) - mean;
        acc += d * d;
      }
    }
    return acc / (n - 1);
  }

 private:
  friend SeriesFrame make_forecast_task(const SeriesFrame&, const WindowTask&, int);

  std::size_t cell(int variable, int step) const {
    return static_cast<std::size_t>(variable) * n_steps_ + step;
  }

  void compute_stats_all_observed() {
    stats_.assign(static_cast<std::size_t>(n_variables_), VariableStats{});
    std::vector<double> sum(static_cast<std::size_t>(n_variables_), 0.0);
    std::vector<double> sumsq(static_cast<std::size_t>(n_variables_), 0.0);
    std::vector<int> count(static_cast<std::size_t>(n_variables_), 0);
    for (const TimePoint& p : points_) {
      if (!p.observed) continue;
      sum[static_cast<std::size_t>(p.variable)] += p.value;
      sumsq[static_cast<std::size_t>(p.variable)] += p.value * p.value;
      ++count[static_cast<std::size_t>(p.variable)];
    }
    for (int v = 0; v < n_variables_; ++v) {
      const std::size_t vi = static_cast<std::size_t>(v);
      if (count[vi] == 0) continue;
      const double mean = sum[vi] / count[vi];
      double var = sumsq[vi] / count[vi] - mean * mean;
      if (var < 0.0) var = 0.0;
      stats_[vi].mean = mean;
      // Degenerate variables (constant or single observation) fall back to a
      // tiny positive scale so standardization stays finite.
      stats_[vi].stddev = count[vi] >= 2 ? std::max(std::sqrt(var), 1e-9) : 1.0;
    }
  }

  int n_variables_;
  int n_steps_;
  std::vector<TimePoint> points_;
  std::vector<int> index_;
  std::vector<VariableStats> stats_;
};

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

// Gaussian random walk per variable: x[c,0] = 0, x[c,t+1] = x[c,t] + eps.
// Values come from one stream and the mask from a forked one, so the same
// seed produces identical values at every missing rate.
inline SeriesFrame random_walk(int n_variables, int n_steps, std::uint64_t seed,
                               double missing_rate = 0.0) {
  if (missing_rate < 0.0 || missing_rate >= 1.0) {
    throw DataError("random_walk: missing rate must be in [0,1)");
  }
  Rng value_rng(mix_seed(seed, 0x77616c6b));
  Rng mask_rng(mix_seed(seed, 0x6d61736b));
  std::vector<TimePoint> pts;
  pts.reserve(static_cast<std::size_t>(n_variables) * n_steps);
  for (int v = 0; v < n_variables; ++v) {
    double x = 0.0;
    for (int t = 0; t < n_steps; ++t) {
      if (t > 0) x += value_rng.normal();
      TimePoint p;
      p.value = x;
      p.variable = v;
      p.step = t;
      p.observed = true;
      pts.push_back(p);
    }
  }
  for (TimePoint& p : pts) {
    if (mask_rng.uniform01() < missing_rate) p.observed = false;
  }
  return SeriesFrame(n_variables, n_steps, std::move(pts));
}

// Phase-shifted sinusoids plus Gaussian noise; a task where history genuinely
// predicts the future, used for training smoke checks.
inline SeriesFrame sinusoid(int n_variables, int n_steps, std::uint64_t seed,
                            double noise_stddev = 0.1, double period = 24.0) {
  Rng rng(mix_seed(seed, 0x73696e65));
  std::vector<TimePoint> pts;
  pts.reserve(static_cast<std::size_t>(n_variables) * n_steps);
  for (int v = 0; v < n_variables; ++v) {
    const double phase = static_cast<double>(v) / n_variables;
    for (int t = 0; t < n_steps; ++t) {
      TimePoint p;
      p.value = std::sin(2.0 * kPi * (t / period + phase)) + noise_stddev * rng.normal();
      p.variable = v;
      p.step = t;
      pts.push_back(p);
    }
  }
  return SeriesFrame(n_variables, n_steps, std::move(pts));
}

// ---------------------------------------------------------------------------
// CSV I/O: header row, columns (series_id, timestamp, value), UTF-8.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline bool parse_int(const std::string& s, long long& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stoll(s, &pos);
  } catch (...) {
    return false;
  }
  return pos == s.size();
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stod(s, &pos);
  } catch (...) {
    return false;
  }
  return pos == s.size();
}

// ISO-style datetimes ("YYYY-MM-DD", optionally "THH:MM[:SS]" or with a
// space) mapped to a comparable integer. Only ordering and equal spacing
// matter, so seconds-since-epoch style arithmetic on a proleptic calendar
// is sufficient.
inline bool parse_datetime(const std::string& s, long long& out) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
  char sep = 0;
  int n = std::sscanf(s.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &se);
  if (n != 3 && n < 6) return false;
  if (n >= 4 && sep != 'T' && sep != ' ') return false;
  if (mo < 1 || mo > 12 || d < 1 || d > 31) return false;
  // Days since a fixed epoch via the civil-from-days inverse (Howard Hinnant's
  // algorithm), then seconds.
  const int yy = y - (mo <= 2 ? 1 : 0);
  const long long era = (yy >= 0 ? yy : yy - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(yy - era * 400);
  const unsigned doy = (153u * (mo + (mo > 2 ? -3 : 9)) + 2u) / 5u + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  const long long days = era * 146097 + static_cast<long long>(doe) - 719468;
  out = days * 86400LL + h * 3600LL + mi * 60LL + se;
  return true;
}

}  // namespace detail

struct CsvSchema {
  std::string series_column = "series_id";
  std::string timestamp_column = "timestamp";
  std::string value_column = "value";
};

// Loads one variable per distinct series id. Timestamps must be integers or
// parseable datetimes at a constant sampling interval; cells absent from the
// file become masked points.
inline SeriesFrame load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("load_csv: cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw DataError("load_csv: empty file " + path);
  const auto cols = detail::split_csv_line(header);
  int ci_series = -1, ci_ts = -1, ci_val = -1;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (cols[i] == schema.series_column) ci_series = static_cast<int>(i);
    if (cols[i] == schema.timestamp_column) ci_ts = static_cast<int>(i);
    if (cols[i] == schema.value_column) ci_val = static_cast<int>(i);
  }
  if (ci_series < 0 || ci_ts < 0 || ci_val < 0) {
    throw DataError("load_csv: header of " + path + " lacks required columns (" +
                    schema.series_column + ", " + schema.timestamp_column + ", " +
                    schema.value_column + ")");
  }

  struct RawRow {
    std::string series;
    long long stamp;
    double value;
  };
  std::vector<RawRow> rows;
  std::string line;
  int line_no = 1;
  bool integer_stamps = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    const int needed = std::max(ci_series, std::max(ci_ts, ci_val));
    if (static_cast<int>(f.size()) <= needed) {
      throw DataError("load_csv: row " + std::to_string(line_no) + " has too few columns");
    }
    RawRow r;
    r.series = f[static_cast<std::size_t>(ci_series)];
    const std::string& ts = f[static_cast<std::size_t>(ci_ts)];
    long long stamp;
    if (detail::parse_int(ts, stamp)) {
      r.stamp = stamp;
    } else if (detail::parse_datetime(ts, stamp)) {
      r.stamp = stamp;
      integer_stamps = false;
    } else {
      throw DataError("load_csv: row " + std::to_string(line_no) + " has unparseable timestamp '" +
                      ts + "'");
    }
    if (!detail::parse_double(f[static_cast<std::size_t>(ci_val)], r.value)) {
      throw DataError("load_csv: row " + std::to_string(line_no) + " has non-numeric value '" +
                      f[static_cast<std::size_t>(ci_val)] + "'");
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw DataError("load_csv: no data rows in " + path);

  // Variable order follows first appearance; steps follow the sorted set of
  // distinct stamps, which must be evenly spaced.
  std::vector<std::string> series_order;
  std::map<std::string, int> series_index;
  std::set<long long> stamp_set;
  for (const RawRow& r : rows) {
    if (!series_index.count(r.series)) {
      series_index[r.series] = static_cast<int>(series_order.size());
      series_order.push_back(r.series);
    }
    stamp_set.insert(r.stamp);
  }
  std::vector<long long> stamps(stamp_set.begin(), stamp_set.end());
  if (stamps.size() >= 2) {
    const long long step = stamps[1] - stamps[0];
    if (step <= 0) throw DataError("load_csv: non-increasing timestamps");
    for (std::size_t i = 1; i < stamps.size(); ++i) {
      if (stamps[i] - stamps[i - 1] != step) {
        throw DataError("load_csv: irregular sampling interval between " +
                        std::to_string(stamps[i - 1]) + " and " + std::to_string(stamps[i]) +
                        (integer_stamps ? "" : " (datetime input)"));
      }
    }
  }
  std::map<long long, int> stamp_index;
  for (std::size_t i = 0; i < stamps.size(); ++i) stamp_index[stamps[i]] = static_cast<int>(i);

  const int n_vars = static_cast<int>(series_order.size());
  const int n_steps = static_cast<int>(stamps.size());
  std::vector<char> seen(static_cast<std::size_t>(n_vars) * n_steps, 0);
  std::vector<TimePoint> pts(static_cast<std::size_t>(n_vars) * n_steps);
  for (int v = 0; v < n_vars; ++v) {
    for (int t = 0; t < n_steps; ++t) {
      TimePoint& p = pts[static_cast<std::size_t>(v) * n_steps + t];
      p.variable = v;
      p.step = t;
      p.observed = false;
      p.value_known = false;  // a true gap: no ground truth exists
    }
  }
  for (const RawRow& r : rows) {
    const int v = series_index[r.series];
    const int t = stamp_index[r.stamp];
    char& flag = seen[static_cast<std::size_t>(v) * n_steps + t];
    if (flag) {
      throw DataError("load_csv: duplicate (series, timestamp) = (" + r.series + ", " +
                      std::to_string(r.stamp) + ")");
    }
    flag = 1;
    TimePoint& p = pts[static_cast<std::size_t>(v) * n_steps + t];
    p.value = r.value;
    p.observed = true;
    p.value_known = true;
  }
  return SeriesFrame(n_vars, n_steps, std::move(pts));
}

// Writes observed points in the load_csv schema. Round-trips exactly: values
// are printed with max_digits10 precision.
inline void write_csv(const SeriesFrame& frame, const std::string& path,
                      const CsvSchema& schema = {}) {
  std::ofstream out(path);
  if (!out) throw DataError("write_csv: cannot open " + path + " for writing");
  out << schema.series_column << ',' << schema.timestamp_column << ',' << schema.value_column
      << '\n';
  char buf[64];
  for (const TimePoint& p : frame.points()) {
    if (!p.observed) continue;
    std::snprintf(buf, sizeof(buf), "%.17g", p.value);
    out << p.variable << ',' << (frame.origin_step + p.step) << ',' << buf << '\n';
  }
  if (!out) throw DataError("write_csv: failed writing " + path);
}

// ---------------------------------------------------------------------------
// Task construction
// ---------------------------------------------------------------------------

// Cuts an (H + S)-step window out of the frame starting at `offset` (default:
// trailing window), re-masks the final S steps of every variable as
// to-be-inferred, and computes standardization stats from the observed points
// of the H segment only. Values of re-masked points are retained so training
// and evaluation can read the truth.
inline SeriesFrame make_forecast_task(const SeriesFrame& frame, const WindowTask& window,
                                      int offset = -1) {
  window.validate();
  const int span = window.history + window.horizon;
  if (span > frame.n_steps()) {
    throw DataError("make_forecast_task: window " + std::to_string(span) +
                    " exceeds frame length " + std::to_string(frame.n_steps()));
  }
  if (offset < 0) offset = frame.n_steps() - span;
  if (offset + span > frame.n_steps()) {
    throw DataError("make_forecast_task: offset " + std::to_string(offset) + " out of range");
  }
  std::vector<TimePoint> pts;
  pts.reserve(static_cast<std::size_t>(frame.n_variables()) * span);
  for (int v = 0; v < frame.n_variables(); ++v) {
    for (int t = 0; t < span; ++t) {
      const int id = frame.point_id(v, offset + t);
      TimePoint p = frame.point(id);
      p.step = t;
      if (t >= window.history) p.observed = false;  // horizon: to be inferred
      pts.push_back(p);
    }
  }
  SeriesFrame task(frame.n_variables(), span, std::move(pts));
  task.origin_step = frame.origin_step + offset;
  // Stats from the conditioning segment only; no leakage from the horizon.
  task.stats_.assign(static_cast<std::size_t>(task.n_variables()), VariableStats{});
  for (int v = 0; v < task.n_variables(); ++v) {
    double sum = 0.0, sumsq = 0.0;
    int n = 0;
    for (int t = 0; t < window.history; ++t) {
      const TimePoint& p = task.point(task.point_id(v, t));
      if (!p.observed) continue;
      sum += p.value;
      sumsq += p.value * p.value;
      ++n;
    }
    VariableStats s;
    if (n > 0) {
      s.mean = sum / n;
      double var = sumsq / n - s.mean * s.mean;
      if (var < 0.0) var = 0.0;
      s.stddev = n >= 2 ? std::max(std::sqrt(var), 1e-9) : 1.0;
    }
    task.stats_[static_cast<std::size_t>(v)] = s;
  }
  return task;
}

// Valid window offsets for evaluation, spaced by the task stride.
inline std::vector<int> enumerate_windows(const SeriesFrame& frame, const WindowTask& window) {
  window.validate();
  std::vector<int> offsets;
  const int span = window.history + window.horizon;
  for (int o = 0; o + span <= frame.n_steps(); o += window.stride) offsets.push_back(o);
  return offsets;
}

}  // namespace percdf
