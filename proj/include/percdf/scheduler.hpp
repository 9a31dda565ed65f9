#pragma once
// Inference ordering. Every plan places observed points first; the missing
// block is then ordered randomly (the training mode that keeps the copula
// factorization approximately permutation invariant) or by midpoint depth:
// per variable, each maximal run of missing steps is bisected recursively and
// shallower depths are inferred first. The max-interval variant additionally
// keeps each newly ordered point within k_max steps of an already available
// point of its own variable, which turns the order autoregressive near long
// gaps instead of jumping to a distant midpoint.

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "percdf/data.hpp"
#include "percdf/rng.hpp"

namespace percdf {

enum class PermutationMode { Midpoint, Random, MidpointMaxInterval };

inline const char* permutation_mode_name(PermutationMode m) {
  switch (m) {
    case PermutationMode::Midpoint: return "midpoint";
    case PermutationMode::Random: return "random";
    case PermutationMode::MidpointMaxInterval: return "midpoint_max_interval";
  }
  return "?";
}

inline PermutationMode parse_permutation_mode(const std::string& s) {
  if (s == "midpoint") return PermutationMode::Midpoint;
  if (s == "random") return PermutationMode::Random;
  if (s == "midpoint_max_interval") return PermutationMode::MidpointMaxInterval;
  throw DataError("unknown permutation mode: " + s);
}

struct SchedulerConfig {
  PermutationMode mode = PermutationMode::Midpoint;
  int window_k = 5;      // neighbours per side per variable in local windows
  int max_interval = 3;  // k_max for MidpointMaxInterval
  bool global_windows = false;
};

struct PermutationPlan {
  std::vector<int> order;     // point ids; observed block first, then missing
  std::vector<int> depth;     // per point id; observed points carry -1
  std::vector<int> position;  // per point id: index into order
  std::map<int, std::vector<int>> windows;  // missing id -> conditioning ids
  PermutationMode mode = PermutationMode::Midpoint;
  int max_interval = 0;
  int n_observed = 0;
};

// Midpoint-inference depth per point: within each maximal run of missing
// steps (bounded by observations or the series edges) the midpoint gets depth
// 0 and the two sub-runs recurse one level deeper. Observed points get -1.
inline std::vector<int> assign_depths(const SeriesFrame& frame) {
  std::vector<int> depth(static_cast<std::size_t>(frame.n_points()), -1);
  for (int v = 0; v < frame.n_variables(); ++v) {
    int t = 0;
    while (t < frame.n_steps()) {
      if (frame.point(frame.point_id(v, t)).observed) {
        ++t;
        continue;
      }
      int hi = t;
      while (hi + 1 < frame.n_steps() && !frame.point(frame.point_id(v, hi + 1)).observed) ++hi;
      // Recurse over [t, hi]; even-length gaps take the left-of-center index.
      struct Span {
        int lo, hi, d;
      };
      std::vector<Span> stack{{t, hi, 0}};
      while (!stack.empty()) {
        const Span s = stack.back();
        stack.pop_back();
        if (s.lo > s.hi) continue;
        const int mid = (s.lo + s.hi) / 2;
        depth[static_cast<std::size_t>(frame.point_id(v, mid))] = s.d;
        stack.push_back({s.lo, mid - 1, s.d + 1});
        stack.push_back({mid + 1, s.hi, s.d + 1});
      }
      t = hi + 1;
    }
  }
  return depth;
}

// Conditioning window for one missing point: per variable, the k temporally
// closest eligible points on each side of the target's step, where eligible
// means ordered before the target in the permutation (and usable, when a mask
// is supplied). Same-step points of other variables count as the past side;
// ties in distance also break toward the past.
inline std::vector<int> local_window(const SeriesFrame& frame, const std::vector<int>& position,
                                     int point, int k, const std::vector<char>* usable = nullptr) {
  if (k < 1) throw DataError("local_window: k must be >= 1");
  const TimePoint& target = frame.point(point);
  const int my_pos = position[static_cast<std::size_t>(point)];
  std::vector<int> out;
  for (int v = 0; v < frame.n_variables(); ++v) {
    // (distance, step) pairs per side; smaller distance first, past preferred.
    std::vector<std::pair<int, int>> past, future;
    for (int t = 0; t < frame.n_steps(); ++t) {
      const int id = frame.point_id(v, t);
      if (id == point) continue;
      if (position[static_cast<std::size_t>(id)] >= my_pos) continue;
      if (usable && !(*usable)[static_cast<std::size_t>(id)]) continue;
      if (t <= target.step) {
        past.emplace_back(target.step - t, id);
      } else {
        future.emplace_back(t - target.step, id);
      }
    }
    std::sort(past.begin(), past.end());
    std::sort(future.begin(), future.end());
    for (int i = 0; i < k && i < static_cast<int>(past.size()); ++i) out.push_back(past[i].second);
    for (int i = 0; i < k && i < static_cast<int>(future.size()); ++i) {
      out.push_back(future[i].second);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// All usable points ordered before the target; the global-attention window.
inline std::vector<int> global_window(const SeriesFrame& frame, const std::vector<int>& position,
                                      int point, const std::vector<char>* usable = nullptr) {
  const int my_pos = position[static_cast<std::size_t>(point)];
  std::vector<int> out;
  for (int id = 0; id < frame.n_points(); ++id) {
    if (id == point || position[static_cast<std::size_t>(id)] >= my_pos) continue;
    if (usable && !(*usable)[static_cast<std::size_t>(id)]) continue;
    out.push_back(id);
  }
  return out;
}

inline PermutationPlan build_permutation(const SeriesFrame& frame, const SchedulerConfig& cfg,
                                         std::uint64_t seed) {
  PermutationPlan plan;
  plan.mode = cfg.mode;
  plan.max_interval = cfg.mode == PermutationMode::MidpointMaxInterval ? cfg.max_interval : 0;
  plan.depth = assign_depths(frame);

  // Observed block keeps input order.
  for (int id = 0; id < frame.n_points(); ++id) {
    if (frame.point(id).observed) plan.order.push_back(id);
  }
  plan.n_observed = static_cast<int>(plan.order.size());

  std::vector<int> missing = frame.missing_ids();
  Rng rng(mix_seed(seed, 0x706c616e));

  if (cfg.mode == PermutationMode::Random) {
    rng.shuffle(missing);
    plan.order.insert(plan.order.end(), missing.begin(), missing.end());
  } else {
    // Random keys make the order uniform within equal depth.
    std::vector<double> key(static_cast<std::size_t>(frame.n_points()), 0.0);
    for (int id : missing) key[static_cast<std::size_t>(id)] = rng.uniform01();

    // Anchored steps per variable: observed now, ordered missing as we go.
    std::vector<std::vector<char>> anchored(static_cast<std::size_t>(frame.n_variables()),
                                            std::vector<char>(static_cast<std::size_t>(frame.n_steps()), 0));
    for (int id = 0; id < frame.n_points(); ++id) {
      const TimePoint& p = frame.point(id);
      if (p.observed) anchored[static_cast<std::size_t>(p.variable)][static_cast<std::size_t>(p.step)] = 1;
    }
    auto near_anchor = [&](int variable, int step, int k_max) {
      const auto& a = anchored[static_cast<std::size_t>(variable)];
      for (int d = 1; d <= k_max; ++d) {
        if (step - d >= 0 && a[static_cast<std::size_t>(step - d)]) return true;
        if (step + d < frame.n_steps() && a[static_cast<std::size_t>(step + d)]) return true;
      }
      return false;
    };

    std::vector<char> placed(static_cast<std::size_t>(frame.n_points()), 0);
    const bool limited = cfg.mode == PermutationMode::MidpointMaxInterval;
    for (std::size_t step_count = 0; step_count < missing.size(); ++step_count) {
      int best = -1;
      bool best_qualifies = false;
      for (int id : missing) {
        if (placed[static_cast<std::size_t>(id)]) continue;
        const TimePoint& p = frame.point(id);
        const bool qualifies = !limited || near_anchor(p.variable, p.step, cfg.max_interval);
        if (qualifies && !best_qualifies) {
          best = id;
          best_qualifies = true;
          continue;
        }
        if (qualifies != best_qualifies) continue;
        if (best == -1) {
          best = id;
          continue;
        }
        const std::size_t bi = static_cast<std::size_t>(best), ii = static_cast<std::size_t>(id);
        if (std::make_tuple(plan.depth[ii], key[ii], id) <
            std::make_tuple(plan.depth[bi], key[bi], best)) {
          best = id;
        }
      }
      placed[static_cast<std::size_t>(best)] = 1;
      plan.order.push_back(best);
      const TimePoint& p = frame.point(best);
      anchored[static_cast<std::size_t>(p.variable)][static_cast<std::size_t>(p.step)] = 1;
    }
  }

  plan.position.assign(static_cast<std::size_t>(frame.n_points()), -1);
  for (std::size_t i = 0; i < plan.order.size(); ++i) {
    plan.position[static_cast<std::size_t>(plan.order[i])] = static_cast<int>(i);
  }

  for (int id : frame.missing_ids()) {
    plan.windows[id] = cfg.global_windows
                           ? global_window(frame, plan.position, id)
                           : local_window(frame, plan.position, id, cfg.window_k);
  }
  return plan;
}

// Diagnostic CSV: one row per point with depth, order position and window
// size, for inspecting conditioning patterns.
inline void write_plan_csv(const PermutationPlan& plan, const SeriesFrame& frame,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("write_plan_csv: cannot open " + path);
  out << "point_id,variable,timestamp,depth,position,window_size\n";
  for (int id = 0; id < frame.n_points(); ++id) {
    const TimePoint& p = frame.point(id);
    const auto it = plan.windows.find(id);
    const std::size_t wsize = it == plan.windows.end() ? 0 : it->second.size();
    out << id << ',' << p.variable << ',' << p.step << ',' << plan.depth[static_cast<std::size_t>(id)]
        << ',' << plan.position[static_cast<std::size_t>(id)] << ',' << wsize << '\n';
  }
}

}  // namespace percdf
