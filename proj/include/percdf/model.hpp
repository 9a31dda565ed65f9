#pragma once
// Full forecaster: embedding, encoder (latent-bottleneck or global baseline),
// marginal-flow conditioner and attentional copula, glued to the permutation
// scheduler and the variance guard. Owns the parameters; forward passes run
// on caller-provided or internal workspaces.
//
// The joint negative log likelihood follows the Sklar split: the loss is
// built as -(copula term + sum of marginal log densities) / n, and both
// addends are exposed, so the decomposition is an identity of construction
// rather than a numerical coincidence.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "percdf/copula.hpp"
#include "percdf/data.hpp"
#include "percdf/embedding.hpp"
#include "percdf/encoder.hpp"
#include "percdf/flow.hpp"
#include "percdf/guard.hpp"
#include "percdf/params.hpp"
#include "percdf/scheduler.hpp"

namespace percdf {

struct ModelConfig {
  EmbedConfig embed;
  PerceiverConfig perceiver;
  GlobalEncoderConfig baseline;
  CopulaConfig copula;
  FlowConfig flow;
  SchedulerConfig scheduler;
  GuardConfig guard;
  bool use_perceiver_encoder = true;
};

struct NllParts {
  Tensor loss;           // scalar: -(copula + marginal) / n_points
  Tensor copula_term;    // sum of factor log densities
  Tensor marginal_term;  // sum of marginal log pdfs
  int n_points = 0;
};

struct ForecastSamples {
  std::vector<int> point_ids;  // ascending frame ids of the sampled points
  std::vector<int> variables;
  std::vector<int> steps;                  // absolute steps (origin applied)
  std::vector<std::vector<double>> draws;  // [n_draws][n_points], series units
  std::vector<GuardDecision> guard_log;

  int n_draws() const { return static_cast<int>(draws.size()); }
  int n_points() const { return static_cast<int>(point_ids.size()); }
};

inline void write_samples_csv(const ForecastSamples& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("write_samples_csv: cannot open " + path);
  out << "draw,variable_index,timestamp,value\n";
  char buf[64];
  for (int d = 0; d < s.n_draws(); ++d) {
    for (int i = 0; i < s.n_points(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g",
                    s.draws[static_cast<std::size_t>(d)][static_cast<std::size_t>(i)]);
      out << d << ',' << s.variables[static_cast<std::size_t>(i)] << ','
          << s.steps[static_cast<std::size_t>(i)] << ',' << buf << '\n';
    }
  }
}

inline ForecastSamples load_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("load_samples_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("load_samples_csv: empty file " + path);
  struct Row {
    int draw, variable, step;
    double value;
  };
  std::vector<Row> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 4) throw DataError("load_samples_csv: bad row " + std::to_string(line_no));
    long long d, v, t;
    double x;
    if (!detail::parse_int(f[0], d) || !detail::parse_int(f[1], v) || !detail::parse_int(f[2], t) ||
        !detail::parse_double(f[3], x)) {
      throw DataError("load_samples_csv: unparseable row " + std::to_string(line_no));
    }
    rows.push_back({static_cast<int>(d), static_cast<int>(v), static_cast<int>(t), x});
  }
  ForecastSamples s;
  std::map<std::pair<int, int>, int> col;
  int max_draw = -1;
  for (const Row& r : rows) {
    max_draw = std::max(max_draw, r.draw);
    col.emplace(std::make_pair(r.variable, r.step), 0);
  }
  int idx = 0;
  for (auto& [key, c] : col) {
    c = idx++;
    s.variables.push_back(key.first);
    s.steps.push_back(key.second);
    s.point_ids.push_back(c);
  }
  s.draws.assign(static_cast<std::size_t>(max_draw + 1),
                 std::vector<double>(col.size(), std::nan("")));
  for (const Row& r : rows) {
    s.draws[static_cast<std::size_t>(r.draw)]
           [static_cast<std::size_t>(col[{r.variable, r.step}])] = r.value;
  }
  return s;
}

// Plain-double snapshot of one encode pass: token vectors, per-point flow
// parameters and the (clamped) u of every observed point. Enough to run the
// sequential sampler without touching the tape that produced it.
struct EncodeSnapshot {
  int dim = 0;
  std::vector<double> z_vals;           // [n_points * dim]
  std::vector<FlowParams> flow;         // per point
  std::vector<double> u_observed;       // per point; valid where observed
  std::vector<double> input_variance;   // per variable, standardized units

  std::vector<double> token_row(int id) const {
    return std::vector<double>(z_vals.begin() + static_cast<std::ptrdiff_t>(id) * dim,
                               z_vals.begin() + static_cast<std::ptrdiff_t>(id + 1) * dim);
  }
};

class Forecaster;

// Computes conditional bin distributions against a fixed snapshot. Keeps one
// workspace alive across calls and renews it periodically so the scratch tape
// stays small on long horizons.
class FactorEvaluator {
 public:
  FactorEvaluator(ParamStore* store, const CopulaConfig& cfg, const EncodeSnapshot& snap)
      : store_(store), cfg_(&cfg), snap_(&snap) { renew(); }

  BinDistribution operator()(int point_id, const std::vector<int>& window,
                             const std::vector<double>& u_real) {
    if (++calls_ > 16) renew();
    Tensor target = ws_->constant({1, snap_->dim}, snap_->token_row(point_id));
    Tensor logits;
    if (window.empty()) {
      logits = copula_factor_logits(*ws_, *cfg_, target, nullptr, nullptr);
    } else {
      std::vector<double> wz, wu;
      wz.reserve(window.size() * static_cast<std::size_t>(snap_->dim));
      for (int j : window) {
        const auto row = snap_->token_row(j);
        wz.insert(wz.end(), row.begin(), row.end());
        wu.push_back(u_real[static_cast<std::size_t>(j)]);
      }
      Tensor wz_t = ws_->constant({static_cast<int>(window.size()), snap_->dim}, std::move(wz));
      Tensor wu_t = ws_->constant({static_cast<int>(window.size()), 1}, std::move(wu));
      logits = copula_factor_logits(*ws_, *cfg_, target, &wz_t, &wu_t);
    }
    return bin_distribution_from_logits(logits.values());
  }

 private:
  void renew() {
    ws_ = std::make_unique<Workspace>(store_);
    calls_ = 0;
  }

  ParamStore* store_;
  const CopulaConfig* cfg_;
  const EncodeSnapshot* snap_;
  std::unique_ptr<Workspace> ws_;
  int calls_ = 0;
};

class Forecaster {
 public:
  Forecaster(ModelConfig cfg, int n_variables, std::uint64_t seed)
      : cfg_(std::move(cfg)), n_variables_(n_variables) {
    cfg_.embed.validate();
    cfg_.copula.validate();
    Rng rng(mix_seed(seed, 0x696e6974));
    register_embed_params(store_, cfg_.embed, n_variables_, rng);
    if (cfg_.use_perceiver_encoder) {
      register_perceiver_params(store_, cfg_.perceiver, cfg_.embed.token_dim, rng);
    } else {
      register_global_encoder_params(store_, cfg_.baseline, cfg_.embed.token_dim, rng);
    }
    register_copula_params(store_, cfg_.copula, cfg_.embed.token_dim, rng);
    register_flow_conditioner_params(store_, cfg_.flow, cfg_.embed.token_dim, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& config() { return cfg_; }
  int n_variables() const { return n_variables_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  TokenSet encode(Workspace& ws, const SeriesFrame& frame) const {
    TokenSet tokens = embed(ws, frame, cfg_.embed);
    return cfg_.use_perceiver_encoder ? perceiver_encode(ws, tokens, cfg_.perceiver)
                                      : global_encode_baseline(ws, tokens, cfg_.baseline);
  }

  PermutationPlan plan_for(const SeriesFrame& frame, std::uint64_t seed) const {
    return build_permutation(frame, cfg_.scheduler, seed);
  }

  // Differentiable joint NLL of the missing points with known truth, averaged
  // per point. The plan must order every one of them after its window.
  NllParts joint_nll(Workspace& ws, const SeriesFrame& frame, const PermutationPlan& plan) const {
    TokenSet z = encode(ws, frame);
    Tensor flow_rows = flow_conditioner(ws, z.embeddings, cfg_.flow);
    const int n = frame.n_points();

    // Clamped u for every point whose value is known: observed points and
    // re-masked truth carriers feed conditioning windows; genuine data gaps
    // cannot contribute and are filtered from likelihood windows.
    std::vector<Tensor> u_scalar(static_cast<std::size_t>(n));
    std::vector<Tensor> logpdf(static_cast<std::size_t>(n));
    std::vector<char> has_u(static_cast<std::size_t>(n), 0);
    for (int id = 0; id < n; ++id) {
      if (!frame.point(id).value_known) continue;
      Tensor row = slice_rows(flow_rows, id, id + 1);
      const FlowEvalTape e = flow_cdf_logpdf_tape(ws, row, cfg_.flow.flow_layers,
                                                  cfg_.flow.flow_dim, frame.standardized(id));
      u_scalar[static_cast<std::size_t>(id)] = clamp_tape(ws, e.u);
      logpdf[static_cast<std::size_t>(id)] = e.log_pdf;
      has_u[static_cast<std::size_t>(id)] = 1;
    }

    Tensor u_col;  // [n x 1]; zeros where unknown (never gathered)
    {
      std::vector<Tensor> cells(static_cast<std::size_t>(n));
      for (int id = 0; id < n; ++id) {
        cells[static_cast<std::size_t>(id)] = has_u[static_cast<std::size_t>(id)]
                                                  ? u_scalar[static_cast<std::size_t>(id)]
                                                  : ws.tape().scalar(0.0);
      }
      u_col = reshape(concat(cells, 0), {n, 1});
    }

    std::vector<Tensor> copula_terms;
    std::vector<Tensor> marginal_terms;
    int covered = 0;
    for (std::size_t pos = static_cast<std::size_t>(plan.n_observed); pos < plan.order.size();
         ++pos) {
      const int id = plan.order[pos];
      if (!frame.point(id).value_known) continue;
      const auto wit = plan.windows.find(id);
      if (wit == plan.windows.end()) {
        throw DataError("joint_nll: plan lacks a window for point " + std::to_string(id));
      }
      std::vector<int> window;
      for (int j : wit->second) {
        if (has_u[static_cast<std::size_t>(j)]) window.push_back(j);
      }
      Tensor target = slice_rows(z.embeddings, id, id + 1);
      Tensor logits;
      if (window.empty()) {
        logits = copula_factor_logits(ws, cfg_.copula, target, nullptr, nullptr);
      } else {
        Tensor wz = take_rows(z.embeddings, window);
        Tensor wu = take_rows(u_col, window);
        logits = copula_factor_logits(ws, cfg_.copula, target, &wz, &wu);
      }
      const double u_val = u_scalar[static_cast<std::size_t>(id)].item();
      Tensor term = log_bin_mass(logits, cfg_.copula.bin_of(u_val));
      if (!std::isfinite(term.item()) ||
          !std::isfinite(logpdf[static_cast<std::size_t>(id)].item())) {
        throw DataError("joint_nll: non-finite likelihood term at point " + std::to_string(id));
      }
      copula_terms.push_back(term);
      marginal_terms.push_back(logpdf[static_cast<std::size_t>(id)]);
      ++covered;
    }
    if (covered == 0) throw DataError("joint_nll: no missing points with known truth");

    NllParts parts;
    parts.n_points = covered;
    parts.copula_term = add_const(sum(concat(copula_terms, 0)),
                                  covered * std::log(static_cast<double>(cfg_.copula.resolution)));
    parts.marginal_term = sum(concat(marginal_terms, 0));
    parts.loss = scale(add(parts.copula_term, parts.marginal_term), -1.0 / covered);
    if (!std::isfinite(parts.loss.item())) throw DataError("joint_nll: non-finite loss");
    return parts;
  }

  EncodeSnapshot encode_snapshot(const SeriesFrame& frame) {
    EncodeSnapshot snap;
    snap.dim = cfg_.embed.token_dim;
    Workspace ws(&store_);
    TokenSet z = encode(ws, frame);
    Tensor rows = flow_conditioner(ws, z.embeddings, cfg_.flow);
    snap.z_vals.assign(z.embeddings.values().begin(), z.embeddings.values().end());
    const int w = cfg_.flow.params_per_point();
    snap.flow.resize(static_cast<std::size_t>(frame.n_points()));
    snap.u_observed.assign(static_cast<std::size_t>(frame.n_points()), 0.0);
    for (int id = 0; id < frame.n_points(); ++id) {
      snap.flow[static_cast<std::size_t>(id)] = flow_params_from_row(
          cfg_.flow,
          rows.values().subspan(static_cast<std::size_t>(id) * w, static_cast<std::size_t>(w)));
      if (frame.point(id).observed) {
        snap.u_observed[static_cast<std::size_t>(id)] = cfg_.copula.clamp_u(
            marginal_cdf(snap.flow[static_cast<std::size_t>(id)], frame.standardized(id)));
      }
    }
    snap.input_variance.resize(static_cast<std::size_t>(frame.n_variables()));
    for (int v = 0; v < frame.n_variables(); ++v) {
      snap.input_variance[static_cast<std::size_t>(v)] = frame.observed_variance(v);
    }
    return snap;
  }

  // Sequential ancestral sampling along the plan order. Windows form on the
  // fly from the points actually usable, so a guard-masked point disappears
  // from every later window exactly as if the scheduler had never seen it.
  ForecastSamples sample_missing(const SeriesFrame& frame, const PermutationPlan& plan,
                                 int n_draws, std::uint64_t seed) {
    if (n_draws < 1) throw DataError("sample_missing: n_draws must be >= 1");
    const int n = frame.n_points();
    const EncodeSnapshot snap = encode_snapshot(frame);

    ForecastSamples out;
    std::vector<int> column(static_cast<std::size_t>(n), -1);
    for (int id = 0; id < n; ++id) {
      if (!frame.point(id).observed) {
        column[static_cast<std::size_t>(id)] = static_cast<int>(out.point_ids.size());
        out.point_ids.push_back(id);
        out.variables.push_back(frame.point(id).variable);
        out.steps.push_back(frame.origin_step + frame.point(id).step);
      }
    }

    out.draws.assign(static_cast<std::size_t>(n_draws),
                     std::vector<double>(out.point_ids.size(), 0.0));
    for (int d = 0; d < n_draws; ++d) {
      Rng rng(mix_seed(seed, 0xd4a60000ULL + static_cast<std::uint64_t>(d)));
      std::vector<char> usable(static_cast<std::size_t>(n), 0);
      for (int id = 0; id < n; ++id) {
        usable[static_cast<std::size_t>(id)] = frame.point(id).observed ? 1 : 0;
      }
      std::vector<double> u_real = snap.u_observed;
      FactorEvaluator factor(&store_, cfg_.copula, snap);

      for (std::size_t pos = static_cast<std::size_t>(plan.n_observed); pos < plan.order.size();
           ++pos) {
        const int id = plan.order[pos];
        const TimePoint& p = frame.point(id);
        const std::vector<int> window =
            cfg_.scheduler.global_windows
                ? global_window(frame, plan.position, id, &usable)
                : local_window(frame, plan.position, id, cfg_.scheduler.window_k, &usable);
        const BinDistribution dist = factor(id, window, u_real);

        std::vector<double> drawn_u;
        auto sampler = [&]() {
          const double u = cfg_.copula.clamp_u(sample_u(dist, cfg_.copula.resolution, rng));
          drawn_u.push_back(u);
          return marginal_inverse_cdf(snap.flow[static_cast<std::size_t>(id)], u);
        };
        const GuardResult gr = guard_point(
            sampler, snap.input_variance[static_cast<std::size_t>(p.variable)], cfg_.guard);
        if (cfg_.guard.enabled) {
          out.guard_log.push_back({id, snap.input_variance[static_cast<std::size_t>(p.variable)],
                                   gr.probe_variance, gr.masked});
        }
        u_real[static_cast<std::size_t>(id)] = drawn_u.front();
        usable[static_cast<std::size_t>(id)] = gr.masked ? 0 : 1;
        out.draws[static_cast<std::size_t>(d)]
                 [static_cast<std::size_t>(column[static_cast<std::size_t>(id)])] =
            frame.destandardize(p.variable, gr.value);
      }
    }
    return out;
  }

  // Training-shaped forward pass with exact accounting and bounded memory:
  // encode once, then rebuild each copula factor on a scratch workspace and
  // merge the ledgers. No backward pass, no parameter updates.
  MemoryLedger measure_forward(const SeriesFrame& frame, const PermutationPlan& plan) {
    MemoryLedger total;
    total.parameter_scalars = store_.total_scalars();

    EncodeSnapshot snap;
    snap.dim = cfg_.embed.token_dim;
    std::vector<double> u_vals(static_cast<std::size_t>(frame.n_points()), 0.0);
    {
      Workspace ws(&store_);
      TokenSet z = encode(ws, frame);
      Tensor rows = flow_conditioner(ws, z.embeddings, cfg_.flow);
      for (int id = 0; id < frame.n_points(); ++id) {
        if (!frame.point(id).value_known) continue;
        const FlowEvalTape e =
            flow_cdf_logpdf_tape(ws, slice_rows(rows, id, id + 1), cfg_.flow.flow_layers,
                                 cfg_.flow.flow_dim, frame.standardized(id));
        u_vals[static_cast<std::size_t>(id)] = cfg_.copula.clamp_u(e.u.item());
      }
      snap.z_vals.assign(z.embeddings.values().begin(), z.embeddings.values().end());
      total.merge(ws.ledger());
    }

    for (std::size_t pos = static_cast<std::size_t>(plan.n_observed); pos < plan.order.size();
         ++pos) {
      const int id = plan.order[pos];
      const auto wit = plan.windows.find(id);
      if (wit == plan.windows.end()) continue;
      const std::vector<int>& window = wit->second;
      Workspace ws(&store_);
      Tensor target = ws.constant({1, snap.dim}, snap.token_row(id));
      if (window.empty()) {
        copula_factor_logits(ws, cfg_.copula, target, nullptr, nullptr);
      } else {
        std::vector<double> wz, wu;
        for (int j : window) {
          const auto row = snap.token_row(j);
          wz.insert(wz.end(), row.begin(), row.end());
          wu.push_back(u_vals[static_cast<std::size_t>(j)]);
        }
        Tensor wz_t = ws.constant({static_cast<int>(window.size()), snap.dim}, std::move(wz));
        Tensor wu_t = ws.constant({static_cast<int>(window.size()), 1}, std::move(wu));
        copula_factor_logits(ws, cfg_.copula, target, &wz_t, &wu_t);
      }
      total.merge(ws.ledger());
    }
    return total;
  }

 private:
  Tensor clamp_tape(Workspace& ws, const Tensor& u) const {
    (void)ws;
    // lo + relu(u - lo) - relu(u - hi): identity on [lo, hi], saturates outside.
    const double lo = cfg_.copula.u_min, hi = cfg_.copula.u_max;
    Tensor r1 = relu(add_const(u, -lo));
    Tensor r2 = relu(add_const(u, -hi));
    return add_const(sub(r1, r2), lo);
  }

  ModelConfig cfg_;
  int n_variables_;
  ParamStore store_;
};

}  // namespace percdf
