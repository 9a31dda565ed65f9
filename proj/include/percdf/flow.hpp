#pragma once
// Deep Sigmoidal Flow marginals. Each layer maps x to a softmax-weighted
// mixture of sigmoids sigma(a_j x + b_j); inner layers pull the result back
// through logit so the stack composes, the final layer leaves it in (0,1).
// Positivity of every a_j (exponential reparameterization) makes the CDF
// strictly increasing, and the density follows from the chain rule through
// the stack. Two implementations share the formulas: a plain-double path for
// sampling and inversion, and a tape path for differentiable likelihoods.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "percdf/params.hpp"
#include "percdf/tensor.hpp"

namespace percdf {

struct FlowConfig {
  int flow_layers = 2;
  int flow_dim = 8;
  int ffn_layers = 2;  // conditioner depth
  int ffn_dim = 8;     // conditioner width

  int params_per_point() const { return 3 * flow_layers * flow_dim; }
};

// Raw parameter block for one point. Layout per layer: [a_raw | b | logits],
// each flow_dim wide; a = exp(a_raw).
struct FlowParams {
  int layers = 0;
  int dim = 0;
  std::vector<double> raw;

  const double* a_raw(int layer) const { return raw.data() + static_cast<std::size_t>(layer) * 3 * dim; }
  const double* b(int layer) const { return a_raw(layer) + dim; }
  const double* logits(int layer) const { return a_raw(layer) + 2 * dim; }
};

inline FlowParams make_flow_params(int layers, int dim, std::vector<double> raw) {
  if (static_cast<int>(raw.size()) != 3 * layers * dim) {
    throw ShapeError("flow: parameter block has wrong length");
  }
  return FlowParams{layers, dim, std::move(raw)};
}

namespace detail {

struct FlowLayerEval {
  double y;          // mixture output in (0,1)
  double log_deriv;  // log d(mixture)/d(input)
};

inline FlowLayerEval flow_layer(const FlowParams& p, int layer, double x) {
  const int J = p.dim;
  std::vector<double> s(static_cast<std::size_t>(J));
  softmax_inplace(p.logits(layer), J, s.data());
  double y = 0.0, deriv = 0.0;
  for (int j = 0; j < J; ++j) {
    const double a = std::exp(p.a_raw(layer)[j]);
    const double sig = stable_sigmoid(a * x + p.b(layer)[j]);
    y += s[static_cast<std::size_t>(j)] * sig;
    deriv += s[static_cast<std::size_t>(j)] * a * sig * (1.0 - sig);
  }
  return {y, std::log(deriv)};
}

}  // namespace detail

struct FlowEval {
  double u;        // CDF value in (0,1)
  double log_pdf;  // log dF/dx
};

inline FlowEval flow_cdf_logpdf(const FlowParams& p, double x) {
  if (!std::isfinite(x)) throw DomainError("flow: non-finite input " + std::to_string(x));
  double t = x;
  double log_pdf = 0.0;
  for (int k = 0; k < p.layers; ++k) {
    const auto layer = detail::flow_layer(p, k, t);
    log_pdf += layer.log_deriv;
    if (k + 1 < p.layers) {
      // Pull back through logit; its derivative contributes 1 / (y (1 - y)).
      log_pdf += -std::log(layer.y) - std::log(1.0 - layer.y);
      t = std::log(layer.y) - std::log(1.0 - layer.y);
    } else {
      t = layer.y;
    }
  }
  return {t, log_pdf};
}

inline double marginal_cdf(const FlowParams& p, double x) { return flow_cdf_logpdf(p, x).u; }
inline double marginal_log_pdf(const FlowParams& p, double x) { return flow_cdf_logpdf(p, x).log_pdf; }
inline double marginal_pdf(const FlowParams& p, double x) { return std::exp(marginal_log_pdf(p, x)); }

// Inverse CDF by bracketed bisection plus a few Newton polish steps. The CDF
// is strictly increasing, so this always converges; non-convergence after the
// iteration cap means broken parameters and raises.
inline double marginal_inverse_cdf(const FlowParams& p, double u) {
  if (!(u > 0.0 && u < 1.0)) {
    throw DomainError("flow: inverse requires u in (0,1), got " + std::to_string(u));
  }
  double lo = -1.0, hi = 1.0;
  int guard = 0;
  while (marginal_cdf(p, lo) > u && guard++ < 200) lo *= 2.0;
  guard = 0;
  while (marginal_cdf(p, hi) < u && guard++ < 200) hi *= 2.0;
  if (marginal_cdf(p, lo) > u || marginal_cdf(p, hi) < u) {
    throw DomainError("flow: failed to bracket the inverse");
  }
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 90; ++it) {
    x = 0.5 * (lo + hi);
    if (marginal_cdf(p, x) < u) {
      lo = x;
    } else {
      hi = x;
    }
  }
  for (int it = 0; it < 4; ++it) {
    const FlowEval e = flow_cdf_logpdf(p, x);
    const double pdf = std::exp(e.log_pdf);
    if (pdf <= 0.0) break;
    const double step = (e.u - u) / pdf;
    const double next = x - step;
    if (next > lo && next < hi) x = next;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Tape path: identical math over tape scalars, differentiable with respect to
// the parameter block (one [1 x 3*layers*dim] row emitted by the conditioner).
// ---------------------------------------------------------------------------

struct FlowEvalTape {
  Tensor u;
  Tensor log_pdf;
};

inline FlowEvalTape flow_cdf_logpdf_tape(Workspace& ws, const Tensor& param_row, int layers,
                                         int dim, double x) {
  if (!std::isfinite(x)) throw DomainError("flow: non-finite input " + std::to_string(x));
  if (param_row.cols() != 3 * layers * dim) {
    throw ShapeError("flow: parameter row has width " + std::to_string(param_row.cols()) +
                     ", expected " + std::to_string(3 * layers * dim));
  }
  Tape& tape = ws.tape();
  Tensor t = tape.scalar(x);
  Tensor log_pdf = tape.scalar(0.0);
  for (int k = 0; k < layers; ++k) {
    const int off = 3 * k * dim;
    Tensor a = exp(slice_cols(param_row, off, off + dim));
    Tensor b = slice_cols(param_row, off + dim, off + 2 * dim);
    Tensor s = softmax_lastdim(slice_cols(param_row, off + 2 * dim, off + 3 * dim));
    Tensor sig = sigmoid(add(mul(a, t), b));
    Tensor y = sum(mul(s, sig));
    Tensor one_minus_sig = add_const(scale(sig, -1.0), 1.0);
    Tensor deriv = sum(mul(mul(s, a), mul(sig, one_minus_sig)));
    log_pdf = add(log_pdf, log(deriv));
    if (k + 1 < layers) {
      Tensor log_y = log(y);
      Tensor log_1my = log(add_const(scale(y, -1.0), 1.0));
      log_pdf = sub(log_pdf, add(log_y, log_1my));
      t = sub(log_y, log_1my);
    } else {
      t = y;
    }
  }
  return {t, log_pdf};
}

// ---------------------------------------------------------------------------
// Conditioner: a small MLP from each encoded token to its parameter block.
// ---------------------------------------------------------------------------

inline void register_flow_conditioner_params(ParamStore& store, const FlowConfig& cfg,
                                             int token_dim, Rng& rng) {
  int in_dim = token_dim;
  for (int l = 0; l < cfg.ffn_layers; ++l) {
    store.create_weight("marg.ff" + std::to_string(l) + ".w", {in_dim, cfg.ffn_dim}, rng);
    store.create_zeros("marg.ff" + std::to_string(l) + ".b", {cfg.ffn_dim});
    in_dim = cfg.ffn_dim;
  }
  store.create_weight("marg.out.w", {in_dim, cfg.params_per_point()}, rng);
  store.create_zeros("marg.out.b", {cfg.params_per_point()});
}

// [n_tokens x token_dim] -> [n_tokens x params_per_point]
inline Tensor flow_conditioner(Workspace& ws, const Tensor& tokens, const FlowConfig& cfg) {
  Tensor h = tokens;
  for (int l = 0; l < cfg.ffn_layers; ++l) {
    const std::string p = "marg.ff" + std::to_string(l);
    h = relu(add(matmul(h, ws.param(p + ".w")), ws.param(p + ".b")));
  }
  return add(matmul(h, ws.param("marg.out.w")), ws.param("marg.out.b"));
}

inline FlowParams flow_params_from_row(const FlowConfig& cfg, std::span<const double> row) {
  return make_flow_params(cfg.flow_layers, cfg.flow_dim,
                          std::vector<double>(row.begin(), row.end()));
}

}  // namespace percdf
