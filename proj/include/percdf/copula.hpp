#pragma once
// Attentional copula: the conditional factorization c(u_1..u_d) =
// prod_i c(u_i | earlier u's), where each factor is a piecewise-constant
// density over `resolution` equal-width bins on (0,1). A factor's bin logits
// come from one multi-head attention of the target token over its
// conditioning window, whose keys and values carry the window tokens
// augmented with their already-realized u values; an empty window yields the
// unconditional first factor. Sampling draws a bin, then uniformly within it.

#include <cmath>
#include <string>
#include <vector>

#include "percdf/attention.hpp"
#include "percdf/params.hpp"
#include "percdf/tensor.hpp"

namespace percdf {

struct CopulaConfig {
  double u_min = 0.01;
  double u_max = 0.99;
  int attention_layers = 3;  // depth of the residual query trunk
  int heads = 3;
  int attn_dim = 16;
  int ffn_dim = 16;
  int ffn_layers = 3;
  int resolution = 50;

  void validate() const {
    if (!(0.0 < u_min && u_min < u_max && u_max < 1.0)) {
      throw ShapeError("copula: need 0 < u_min < u_max < 1");
    }
    if (resolution < 2) throw ShapeError("copula: resolution must be >= 2");
  }

  double clamp_u(double u) const { return std::min(std::max(u, u_min), u_max); }

  int bin_of(double u) const {
    const int b = static_cast<int>(u * resolution);
    return std::min(std::max(b, 0), resolution - 1);
  }
};

inline void register_copula_params(ParamStore& store, const CopulaConfig& cfg, int token_dim,
                                   Rng& rng) {
  cfg.validate();
  for (int l = 0; l < cfg.attention_layers; ++l) {
    register_ffn_params(store, "cop.trunk" + std::to_string(l), token_dim, cfg.ffn_dim, rng);
  }
  register_attention_params(store, "cop.attn", token_dim, token_dim + 1, cfg.heads, cfg.attn_dim,
                            token_dim, rng);
  int in_dim = token_dim;
  for (int l = 0; l < cfg.ffn_layers; ++l) {
    store.create_weight("cop.head" + std::to_string(l) + ".w", {in_dim, cfg.ffn_dim}, rng);
    store.create_zeros("cop.head" + std::to_string(l) + ".b", {cfg.ffn_dim});
    in_dim = cfg.ffn_dim;
  }
  store.create_weight("cop.out.w", {in_dim, cfg.resolution}, rng);
  store.create_zeros("cop.out.b", {cfg.resolution});
}

// Bin logits for one factor. target [1 x D]; window_tokens [w x D] plus their
// realized u column [w x 1]; w may be zero (first factor).
inline Tensor copula_factor_logits(Workspace& ws, const CopulaConfig& cfg, const Tensor& target,
                                   const Tensor* window_tokens, const Tensor* window_u) {
  Tensor q = target;
  for (int l = 0; l < cfg.attention_layers; ++l) {
    q = ffn_block(ws, "cop.trunk" + std::to_string(l), q);
  }
  if (window_tokens != nullptr && window_tokens->rows() > 0) {
    Tensor kv = concat({*window_tokens, *window_u}, 1);
    q = attention_block(ws, "cop.attn", q, kv, cfg.heads, cfg.attn_dim, AttentionStage::Decoder);
  }
  Tensor h = q;
  for (int l = 0; l < cfg.ffn_layers; ++l) {
    const std::string p = "cop.head" + std::to_string(l);
    h = relu(add(matmul(h, ws.param(p + ".w")), ws.param(p + ".b")));
  }
  return add(matmul(h, ws.param("cop.out.w")), ws.param("cop.out.b"));
}

// log of softmax(logits)[bin] via logsumexp with a detached max shift.
inline Tensor log_bin_mass(const Tensor& logits, int bin) {
  double mx = logits.at(0);
  for (std::int64_t i = 1; i < logits.numel(); ++i) mx = std::max(mx, logits.at(i));
  Tensor shifted = add_const(logits, -mx);
  Tensor lse = log(sum(exp(shifted)));
  Tensor picked = sum(slice_cols(shifted, bin, bin + 1));
  return sub(picked, lse);
}

// ---------------------------------------------------------------------------
// Double-path pieces used during sampling.
// ---------------------------------------------------------------------------

struct BinDistribution {
  std::vector<double> masses;  // softmax of the factor logits; sums to one

  double log_density(double u, int resolution) const {
    const int b = std::min(std::max(static_cast<int>(u * resolution), 0), resolution - 1);
    return std::log(masses[static_cast<std::size_t>(b)] * resolution);
  }
};

inline BinDistribution bin_distribution_from_logits(std::span<const double> logits) {
  BinDistribution d;
  d.masses.resize(logits.size());
  detail::softmax_inplace(logits.data(), static_cast<int>(logits.size()), d.masses.data());
  return d;
}

// Factorized copula log density from per-factor distributions: each factor
// contributes log(resolution * mass of u's bin). Uniform masses give zero,
// the independence copula.
inline double copula_log_density(const std::vector<double>& u_ordered,
                                 const std::vector<BinDistribution>& factors, int resolution) {
  if (u_ordered.size() != factors.size()) {
    throw ShapeError("copula: one factor distribution per u value required");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < u_ordered.size(); ++i) {
    if (!(u_ordered[i] > 0.0 && u_ordered[i] < 1.0)) {
      throw DomainError("copula: u outside (0,1): " + std::to_string(u_ordered[i]));
    }
    acc += factors[i].log_density(u_ordered[i], resolution);
  }
  return acc;
}

// Draw a bin proportional to the masses, then uniformly inside the bin.
inline double sample_u(const BinDistribution& d, int resolution, Rng& rng) {
  const double r = rng.uniform01();
  double cum = 0.0;
  int bin = resolution - 1;
  for (int b = 0; b < resolution; ++b) {
    cum += d.masses[static_cast<std::size_t>(b)];
    if (r < cum) {
      bin = b;
      break;
    }
  }
  return (bin + rng.uniform01()) / resolution;
}

}  // namespace percdf
