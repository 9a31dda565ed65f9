#pragma once
// Pre-processor: one token per time point. Each token concatenates the
// standardized value (zeroed when masked), a learned per-variable embedding
// and an explicit 0/1 mask feature, lifts the result to token_dim, adds a
// sinusoidal positional encoding of the step and runs a small feedforward
// stack. Masked points therefore carry position and identity but no value.

#include <cmath>
#include <string>
#include <vector>

#include "percdf/data.hpp"
#include "percdf/params.hpp"
#include "percdf/tensor.hpp"

namespace percdf {

struct EmbedConfig {
  int series_embed_dim = 5;
  int token_dim = 48;
  int input_encoder_layers = 3;
  double positional_base = 10000.0;
  double dropout = 0.0;

  void validate() const {
    if (token_dim % 2 != 0) throw ShapeError("embed: token_dim must be even for sin/cos pairs");
    if (dropout < 0.0 || dropout >= 1.0) throw ShapeError("embed: dropout must be in [0,1)");
  }
};

struct TokenMeta {
  int point_id = 0;
  int variable = 0;
  int step = 0;
  bool observed = true;
};

struct TokenSet {
  Tensor embeddings;  // [n_tokens x token_dim]
  std::vector<TokenMeta> meta;

  int size() const { return static_cast<int>(meta.size()); }
};

inline std::vector<double> positional_encoding(int step, int dim, double base) {
  std::vector<double> pe(static_cast<std::size_t>(dim));
  for (int j = 0; j < dim / 2; ++j) {
    const double freq = std::pow(base, -2.0 * j / dim);
    pe[static_cast<std::size_t>(2 * j)] = std::sin(step * freq);
    pe[static_cast<std::size_t>(2 * j) + 1] = std::cos(step * freq);
  }
  return pe;
}

inline void register_embed_params(ParamStore& store, const EmbedConfig& cfg, int n_variables,
                                  Rng& rng) {
  cfg.validate();
  // Embedding table: fixed scale, independent of the variable count.
  store.create_normal("embed.series", {n_variables, cfg.series_embed_dim}, rng, 0.5);
  const int in_dim = 1 + cfg.series_embed_dim + 1;
  store.create_weight("embed.lift.w", {in_dim, cfg.token_dim}, rng);
  store.create_zeros("embed.lift.b", {cfg.token_dim});
  for (int l = 0; l < cfg.input_encoder_layers; ++l) {
    const std::string p = "embed.ff" + std::to_string(l);
    store.create_weight(p + ".w1", {cfg.token_dim, cfg.token_dim}, rng);
    store.create_zeros(p + ".b1", {cfg.token_dim});
    store.create_weight(p + ".w2", {cfg.token_dim, cfg.token_dim}, rng);
    store.create_zeros(p + ".b2", {cfg.token_dim});
  }
}

namespace detail {

// Inverted dropout against the workspace's dropout stream; identity unless
// training with p > 0.
inline Tensor maybe_dropout(Workspace& ws, Tensor x, double p) {
  if (!ws.training() || p <= 0.0 || ws.dropout_rng() == nullptr) return x;
  std::vector<double> mask(static_cast<std::size_t>(x.numel()));
  const double keep = 1.0 - p;
  for (double& m : mask) m = ws.dropout_rng()->uniform01() < keep ? 1.0 / keep : 0.0;
  return mul(x, ws.constant(x.shape(), std::move(mask)));
}

}  // namespace detail

// Builds the token set for every point of the frame, in point order.
inline TokenSet embed(Workspace& ws, const SeriesFrame& frame, const EmbedConfig& cfg) {
  cfg.validate();
  const int n = frame.n_points();
  if (n == 0) throw ShapeError("embed: empty frame");
  Tensor series = ws.param("embed.series");
  if (series.rows() < frame.n_variables()) {
    throw ShapeError("embed: frame has " + std::to_string(frame.n_variables()) +
                     " variables but only " + std::to_string(series.rows()) +
                     " series embeddings exist");
  }

  std::vector<double> value_col(static_cast<std::size_t>(n));
  std::vector<double> mask_col(static_cast<std::size_t>(n));
  std::vector<int> var_ids(static_cast<std::size_t>(n));
  std::vector<double> pe(static_cast<std::size_t>(n) * cfg.token_dim);
  std::vector<TokenMeta> meta(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const TimePoint& p = frame.point(i);
    // Masked points contribute zero in the value slot no matter what value
    // they carry.
    value_col[static_cast<std::size_t>(i)] = p.observed ? frame.standardized(i) : 0.0;
    mask_col[static_cast<std::size_t>(i)] = p.observed ? 1.0 : 0.0;
    var_ids[static_cast<std::size_t>(i)] = p.variable;
    const auto row = positional_encoding(p.step, cfg.token_dim, cfg.positional_base);
    std::copy(row.begin(), row.end(), pe.begin() + static_cast<std::ptrdiff_t>(i) * cfg.token_dim);
    meta[static_cast<std::size_t>(i)] = {i, p.variable, p.step, p.observed};
  }

  Tensor features = concat({ws.constant({n, 1}, std::move(value_col)),
                            take_rows(series, var_ids),
                            ws.constant({n, 1}, std::move(mask_col))},
                           1);
  Tensor x = add(matmul(features, ws.param("embed.lift.w")), ws.param("embed.lift.b"));
  x = add(x, ws.constant({n, cfg.token_dim}, std::move(pe)));
  for (int l = 0; l < cfg.input_encoder_layers; ++l) {
    const std::string p = "embed.ff" + std::to_string(l);
    Tensor h = layernorm(x);
    h = relu(add(matmul(h, ws.param(p + ".w1")), ws.param(p + ".b1")));
    h = add(matmul(h, ws.param(p + ".w2")), ws.param(p + ".b2"));
    x = add(x, h);
    x = detail::maybe_dropout(ws, x, cfg.dropout);
  }
  return TokenSet{x, std::move(meta)};
}

}  // namespace percdf
