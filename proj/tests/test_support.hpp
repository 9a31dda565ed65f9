#pragma once
// Shared helpers for model-level tests: small configs that keep tapes tiny.

#include "percdf/model.hpp"

namespace percdf_test {

inline percdf::ModelConfig tiny_config(int resolution = 8) {
  percdf::ModelConfig cfg;
  cfg.embed.series_embed_dim = 3;
  cfg.embed.token_dim = 8;
  cfg.embed.input_encoder_layers = 1;
  cfg.perceiver.num_latents = 4;
  cfg.perceiver.latent_dim = 8;
  cfg.perceiver.attention_layers = 1;
  cfg.perceiver.self_heads = 2;
  cfg.perceiver.cross_heads = 2;
  cfg.baseline.layers = 1;
  cfg.baseline.heads = 2;
  cfg.baseline.attn_dim = 4;
  cfg.baseline.ffn_dim = 8;
  cfg.copula.attention_layers = 1;
  cfg.copula.heads = 2;
  cfg.copula.attn_dim = 4;
  cfg.copula.ffn_dim = 8;
  cfg.copula.ffn_layers = 1;
  cfg.copula.resolution = resolution;
  cfg.flow.flow_layers = 2;
  cfg.flow.flow_dim = 3;
  cfg.flow.ffn_layers = 1;
  cfg.flow.ffn_dim = 6;
  cfg.scheduler.window_k = 3;
  return cfg;
}

// Zeroes the copula output head so every factor is uniform over its bins:
// the independence copula.
inline void force_uniform_copula(percdf::ParamStore& store) {
  auto& w = store.at("cop.out.w");
  auto& b = store.at("cop.out.b");
  std::fill(w.value.begin(), w.value.end(), 0.0);
  std::fill(b.value.begin(), b.value.end(), 0.0);
}

}  // namespace percdf_test
