#pragma once
// Two encoders over embedded tokens. The latent-bottleneck path cross-attends
// a fixed set of L learned latents over the observed tokens, refines them with
// latent self-attention, then lets every token query the latents; its score
// memory is O(N L). The global baseline self-attends over all N tokens per
// layer, which is O(N^2) and exists for the scaling comparison.

#include <string>
#include <vector>

#include "percdf/attention.hpp"
#include "percdf/embedding.hpp"
#include "percdf/params.hpp"

namespace percdf {

struct PerceiverConfig {
  int num_latents = 64;
  int latent_dim = 48;
  int attention_layers = 3;
  int self_heads = 3;
  int cross_heads = 3;
  double dropout = 0.0;

  void validate() const {
    if (num_latents < 1) throw ShapeError("perceiver: need at least one latent");
    if (latent_dim % self_heads != 0 || latent_dim % cross_heads != 0) {
      throw ShapeError("perceiver: latent_dim must be divisible by the head counts");
    }
  }
};

struct GlobalEncoderConfig {
  int layers = 3;
  int heads = 3;
  int attn_dim = 16;
  int ffn_dim = 16;
  double dropout = 0.0;
};

struct LatentState {
  Tensor latents;  // [L x latent_dim], shape independent of N
};

inline void register_perceiver_params(ParamStore& store, const PerceiverConfig& cfg, int token_dim,
                                      Rng& rng) {
  cfg.validate();
  // Learned latent seeds.
  store.create_normal("enc.latents", {cfg.num_latents, cfg.latent_dim}, rng, 0.02);
  register_attention_params(store, "enc.cross", cfg.latent_dim, token_dim, cfg.cross_heads,
                            cfg.latent_dim / cfg.cross_heads, cfg.latent_dim, rng);
  register_ffn_params(store, "enc.cross.ffn", cfg.latent_dim, cfg.latent_dim, rng);
  for (int l = 0; l < cfg.attention_layers; ++l) {
    const std::string p = "enc.self" + std::to_string(l);
    register_attention_params(store, p, cfg.latent_dim, cfg.latent_dim, cfg.self_heads,
                              cfg.latent_dim / cfg.self_heads, cfg.latent_dim, rng);
    register_ffn_params(store, p + ".ffn", cfg.latent_dim, cfg.latent_dim, rng);
  }
  register_attention_params(store, "enc.decode", token_dim, cfg.latent_dim, cfg.cross_heads,
                            cfg.latent_dim / cfg.cross_heads, token_dim, rng);
  register_ffn_params(store, "enc.decode.ffn", token_dim, token_dim, rng);
}

inline void register_global_encoder_params(ParamStore& store, const GlobalEncoderConfig& cfg,
                                           int token_dim, Rng& rng) {
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "genc.self" + std::to_string(l);
    register_attention_params(store, p, token_dim, token_dim, cfg.heads, cfg.attn_dim, token_dim,
                              rng);
    register_ffn_params(store, p + ".ffn", token_dim, cfg.ffn_dim, rng);
  }
}

// Cross-attention of the learned latent seeds over the observed tokens,
// followed by latent self-attention layers.
inline LatentState cross_attend_latents(Workspace& ws, const TokenSet& tokens,
                                        const PerceiverConfig& cfg) {
  cfg.validate();
  std::vector<int> observed_rows;
  for (int i = 0; i < tokens.size(); ++i) {
    if (tokens.meta[static_cast<std::size_t>(i)].observed) observed_rows.push_back(i);
  }
  if (observed_rows.empty()) {
    throw ShapeError("encoder: no observed tokens to condition on");
  }
  Tensor observed = static_cast<int>(observed_rows.size()) == tokens.size()
                        ? tokens.embeddings
                        : take_rows(tokens.embeddings, observed_rows);

  Tensor w = attention_block(ws, "enc.cross", ws.param("enc.latents"), observed, cfg.cross_heads,
                             cfg.latent_dim / cfg.cross_heads, AttentionStage::EncoderCross);
  w = ffn_block(ws, "enc.cross.ffn", w);
  w = detail::maybe_dropout(ws, w, cfg.dropout);
  for (int l = 0; l < cfg.attention_layers; ++l) {
    const std::string p = "enc.self" + std::to_string(l);
    w = attention_block(ws, p, w, w, cfg.self_heads, cfg.latent_dim / cfg.self_heads,
                        AttentionStage::EncoderSelf);
    w = ffn_block(ws, p + ".ffn", w);
    w = detail::maybe_dropout(ws, w, cfg.dropout);
  }
  return LatentState{w};
}

// Every token (observed and missing alike) queries the latent summary.
inline TokenSet decode_tokens(Workspace& ws, const TokenSet& tokens, const LatentState& state,
                              const PerceiverConfig& cfg) {
  Tensor z = attention_block(ws, "enc.decode", tokens.embeddings, state.latents, cfg.cross_heads,
                             cfg.latent_dim / cfg.cross_heads, AttentionStage::EncoderCross);
  z = ffn_block(ws, "enc.decode.ffn", z);
  z = detail::maybe_dropout(ws, z, cfg.dropout);
  return TokenSet{z, tokens.meta};
}

inline TokenSet perceiver_encode(Workspace& ws, const TokenSet& tokens,
                                 const PerceiverConfig& cfg) {
  return decode_tokens(ws, tokens, cross_attend_latents(ws, tokens, cfg), cfg);
}

// Plain multi-layer self-attention over all tokens.
inline TokenSet global_encode_baseline(Workspace& ws, const TokenSet& tokens,
                                       const GlobalEncoderConfig& cfg) {
  Tensor z = tokens.embeddings;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "genc.self" + std::to_string(l);
    z = attention_block(ws, p, z, z, cfg.heads, cfg.attn_dim, AttentionStage::EncoderSelf);
    z = ffn_block(ws, p + ".ffn", z);
    z = detail::maybe_dropout(ws, z, cfg.dropout);
  }
  return TokenSet{z, tokens.meta};
}

// Closed-form score-entry laws used by tests and the scaling harness.
inline std::int64_t perceiver_score_law(const PerceiverConfig& cfg, std::int64_t n_observed,
                                        std::int64_t n_total) {
  return cfg.cross_heads * cfg.num_latents * n_observed +
         static_cast<std::int64_t>(cfg.self_heads) * cfg.attention_layers * cfg.num_latents *
             cfg.num_latents +
         static_cast<std::int64_t>(cfg.cross_heads) * n_total * cfg.num_latents;
}

inline std::int64_t baseline_score_law(const GlobalEncoderConfig& cfg, std::int64_t n_total) {
  return static_cast<std::int64_t>(cfg.heads) * cfg.layers * n_total * n_total;
}

}  // namespace percdf
