#pragma once
// Exact memory accounting. Counts attention-score entries and activation
// scalars instead of device bytes: allocator and hardware independent, so the
// scaling behaviour is reproducible anywhere.

#include <cstdint>

namespace percdf {

enum class AttentionStage { EncoderCross, EncoderSelf, Decoder };

struct MemoryLedger {
  // One entry per (head, query, key) attention score. Score-shaped
  // intermediates (raw scores, scaled scores, softmax weights) are counted
  // once here and excluded from activation_scalars.
  std::int64_t encoder_cross_scores = 0;
  std::int64_t encoder_self_scores = 0;
  std::int64_t decoder_scores = 0;
  // Every other scalar materialized during a forward pass.
  std::int64_t activation_scalars = 0;
  std::int64_t parameter_scalars = 0;

  void add_scores(AttentionStage stage, std::int64_t n) {
    switch (stage) {
      case AttentionStage::EncoderCross: encoder_cross_scores += n; break;
      case AttentionStage::EncoderSelf: encoder_self_scores += n; break;
      case AttentionStage::Decoder: decoder_scores += n; break;
    }
  }

  void merge(const MemoryLedger& o) {
    encoder_cross_scores += o.encoder_cross_scores;
    encoder_self_scores += o.encoder_self_scores;
    decoder_scores += o.decoder_scores;
    activation_scalars += o.activation_scalars;
    parameter_scalars += o.parameter_scalars;
  }

  std::int64_t score_entries() const {
    return encoder_cross_scores + encoder_self_scores + decoder_scores;
  }

  // The "total" column of the scaling CSV: scores plus activations.
  std::int64_t total() const { return score_entries() + activation_scalars; }
};

}  // namespace percdf
