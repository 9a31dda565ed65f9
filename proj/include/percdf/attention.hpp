#pragma once
// Multi-head attention and the residual blocks shared by the encoders and the
// copula conditioner. Score-shaped intermediates are reported to the memory
// ledger once per (head, query, key) entry and excluded from the activation
// count; in forward-only passes their buffers are released as soon as the
// context has been formed.

#include <string>
#include <vector>

#include "percdf/params.hpp"
#include "percdf/tensor.hpp"

namespace percdf {

inline void register_attention_params(ParamStore& store, const std::string& prefix, int query_dim,
                                      int key_dim, int heads, int head_dim, int out_dim,
                                      Rng& rng) {
  const int inner = heads * head_dim;
  store.create_weight(prefix + ".wq", {query_dim, inner}, rng);
  store.create_weight(prefix + ".wk", {key_dim, inner}, rng);
  store.create_weight(prefix + ".wv", {key_dim, inner}, rng);
  store.create_weight(prefix + ".wo", {inner, out_dim}, rng);
  store.create_zeros(prefix + ".bo", {out_dim});
}

// queries [nq x dq] attend over kv [nk x dk]; returns [nq x out_dim].
inline Tensor multihead_attention(Workspace& ws, const std::string& prefix, const Tensor& queries,
                                  const Tensor& kv, int heads, int head_dim,
                                  AttentionStage stage) {
  const int nq = queries.rows();
  const int nk = kv.rows();
  Tensor q_all = matmul(queries, ws.param(prefix + ".wq"));
  Tensor k_all = matmul(kv, ws.param(prefix + ".wk"));
  Tensor v_all = matmul(kv, ws.param(prefix + ".wv"));

  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> contexts;
  contexts.reserve(static_cast<std::size_t>(heads));
  std::vector<int> score_node_ids;
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q_all, h * head_dim, (h + 1) * head_dim);
    Tensor kh = slice_cols(k_all, h * head_dim, (h + 1) * head_dim);
    Tensor vh = slice_cols(v_all, h * head_dim, (h + 1) * head_dim);
    Tensor scores = matmul(qh, kh, false, true);
    Tensor scaled = scale(scores, inv_sqrt);
    Tensor weights = softmax_lastdim(scaled);
    contexts.push_back(matmul(weights, vh));
    score_node_ids.push_back(scores.id());
    score_node_ids.push_back(scaled.id());
    score_node_ids.push_back(weights.id());
  }
  // Score-shaped nodes: count once as score entries, not as activations.
  ws.ledger().activation_scalars -= 3LL * heads * nq * nk;
  ws.ledger().add_scores(stage, static_cast<std::int64_t>(heads) * nq * nk);
  if (!ws.grad_enabled()) {
    for (int id : score_node_ids) ws.tape().release_data(id);
  }

  Tensor ctx = heads == 1 ? contexts[0] : concat(contexts, 1);
  return add(matmul(ctx, ws.param(prefix + ".wo")), ws.param(prefix + ".bo"));
}

inline void register_ffn_params(ParamStore& store, const std::string& prefix, int dim, int hidden,
                                Rng& rng) {
    store.create_weight(prefix + ".w1", {dim, hidden}, rng);
  store.create_zeros(prefix + ".b1", {hidden});
  store.create_weight(prefix + ".w2", {hidden, dim}, rng);
  store.create_zeros(prefix + ".b2", {dim});
}

// Pre-layernorm residual feedforward: x + W2 relu(W1 ln(x) + b1) + b2.
inline Tensor ffn_block(Workspace& ws, const std::string& prefix, const Tensor& x) {
  Tensor h = layernorm(x);
  h = relu(add(matmul(h, ws.param(prefix + ".w1")), ws.param(prefix + ".b1")));
  h = add(matmul(h, ws.param(prefix + ".w2")), ws.param(prefix + ".b2"));
  return add(x, h);
}

// Pre-layernorm residual attention: x + MHA(ln(x), ln(kv)).
inline Tensor attention_block(Workspace& ws, const std::string& prefix, const Tensor& x,
                              const Tensor& kv, int heads, int head_dim, AttentionStage stage) {
  Tensor attended = multihead_attention(ws, prefix, layernorm(x), layernorm(kv), heads, head_dim,
                                        stage);
  return add(x, attended);
}

}  // namespace percdf
