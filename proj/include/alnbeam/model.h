#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "alnbeam/tensor.h"

namespace alnbeam {

struct ModelConfig {
  int d = 32;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 64;
  int src_vocab = 0;
  int tgt_vocab = 0;
  int bos_id = -1;
  int eos_id = -1;
  uint64_t seed = 1;

  int head_dim() const { return n_heads > 0 ? d / n_heads : 0; }
  // Decoder layer the alignment sub-layers attach to (penultimate, 0-based).
  int align_layer() const { return n_layers - 2; }
  void validate() const;  // config error on violation
};

// Layer norm gain is stored as an offset from 1 so that a uniform [-0.1, 0.1]
// init leaves the norm close to identity.
struct LayerNormParams {
  Tensor gain, bias;  // 1×d
};

struct AttentionParams {
  Tensor wq, wk, wv, wo;  // d×d, heads packed along columns
};

struct FeedForwardParams {
  Tensor w1, b1, w2, b2;  // d×d_ff, 1×d_ff, d_ff×d, 1×d
};

struct EncoderLayer {
  LayerNormParams ln_self, ln_ff;
  AttentionParams self_attn;
  FeedForwardParams ff;
};

struct DecoderLayer {
  LayerNormParams ln_self, ln_cross, ln_ff;
  AttentionParams self_attn, cross_attn;
  FeedForwardParams ff;
};

struct Model {
  ModelConfig config;
  Tensor src_embed, tgt_embed;  // V×d
  std::vector<EncoderLayer> encoder;
  std::vector<DecoderLayer> decoder;
  LayerNormParams enc_norm, dec_norm;
  Tensor out_proj;  // d×V_tgt
};

// Enumerates every weight tensor in a fixed order; the same order defines the
// wire format and checksums.
void for_each_tensor(Model& m, const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_tensor(const Model& m, const std::function<void(const std::string&, const Tensor&)>& fn);

Model init_model(const ModelConfig& config);
Model zero_like(const Model& m);  // same shapes, all values 0 (gradient buffer)
uint64_t model_checksum(const Model& m);

void save_model(const Model& m, const std::string& path);
Model load_model(const std::string& path);

// Incremental decoding state. Grows by exactly one entry per decode step in
// self_out / attn / logits; attention rows are probability distributions.
struct ModelState {
  Tensor enc_out;                           // H: S×d
  std::vector<Tensor> cross_k, cross_v;     // per layer: S×d
  std::vector<Tensor> self_k, self_v;       // per layer: steps×d
  std::vector<Tensor> self_out;             // per step: L×d (g, input to cross-attention)
  std::vector<Tensor> attn;                 // per step: (L·n_heads)×S, row = layer*n_heads+head
  std::vector<std::vector<double>> logits;  // per step: V_tgt scores
  std::vector<int> src_tokens;
  std::vector<int> fed;  // decoder input tokens, fed[0] is usually BOS

  int steps() const { return static_cast<int>(fed.size()); }
  int src_len() const { return static_cast<int>(src_tokens.size()); }
  std::span<const double> attn_row(int step, int layer, int head, int n_heads) const {
    return attn[step].row_span(layer * n_heads + head);
  }
  std::span<const double> g_row(int step, int layer) const { return self_out[step].row_span(layer); }
};

ModelState encode(const Model& m, std::span<const int> src_tokens);

// Feeds y_prev, returns unnormalized next-token scores and appends this
// step's caches (self K/V, g, cross-attention rows, logits) to the state.
std::vector<double> decode_step(const Model& m, ModelState& state, int y_prev);

// Shared primitives (also used by the alignment sub-layers and training).
Tensor layer_norm_rows(const Tensor& x, const LayerNormParams& p);
Tensor positional_encoding(int n_positions, int d);
std::vector<double> log_softmax(std::span<const double> scores);

}  // namespace alnbeam
