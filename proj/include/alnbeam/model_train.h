#pragma once

#include <span>
#include <vector>

#include "alnbeam/model.h"
#include "alnbeam/tensor.h"

namespace alnbeam {

// Teacher-forced training pass. The forward runs the whole sequence in matrix
// form and keeps every intermediate needed by the hand-derived backward.

struct LnCache {
  Tensor xhat;
  std::vector<double> inv_std;
};

struct AttnCache {
  Tensor aq, am;           // inputs to the projections
  Tensor q, k, v;          // packed head projections
  std::vector<Tensor> att; // per head: rows_q × rows_kv, masked rows zeroed
};

struct FfCache {
  Tensor in;   // normed input
  Tensor pre;  // pre-activation
  Tensor act;  // after relu
};

struct EncLayerCache {
  Tensor x_in, x_mid;  // residual stream entering each sub-layer
  LnCache ln_self, ln_ff;
  AttnCache self;
  FfCache ff;
};

struct DecLayerCache {
  Tensor x_in, x_mid_cross, x_mid_ff;
  LnCache ln_self, ln_cross, ln_ff;
  AttnCache self, cross;
  FfCache ff;
};

struct ForwardCache {
  std::vector<int> src, tgt_in;
  std::vector<EncLayerCache> enc;
  Tensor enc_final;  // residual stream before the final encoder norm
  LnCache enc_norm;
  Tensor H;
  std::vector<DecLayerCache> dec;
  Tensor dec_final;
  LnCache dec_norm;
  Tensor dec_out;
  Tensor logits;  // (tgt_in length)×V
};

ForwardCache forward_teacher_forced(const Model& m, std::span<const int> src,
                                    std::span<const int> tgt_in);

// Mean token cross-entropy; fills dlogits (same shape as logits) and counts
// argmax hits when `correct` is given.
double softmax_xent_loss(const Tensor& logits, std::span<const int> targets, Tensor* dlogits,
                         int* correct);

// Accumulates parameter gradients into `grads` (a zero_like(model) buffer).
void backward_teacher_forced(const Model& m, const ForwardCache& cache, const Tensor& dlogits,
                             Model& grads);

double grad_norm(const Model& grads);
// Plain gradient descent step with global-norm clipping (clip <= 0 disables).
void sgd_update(Model& m, const Model& grads, double lr, double clip);

// Adam over an arbitrary parameter list (alignment head training).
struct AdamState {
  std::vector<Tensor> m, v;
  int64_t t = 0;
};
void adam_init(AdamState& st, const std::vector<Tensor*>& params);
void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& st, double lr, double beta1, double beta2, double eps);

}  // namespace alnbeam
