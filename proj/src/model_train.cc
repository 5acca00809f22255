#include "alnbeam/model_train.h"

#include <cmath>

#include "alnbeam/error.h"

namespace alnbeam {

namespace {

constexpr double kLnEps = 1e-5;

Tensor ln_fwd(const Tensor& x, const LayerNormParams& p, LnCache& cache) {
  const int d = x.cols();
  Tensor out(x.rows(), d);
  cache.xhat = Tensor(x.rows(), d);
  cache.inv_std.assign(x.rows(), 0.0);
  for (int i = 0; i < x.rows(); ++i) {
    const double* xi = x.row(i);
    double mean = 0.0;
    for (int c = 0; c < d; ++c) mean += xi[c];
    mean /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) {
      const double dv = xi[c] - mean;
      var += dv * dv;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    cache.inv_std[i] = inv;
    for (int c = 0; c < d; ++c) {
      const double xh = (xi[c] - mean) * inv;
      cache.xhat.at(i, c) = xh;
      out.at(i, c) = (1.0 + p.gain.at(0, c)) * xh + p.bias.at(0, c);
    }
  }
  return out;
}

Tensor ln_bwd(const Tensor& dy, const LayerNormParams& p, const LnCache& cache,
              LayerNormParams& gp) {
  const int d = dy.cols();
  Tensor dx(dy.rows(), d);
  for (int i = 0; i < dy.rows(); ++i) {
    double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat*xhat)
    for (int c = 0; c < d; ++c) {
      const double dyv = dy.at(i, c);
      const double xh = cache.xhat.at(i, c);
      gp.gain.at(0, c) += dyv * xh;
      gp.bias.at(0, c) += dyv;
      const double dxh = dyv * (1.0 + p.gain.at(0, c));
      m1 += dxh;
      m2 += dxh * xh;
    }
    m1 /= d;
    m2 /= d;
    const double inv = cache.inv_std[i];
    for (int c = 0; c < d; ++c) {
      const double dxh = dy.at(i, c) * (1.0 + p.gain.at(0, c));
      dx.at(i, c) = inv * (dxh - m1 - cache.xhat.at(i, c) * m2);
    }
  }
  return dx;
}

Tensor attn_fwd(const Tensor& aq, const Tensor& am, const AttentionParams& p, int n_heads, int d,
                bool causal, AttnCache& cache) {
  const int dn = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  cache.aq = aq;
  cache.am = am;
  cache.q = matmul(aq, p.wq);
  cache.k = matmul(am, p.wk);
  cache.v = matmul(am, p.wv);
  cache.att.assign(n_heads, Tensor(aq.rows(), am.rows()));
  Tensor z(aq.rows(), d);
  std::vector<double> scores(am.rows());
  for (int n = 0; n < n_heads; ++n) {
    const int off = n * dn;
    Tensor& att = cache.att[n];
    for (int i = 0; i < aq.rows(); ++i) {
      const int limit = causal ? i + 1 : am.rows();
      for (int j = 0; j < limit; ++j) {
        double s = 0.0;
        for (int c = 0; c < dn; ++c) s += cache.q.at(i, off + c) * cache.k.at(j, off + c);
        scores[j] = s * scale;
      }
      softmax_inplace({scores.data(), static_cast<size_t>(limit)});
      for (int j = 0; j < limit; ++j) att.at(i, j) = scores[j];
      for (int j = 0; j < limit; ++j) {
        const double w = scores[j];
        for (int c = 0; c < dn; ++c) z.at(i, off + c) += w * cache.v.at(j, off + c);
      }
    }
  }
  return matmul(z, p.wo);
}

// Returns (d_aq, d_am); weight grads go into gp.
std::pair<Tensor, Tensor> attn_bwd(const Tensor& dout, const AttentionParams& p, int n_heads,
                                   int d, const AttnCache& cache, AttentionParams& gp) {
  const int dn = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const int M = cache.aq.rows();
  const int N = cache.am.rows();

  // Recompute z from att and v for the wo gradient.
  Tensor z(M, d);
  for (int n = 0; n < n_heads; ++n) {
    const int off = n * dn;
    const Tensor& att = cache.att[n];
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < N; ++j) {
        const double w = att.at(i, j);
        if (w == 0.0) continue;
        for (int c = 0; c < dn; ++c) z.at(i, off + c) += w * cache.v.at(j, off + c);
      }
  }
  add_inplace(gp.wo, matmul(transpose(z), dout));
  Tensor dz = matmul(dout, transpose(p.wo));

  Tensor dq(M, d), dk(N, d), dv(N, d);
  for (int n = 0; n < n_heads; ++n) {
    const int off = n * dn;
    const Tensor& att = cache.att[n];
    for (int i = 0; i < M; ++i) {
      // datt and the softmax backward, one query row at a time.
      std::vector<double> datt(N, 0.0);
      double dot = 0.0;
      for (int j = 0; j < N; ++j) {
        double s = 0.0;
        for (int c = 0; c < dn; ++c) s += dz.at(i, off + c) * cache.v.at(j, off + c);
        datt[j] = s;
        dot += s * att.at(i, j);
      }
      for (int j = 0; j < N; ++j) {
        const double w = att.at(i, j);
        if (w == 0.0) continue;
        const double ds = w * (datt[j] - dot) * scale;
        for (int c = 0; c < dn; ++c) {
          dq.at(i, off + c) += ds * cache.k.at(j, off + c);
          dk.at(j, off + c) += ds * cache.q.at(i, off + c);
        }
        for (int c = 0; c < dn; ++c) dv.at(j, off + c) += w * dz.at(i, off + c);
      }
    }
  }
  add_inplace(gp.wq, matmul(transpose(cache.aq), dq));
  add_inplace(gp.wk, matmul(transpose(cache.am), dk));
  add_inplace(gp.wv, matmul(transpose(cache.am), dv));
  Tensor d_aq = matmul(dq, transpose(p.wq));
  Tensor d_am = matmul(dk, transpose(p.wk));
  add_inplace(d_am, matmul(dv, transpose(p.wv)));
  return {std::move(d_aq), std::move(d_am)};
}

Tensor ff_fwd(const Tensor& x, const FeedForwardParams& p, FfCache& cache) {
  cache.in = x;
  cache.pre = matmul(x, p.w1);
  for (int i = 0; i < cache.pre.rows(); ++i)
    for (int c = 0; c < cache.pre.cols(); ++c) cache.pre.at(i, c) += p.b1.at(0, c);
  cache.act = cache.pre;
  for (double& v : cache.act.data())
    if (v < 0.0) v = 0.0;
  Tensor out = matmul(cache.act, p.w2);
  for (int i = 0; i < out.rows(); ++i)
    for (int c = 0; c < out.cols(); ++c) out.at(i, c) += p.b2.at(0, c);
  return out;
}

Tensor ff_bwd(const Tensor& dout, const FeedForwardParams& p, const FfCache& cache,
              FeedForwardParams& gp) {
  for (int i = 0; i < dout.rows(); ++i)
    for (int c = 0; c < dout.cols(); ++c) gp.b2.at(0, c) += dout.at(i, c);
  add_inplace(gp.w2, matmul(transpose(cache.act), dout));
  Tensor dact = matmul(dout, transpose(p.w2));
  for (int i = 0; i < dact.rows(); ++i)
    for (int c = 0; c < dact.cols(); ++c) {
      if (cache.pre.at(i, c) <= 0.0) dact.at(i, c) = 0.0;
      gp.b1.at(0, c) += dact.at(i, c);
    }
  add_inplace(gp.w1, matmul(transpose(cache.in), dact));
  return matmul(dact, transpose(p.w1));
}

Tensor embed_rows(const Tensor& table, std::span<const int> tokens, int d, double scale) {
  Tensor x(static_cast<int>(tokens.size()), d);
  Tensor pe = positional_encoding(static_cast<int>(tokens.size()), d);
  for (size_t i = 0; i < tokens.size(); ++i) {
    const double* e = table.row(tokens[i]);
    for (int c = 0; c < d; ++c) x.at(static_cast<int>(i), c) = e[c] * scale + pe.at(static_cast<int>(i), c);
  }
  return x;
}

}  // namespace

ForwardCache forward_teacher_forced(const Model& m, std::span<const int> src,
                                    std::span<const int> tgt_in) {
  if (src.empty()) throw Error::data("cannot encode an empty source sentence");
  if (tgt_in.empty()) throw Error::data("empty decoder input");
  const int d = m.config.d;
  const double emb_scale = std::sqrt(static_cast<double>(d));
  ForwardCache cache;
  cache.src.assign(src.begin(), src.end());
  cache.tgt_in.assign(tgt_in.begin(), tgt_in.end());

  Tensor x = embed_rows(m.src_embed, src, d, emb_scale);
  cache.enc.resize(m.encoder.size());
  for (size_t l = 0; l < m.encoder.size(); ++l) {
    EncLayerCache& lc = cache.enc[l];
    lc.x_in = x;
    Tensor a = ln_fwd(x, m.encoder[l].ln_self, lc.ln_self);
    add_inplace(x, attn_fwd(a, a, m.encoder[l].self_attn, m.config.n_heads, d, false, lc.self));
    lc.x_mid = x;
    Tensor b = ln_fwd(x, m.encoder[l].ln_ff, lc.ln_ff);
    add_inplace(x, ff_fwd(b, m.encoder[l].ff, lc.ff));
  }
  cache.enc_final = x;
  cache.H = ln_fwd(x, m.enc_norm, cache.enc_norm);

  Tensor y = embed_rows(m.tgt_embed, tgt_in, d, emb_scale);
  cache.dec.resize(m.decoder.size());
  for (size_t l = 0; l < m.decoder.size(); ++l) {
    DecLayerCache& lc = cache.dec[l];
    lc.x_in = y;
    Tensor a = ln_fwd(y, m.decoder[l].ln_self, lc.ln_self);
    add_inplace(y, attn_fwd(a, a, m.decoder[l].self_attn, m.config.n_heads, d, true, lc.self));
    lc.x_mid_cross = y;
    Tensor c = ln_fwd(y, m.decoder[l].ln_cross, lc.ln_cross);
    add_inplace(y, attn_fwd(c, cache.H, m.decoder[l].cross_attn, m.config.n_heads, d, false, lc.cross));
    lc.x_mid_ff = y;
    Tensor e = ln_fwd(y, m.decoder[l].ln_ff, lc.ln_ff);
    add_inplace(y, ff_fwd(e, m.decoder[l].ff, lc.ff));
  }
  cache.dec_final = y;
  cache.dec_out = ln_fwd(y, m.dec_norm, cache.dec_norm);
  cache.logits = matmul(cache.dec_out, m.out_proj);
  return cache;
}

double softmax_xent_loss(const Tensor& logits, std::span<const int> targets, Tensor* dlogits,
                         int* correct) {
  if (static_cast<int>(targets.size()) != logits.rows())
    throw Error::data("target length does not match logits rows");
  const int V = logits.cols();
  const int T = logits.rows();
  if (dlogits) *dlogits = Tensor(T, V);
  double loss = 0.0;
  if (correct) *correct = 0;
  for (int i = 0; i < T; ++i) {
    const int tgt = targets[i];
    if (tgt < 0 || tgt >= V) throw Error::data("target id out of range");
    std::vector<double> lp = log_softmax(logits.row_span(i));
    loss -= lp[tgt];
    if (correct) {
      int best = 0;
      for (int v = 1; v < V; ++v)
        if (logits.at(i, v) > logits.at(i, best)) best = v;
      if (best == tgt) ++(*correct);
    }
    if (dlogits)
      for (int v = 0; v < V; ++v)
        dlogits->at(i, v) = (std::exp(lp[v]) - (v == tgt ? 1.0 : 0.0)) / T;
  }
  return loss / T;
}

void backward_teacher_forced(const Model& m, const ForwardCache& cache, const Tensor& dlogits,
                             Model& grads) {
  const int d = m.config.d;
  const double emb_scale = std::sqrt(static_cast<double>(d));

  add_inplace(grads.out_proj, matmul(transpose(cache.dec_out), dlogits));
  Tensor dy = ln_bwd(matmul(dlogits, transpose(m.out_proj)), m.dec_norm, cache.dec_norm,
                     grads.dec_norm);

  Tensor dH(cache.H.rows(), d);
  for (int l = static_cast<int>(m.decoder.size()) - 1; l >= 0; --l) {
    const DecLayerCache& lc = cache.dec[l];
    Tensor dff_in = ff_bwd(dy, m.decoder[l].ff, lc.ff, grads.decoder[l].ff);
    add_inplace(dy, ln_bwd(dff_in, m.decoder[l].ln_ff, lc.ln_ff, grads.decoder[l].ln_ff));

    auto [dc, dmem] = attn_bwd(dy, m.decoder[l].cross_attn, m.config.n_heads, d, lc.cross,
                               grads.decoder[l].cross_attn);
    add_inplace(dH, dmem);
    add_inplace(dy, ln_bwd(dc, m.decoder[l].ln_cross, lc.ln_cross, grads.decoder[l].ln_cross));

    auto [da, dself_mem] = attn_bwd(dy, m.decoder[l].self_attn, m.config.n_heads, d, lc.self,
                                    grads.decoder[l].self_attn);
    add_inplace(da, dself_mem);  // self-attention: queries and memory share the input
    add_inplace(dy, ln_bwd(da, m.decoder[l].ln_self, lc.ln_self, grads.decoder[l].ln_self));
  }
  for (size_t i = 0; i < cache.tgt_in.size(); ++i) {
    double* g = grads.tgt_embed.row(cache.tgt_in[i]);
    for (int c = 0; c < d; ++c) g[c] += dy.at(static_cast<int>(i), c) * emb_scale;
  }

  Tensor dx = ln_bwd(dH, m.enc_norm, cache.enc_norm, grads.enc_norm);
  for (int l = static_cast<int>(m.encoder.size()) - 1; l >= 0; --l) {
    const EncLayerCache& lc = cache.enc[l];
    Tensor dff_in = ff_bwd(dx, m.encoder[l].ff, lc.ff, grads.encoder[l].ff);
    add_inplace(dx, ln_bwd(dff_in, m.encoder[l].ln_ff, lc.ln_ff, grads.encoder[l].ln_ff));
    auto [da, dmem] = attn_bwd(dx, m.encoder[l].self_attn, m.config.n_heads, d, lc.self,
                               grads.encoder[l].self_attn);
    add_inplace(da, dmem);
    add_inplace(dx, ln_bwd(da, m.encoder[l].ln_self, lc.ln_self, grads.encoder[l].ln_self));
  }
  for (size_t i = 0; i < cache.src.size(); ++i) {
    double* g = grads.src_embed.row(cache.src[i]);
    for (int c = 0; c < d; ++c) g[c] += dx.at(static_cast<int>(i), c) * emb_scale;
  }
}

double grad_norm(const Model& grads) {
  double sq = 0.0;
  for_each_tensor(grads, [&sq](const std::string&, const Tensor& t) {
    for (double v : t.data()) sq += v * v;
  });
  return std::sqrt(sq);
}

void sgd_update(Model& m, const Model& grads, double lr, double clip) {
  double scale = lr;
  if (clip > 0.0) {
    const double norm = grad_norm(grads);
    if (norm > clip) scale = lr * clip / norm;
  }
  std::vector<const Tensor*> gs;
  for_each_tensor(grads, [&gs](const std::string&, const Tensor& t) { gs.push_back(&t); });
  size_t i = 0;
  for_each_tensor(m, [&](const std::string&, Tensor& t) {
    const Tensor& g = *gs[i++];
    for (size_t k = 0; k < t.size(); ++k) t.data()[k] -= scale * g.data()[k];
  });
}

void adam_init(AdamState& st, const std::vector<Tensor*>& params) {
  st.m.clear();
  st.v.clear();
  st.t = 0;
  for (const Tensor* p : params) {
    st.m.emplace_back(p->rows(), p->cols());
    st.v.emplace_back(p->rows(), p->cols());
  }
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& st, double lr, double beta1, double beta2, double eps) {
  ++st.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    for (size_t k = 0; k < p.size(); ++k) {
      double& mv = st.m[i].data()[k];
      double& vv = st.v[i].data()[k];
      const double gk = g.data()[k];
      mv = beta1 * mv + (1.0 - beta1) * gk;
      vv = beta2 * vv + (1.0 - beta2) * gk * gk;
      p.data()[k] -= lr * (mv / bc1) / (std::sqrt(vv / bc2) + eps);
    }
  }
}

}  // namespace alnbeam
