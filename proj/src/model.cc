#include "alnbeam/model.h"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "alnbeam/error.h"
#include "alnbeam/io.h"
#include "alnbeam/rng.h"

namespace alnbeam {

using nlohmann::json;

void ModelConfig::validate() const {
  if (d <= 0 || n_heads <= 0 || n_layers <= 0 || d_ff <= 0)
    throw Error::config("model dimensions must be positive");
  if (d % n_heads != 0 || head_dim() * n_heads != d)
    throw Error::config("head_dim * n_heads must equal d (d=" + std::to_string(d) +
                        ", n_heads=" + std::to_string(n_heads) + ")");
  if (n_layers < 2) throw Error::config("n_layers must be at least 2");
  if (src_vocab <= 0 || tgt_vocab <= 0) throw Error::config("vocabulary sizes must be positive");
  if (bos_id < 0 || bos_id >= tgt_vocab || eos_id < 0 || eos_id >= tgt_vocab || bos_id == eos_id)
    throw Error::config("bos/eos ids must be distinct target-vocabulary ids");
}

namespace {

void visit_ln(const std::string& prefix, LayerNormParams& p,
              const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".gain", p.gain);
  fn(prefix + ".bias", p.bias);
}

void visit_attn(const std::string& prefix, AttentionParams& p,
                const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".wq", p.wq);
  fn(prefix + ".wk", p.wk);
  fn(prefix + ".wv", p.wv);
  fn(prefix + ".wo", p.wo);
}

void visit_ff(const std::string& prefix, FeedForwardParams& p,
              const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".w1", p.w1);
  fn(prefix + ".b1", p.b1);
  fn(prefix + ".w2", p.w2);
  fn(prefix + ".b2", p.b2);
}

}  // namespace

void for_each_tensor(Model& m, const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("src_embed", m.src_embed);
  fn("tgt_embed", m.tgt_embed);
  for (size_t l = 0; l < m.encoder.size(); ++l) {
    const std::string p = "enc" + std::to_string(l);
    visit_ln(p + ".ln_self", m.encoder[l].ln_self, fn);
    visit_attn(p + ".self", m.encoder[l].self_attn, fn);
    visit_ln(p + ".ln_ff", m.encoder[l].ln_ff, fn);
    visit_ff(p + ".ff", m.encoder[l].ff, fn);
  }
  visit_ln("enc_norm", m.enc_norm, fn);
  for (size_t l = 0; l < m.decoder.size(); ++l) {
    const std::string p = "dec" + std::to_string(l);
    visit_ln(p + ".ln_self", m.decoder[l].ln_self, fn);
    visit_attn(p + ".self", m.decoder[l].self_attn, fn);
    visit_ln(p + ".ln_cross", m.decoder[l].ln_cross, fn);
    visit_attn(p + ".cross", m.decoder[l].cross_attn, fn);
    visit_ln(p + ".ln_ff", m.decoder[l].ln_ff, fn);
    visit_ff(p + ".ff", m.decoder[l].ff, fn);
  }
  visit_ln("dec_norm", m.dec_norm, fn);
  fn("out_proj", m.out_proj);
}

void for_each_tensor(const Model& m, const std::function<void(const std::string&, const Tensor&)>& fn) {
  for_each_tensor(const_cast<Model&>(m),
                  [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

namespace {

Model build_skeleton(const ModelConfig& cfg) {
  Model m;
  m.config = cfg;
  m.src_embed = Tensor(cfg.src_vocab, cfg.d);
  m.tgt_embed = Tensor(cfg.tgt_vocab, cfg.d);
  auto ln = [&] { return LayerNormParams{Tensor(1, cfg.d), Tensor(1, cfg.d)}; };
  auto attn = [&] {
    return AttentionParams{Tensor(cfg.d, cfg.d), Tensor(cfg.d, cfg.d), Tensor(cfg.d, cfg.d),
                           Tensor(cfg.d, cfg.d)};
  };
  auto ff = [&] {
    return FeedForwardParams{Tensor(cfg.d, cfg.d_ff), Tensor(1, cfg.d_ff), Tensor(cfg.d_ff, cfg.d),
                             Tensor(1, cfg.d)};
  };
  m.encoder.resize(cfg.n_layers);
  for (auto& l : m.encoder) l = EncoderLayer{ln(), ln(), attn(), ff()};
  m.decoder.resize(cfg.n_layers);
  for (auto& l : m.decoder) l = DecoderLayer{ln(), ln(), ln(), attn(), attn(), ff()};
  m.enc_norm = ln();
  m.dec_norm = ln();
  m.out_proj = Tensor(cfg.d, cfg.tgt_vocab);
  return m;
}

}  // namespace

Model init_model(const ModelConfig& config) {
  config.validate();
  Model m = build_skeleton(config);
  Rng rng(config.seed);
  for_each_tensor(m, [&rng](const std::string&, Tensor& t) {
    for (double& v : t.data()) v = rng.uniform(-0.1, 0.1);
  });
  return m;
}

Model zero_like(const Model& m) {
  return build_skeleton(m.config);
}

uint64_t model_checksum(const Model& m) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for_each_tensor(m, [&mix](const std::string& name, const Tensor& t) {
    mix(name.data(), name.size());
    mix(t.data().data(), t.data().size() * sizeof(double));
  });
  return h;
}

// ---------------------------------------------------------------------------
// Serialization: versioned JSON manifest of named tensors.

static constexpr const char* kModelFormat = "alnbeam-model";
static constexpr int kModelVersion = 1;

void save_model(const Model& m, const std::string& path) {
  json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["config"] = {{"d", m.config.d},         {"n_heads", m.config.n_heads},
                 {"n_layers", m.config.n_layers}, {"d_ff", m.config.d_ff},
                 {"src_vocab", m.config.src_vocab}, {"tgt_vocab", m.config.tgt_vocab},
                 {"bos_id", m.config.bos_id},      {"eos_id", m.config.eos_id},
                 {"seed", m.config.seed}};
  json tensors = json::object();
  for_each_tensor(m, [&tensors](const std::string& name, const Tensor& t) {
    tensors[name] = {{"rows", t.rows()}, {"cols", t.cols()}, {"data", t.data()}};
  });
  j["tensors"] = std::move(tensors);
  write_file(path, j.dump());
}

Model load_model(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error::format("model file is not valid JSON (" + path + "): " + e.what());
  }
  if (!j.contains("format") || j["format"] != kModelFormat)
    throw Error::format("not a model file: " + path);
  if (!j.contains("version") || !j["version"].is_number_integer() ||
      j["version"].get<int>() != kModelVersion)
    throw Error::format("unsupported model file version in " + path + " (expected " +
                        std::to_string(kModelVersion) + ")");
  ModelConfig cfg;
  try {
    const json& c = j.at("config");
    cfg.d = c.at("d").get<int>();
    cfg.n_heads = c.at("n_heads").get<int>();
    cfg.n_layers = c.at("n_layers").get<int>();
    cfg.d_ff = c.at("d_ff").get<int>();
    cfg.src_vocab = c.at("src_vocab").get<int>();
    cfg.tgt_vocab = c.at("tgt_vocab").get<int>();
    cfg.bos_id = c.at("bos_id").get<int>();
    cfg.eos_id = c.at("eos_id").get<int>();
    cfg.seed = c.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw Error::format("bad model config in " + path + ": " + e.what());
  }
  cfg.validate();
  Model m = build_skeleton(cfg);
  const json& tensors = j.at("tensors");
  for_each_tensor(m, [&tensors, &path](const std::string& name, Tensor& t) {
    if (!tensors.contains(name))
      throw Error::format("missing tensor '" + name + "' in " + path);
    const json& tj = tensors.at(name);
    int rows, cols;
    std::vector<double> data;
    try {
      rows = tj.at("rows").get<int>();
      cols = tj.at("cols").get<int>();
      data = tj.at("data").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw Error::format("malformed tensor '" + name + "' in " + path + ": " + e.what());
    }
    if (rows != t.rows() || cols != t.cols() || data.size() != t.size())
      throw Error::format("tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", expected " + std::to_string(t.rows()) + "x" +
                          std::to_string(t.cols()) + " in " + path);
    t.data() = std::move(data);
  });
  return m;
}

// ---------------------------------------------------------------------------
// Forward pass.

static constexpr double kLnEps = 1e-5;

Tensor layer_norm_rows(const Tensor& x, const LayerNormParams& p) {
  Tensor out(x.rows(), x.cols());
  const int d = x.cols();
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
    double* oi = out.row(i);
    for (int c = 0; c < d; ++c)
      oi[c] = (1.0 + p.gain.at(0, c)) * ((xi[c] - mean) * inv) + p.bias.at(0, c);
  }
  return out;
}

Tensor positional_encoding(int n_positions, int d) {
  Tensor pe(n_positions, d);
  for (int pos = 0; pos < n_positions; ++pos) {
    for (int i = 0; i + 1 < d; i += 2) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / d);
      pe.at(pos, i) = std::sin(pos * freq);
      pe.at(pos, i + 1) = std::cos(pos * freq);
    }
    if (d % 2 == 1) pe.at(pos, d - 1) = std::sin(pos * std::exp(-std::log(10000.0) * (d - 1.0) / d));
  }
  return pe;
}

std::vector<double> log_softmax(std::span<const double> scores) {
  const double lse = log_sum_exp(scores);
  std::vector<double> out(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] - lse;
  return out;
}

namespace {

// Multi-head attention with packed head projections. Queries come from aq,
// keys/values from am. Scores are scaled by 1/sqrt(d) and optionally causal.
Tensor multi_head_attention(const Tensor& aq, const Tensor& am, const AttentionParams& p,
                            int n_heads, int d, bool causal, Tensor* attn_rows_out) {
  const int dn = d / n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor q = matmul(aq, p.wq);
  Tensor k = matmul(am, p.wk);
  Tensor v = matmul(am, p.wv);
  Tensor z(aq.rows(), d);
  if (attn_rows_out) *attn_rows_out = Tensor(n_heads * aq.rows(), am.rows());
  std::vector<double> scores(am.rows());
  for (int n = 0; n < n_heads; ++n) {
    const int off = n * dn;
    for (int i = 0; i < aq.rows(); ++i) {
      const int limit = causal ? i + 1 : am.rows();
      for (int j = 0; j < limit; ++j) {
        double s = 0.0;
        for (int c = 0; c < dn; ++c) s += q.at(i, off + c) * k.at(j, off + c);
        scores[j] = s * scale;
      }
      softmax_inplace({scores.data(), static_cast<size_t>(limit)});
      for (int j = limit; j < am.rows(); ++j) scores[j] = 0.0;
      if (attn_rows_out)
        for (int j = 0; j < am.rows(); ++j) attn_rows_out->at(n * aq.rows() + i, j) = scores[j];
      for (int j = 0; j < limit; ++j) {
        const double w = scores[j];
        for (int c = 0; c < dn; ++c) z.at(i, off + c) += w * v.at(j, off + c);
      }
    }
  }
  return matmul(z, p.wo);
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p) {
  Tensor h = matmul(x, p.w1);
  for (int i = 0; i < h.rows(); ++i)
    for (int c = 0; c < h.cols(); ++c) {
      double v = h.at(i, c) + p.b1.at(0, c);
      h.at(i, c) = v > 0.0 ? v : 0.0;
    }
  Tensor out = matmul(h, p.w2);
  for (int i = 0; i < out.rows(); ++i)
    for (int c = 0; c < out.cols(); ++c) out.at(i, c) += p.b2.at(0, c);
  return out;
}

void check_tokens(std::span<const int> tokens, int vocab, const char* side) {
  for (int t : tokens)
    if (t < 0 || t >= vocab)
      throw Error::data(std::string("unknown ") + side + " token id " + std::to_string(t));
}

}  // namespace

ModelState encode(const Model& m, std::span<const int> src_tokens) {
  if (src_tokens.empty()) throw Error::data("cannot encode an empty source sentence");
  check_tokens(src_tokens, m.config.src_vocab, "source");
  const int S = static_cast<int>(src_tokens.size());
  const int d = m.config.d;
  const double emb_scale = std::sqrt(static_cast<double>(d));
  Tensor pe = positional_encoding(S, d);
  Tensor x(S, d);
  for (int i = 0; i < S; ++i) {
    const double* e = m.src_embed.row(src_tokens[i]);
    for (int c = 0; c < d; ++c) x.at(i, c) = e[c] * emb_scale + pe.at(i, c);
  }
  for (const auto& layer : m.encoder) {
    Tensor a = layer_norm_rows(x, layer.ln_self);
    add_inplace(x, multi_head_attention(a, a, layer.self_attn, m.config.n_heads, d, false, nullptr));
    Tensor b = layer_norm_rows(x, layer.ln_ff);
    add_inplace(x, feed_forward(b, layer.ff));
  }
  ModelState state;
  state.enc_out = layer_norm_rows(x, m.enc_norm);
  state.src_tokens.assign(src_tokens.begin(), src_tokens.end());
  state.cross_k.reserve(m.decoder.size());
  state.cross_v.reserve(m.decoder.size());
  for (const auto& layer : m.decoder) {
    state.cross_k.push_back(matmul(state.enc_out, layer.cross_attn.wk));
    state.cross_v.push_back(matmul(state.enc_out, layer.cross_attn.wv));
  }
  state.self_k.assign(m.decoder.size(), Tensor(0, d));
  state.self_v.assign(m.decoder.size(), Tensor(0, d));
  return state;
}

std::vector<double> decode_step(const Model& m, ModelState& state, int y_prev) {
  check_tokens({&y_prev, 1}, m.config.tgt_vocab, "target");
  const int d = m.config.d;
  const int n_heads = m.config.n_heads;
  const int dn = d / n_heads;
  const int t = state.steps();
  const int S = state.src_len();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const double emb_scale = std::sqrt(static_cast<double>(d));

  Tensor pe = positional_encoding(t + 1, d);
  Tensor x(1, d);
  {
    const double* e = m.tgt_embed.row(y_prev);
    for (int c = 0; c < d; ++c) x.at(0, c) = e[c] * emb_scale + pe.at(t, c);
  }

  Tensor g(static_cast<int>(m.decoder.size()), d);
  Tensor attn_rows(static_cast<int>(m.decoder.size()) * n_heads, S);

  for (size_t l = 0; l < m.decoder.size(); ++l) {
    const DecoderLayer& layer = m.decoder[l];
    // Self-attention over the cached prefix plus this step.
    Tensor a = layer_norm_rows(x, layer.ln_self);
    state.self_k[l].append_row(matmul(a, layer.self_attn.wk).row_span(0));
    state.self_v[l].append_row(matmul(a, layer.self_attn.wv).row_span(0));
    Tensor q = matmul(a, layer.self_attn.wq);
    Tensor z(1, d);
    std::vector<double> scores(t + 1);
    for (int n = 0; n < n_heads; ++n) {
      const int off = n * dn;
      for (int j = 0; j <= t; ++j) {
        double s = 0.0;
        for (int c = 0; c < dn; ++c) s += q.at(0, off + c) * state.self_k[l].at(j, off + c);
        scores[j] = s * scale;
      }
      softmax_inplace(scores);
      for (int j = 0; j <= t; ++j) {
        const double w = scores[j];
        for (int c = 0; c < dn; ++c) z.at(0, off + c) += w * state.self_v[l].at(j, off + c);
      }
    }
    add_inplace(x, matmul(z, layer.self_attn.wo));
    for (int c = 0; c < d; ++c) g.at(static_cast<int>(l), c) = x.at(0, c);

    // Cross-attention over the encoder output.
    Tensor cq = matmul(layer_norm_rows(x, layer.ln_cross), layer.cross_attn.wq);
    Tensor cz(1, d);
    std::vector<double> cscores(S);
    for (int n = 0; n < n_heads; ++n) {
      const int off = n * dn;
      for (int j = 0; j < S; ++j) {
        double s = 0.0;
        for (int c = 0; c < dn; ++c) s += cq.at(0, off + c) * state.cross_k[l].at(j, off + c);
        cscores[j] = s * scale;
      }
      softmax_inplace(cscores);
      for (int j = 0; j < S; ++j) attn_rows.at(static_cast<int>(l) * n_heads + n, j) = cscores[j];
      for (int j = 0; j < S; ++j) {
        const double w = cscores[j];
        for (int c = 0; c < dn; ++c) cz.at(0, off + c) += w * state.cross_v[l].at(j, off + c);
      }
    }
    add_inplace(x, matmul(cz, layer.cross_attn.wo));

    Tensor e = layer_norm_rows(x, layer.ln_ff);
    add_inplace(x, feed_forward(e, layer.ff));
  }

  Tensor out = layer_norm_rows(x, m.dec_norm);
  Tensor logits = matmul(out, m.out_proj);
  std::vector<double> logit_row(logits.row(0), logits.row(0) + logits.cols());

  state.self_out.push_back(std::move(g));
  state.attn.push_back(std::move(attn_rows));
  state.logits.push_back(logit_row);
  state.fed.push_back(y_prev);
  return logit_row;
}

}  // namespace alnbeam
