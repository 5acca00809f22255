#include "alnbeam/align.h"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "alnbeam/error.h"
#include "alnbeam/io.h"
#include "alnbeam/model_train.h"
#include "alnbeam/rng.h"

namespace alnbeam {

using nlohmann::json;

void Alignment::add(int src, int tgt, bool sure) {
  if (src < 0 || tgt < 0) throw Error::data("alignment link indices must be non-negative");
  all_.insert({src, tgt});
  if (sure) sure_.insert({src, tgt});
}

Alignment parse_pharaoh_line(const std::string& line) {
  Alignment a;
  for (const std::string& tok : split_ws(line)) {
    size_t sep = tok.find_first_of("-?");
    if (sep == std::string::npos || sep == 0 || sep + 1 >= tok.size())
      throw Error::format("bad pharaoh link: '" + tok + "'");
    int s, t;
    try {
      s = std::stoi(tok.substr(0, sep));
      t = std::stoi(tok.substr(sep + 1));
    } catch (const std::exception&) {
      throw Error::format("bad pharaoh link: '" + tok + "'");
    }
    a.add(s, t, tok[sep] == '-');
  }
  return a;
}

std::string format_pharaoh_line(const Alignment& a) {
  std::string out;
  bool first = true;
  for (const auto& [s, t] : a.all()) {
    if (!first) out += ' ';
    first = false;
    out += std::to_string(s);
    out += a.has_sure(s, t) ? '-' : '?';
    out += std::to_string(t);
  }
  return out;
}

std::vector<Alignment> read_pharaoh(const std::string& path) {
  std::vector<Alignment> out;
  std::string content = read_file(path);
  size_t pos = 0;
  while (pos <= content.size()) {
    size_t nl = content.find('\n', pos);
    if (nl == std::string::npos) {
      if (pos < content.size()) out.push_back(parse_pharaoh_line(content.substr(pos)));
      break;
    }
    out.push_back(parse_pharaoh_line(content.substr(pos, nl - pos)));
    pos = nl + 1;
  }
  return out;
}

void write_pharaoh(const std::string& path, const std::vector<Alignment>& alignments) {
  std::string out;
  for (const auto& a : alignments) {
    out += format_pharaoh_line(a);
    out += '\n';
  }
  write_file(path, out);
}

AlignMethod align_method_from_string(const std::string& name) {
  if (name == "naive") return AlignMethod::kNaive;
  if (name == "shift") return AlignMethod::kShift;
  if (name == "prior") return AlignMethod::kPrior;
  if (name == "shift-aet" || name == "shift_aet") return AlignMethod::kShiftAet;
  if (name == "postaln") return AlignMethod::kPostAln;
  throw Error::config("unknown alignment method: " + name);
}

std::string to_string(AlignMethod m) {
  switch (m) {
    case AlignMethod::kNaive: return "naive";
    case AlignMethod::kShift: return "shift";
    case AlignMethod::kPrior: return "prior";
    case AlignMethod::kShiftAet: return "shift-aet";
    case AlignMethod::kPostAln: return "postaln";
  }
  return "?";
}

bool method_needs_head(AlignMethod m) {
  return m == AlignMethod::kPrior || m == AlignMethod::kShiftAet || m == AlignMethod::kPostAln;
}

bool method_is_posterior(AlignMethod m) {
  return m == AlignMethod::kShift || m == AlignMethod::kShiftAet || m == AlignMethod::kPostAln;
}

size_t AlignHead::param_count() const {
  size_t n = 0;
  for (const auto& t : wq) n += t.size();
  for (const auto& t : wk) n += t.size();
  return n;
}

AlignHead init_align_head(int d, int n_heads, bool posterior, uint64_t seed) {
  if (d <= 0 || n_heads <= 0 || d % n_heads != 0)
    throw Error::config("align head requires d divisible by n_heads");
  AlignHead h;
  h.d = d;
  h.n_heads = n_heads;
  h.query_dim = posterior ? 2 * d : d;
  Rng rng(seed);
  const int dn = d / n_heads;
  for (int n = 0; n < n_heads; ++n) {
    Tensor q(h.query_dim, dn), k(d, dn);
    for (double& v : q.data()) v = rng.uniform(-0.1, 0.1);
    for (double& v : k.data()) v = rng.uniform(-0.1, 0.1);
    h.wq.push_back(std::move(q));
    h.wk.push_back(std::move(k));
  }
  return h;
}

static constexpr const char* kHeadFormat = "alnbeam-align-head";
static constexpr int kHeadVersion = 1;

void save_align_head(const AlignHead& h, const std::string& path) {
  json j;
  j["format"] = kHeadFormat;
  j["version"] = kHeadVersion;
  j["config"] = {{"d", h.d}, {"n_heads", h.n_heads}, {"query_dim", h.query_dim}};
  json tensors = json::object();
  for (int n = 0; n < h.n_heads; ++n) {
    tensors["wq" + std::to_string(n)] = {{"rows", h.wq[n].rows()}, {"cols", h.wq[n].cols()},
                                         {"data", h.wq[n].data()}};
    tensors["wk" + std::to_string(n)] = {{"rows", h.wk[n].rows()}, {"cols", h.wk[n].cols()},
                                         {"data", h.wk[n].data()}};
  }
  j["tensors"] = std::move(tensors);
  write_file(path, j.dump());
}

AlignHead load_align_head(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw Error::format("align head file is not valid JSON (" + path + "): " + e.what());
  }
  if (!j.contains("format") || j["format"] != kHeadFormat)
    throw Error::format("not an align head file: " + path);
  if (!j.contains("version") || j["version"].get<int>() != kHeadVersion)
    throw Error::format("unsupported align head version in " + path);
  AlignHead h;
  try {
    h.d = j.at("config").at("d").get<int>();
    h.n_heads = j.at("config").at("n_heads").get<int>();
    h.query_dim = j.at("config").at("query_dim").get<int>();
  } catch (const json::exception& e) {
    throw Error::format("bad align head config in " + path + ": " + e.what());
  }
  if (h.d <= 0 || h.n_heads <= 0 || h.d % h.n_heads != 0 ||
      (h.query_dim != h.d && h.query_dim != 2 * h.d))
    throw Error::format("inconsistent align head dimensions in " + path);
  const int dn = h.d / h.n_heads;
  for (int n = 0; n < h.n_heads; ++n) {
    for (const char* kind : {"wq", "wk"}) {
      const std::string name = std::string(kind) + std::to_string(n);
      if (!j.at("tensors").contains(name))
        throw Error::format("missing tensor '" + name + "' in " + path);
      const json& tj = j.at("tensors").at(name);
      const int want_rows = kind[1] == 'q' ? h.query_dim : h.d;
      Tensor t(want_rows, dn);
      std::vector<double> data;
      int rows, cols;
      try {
        rows = tj.at("rows").get<int>();
        cols = tj.at("cols").get<int>();
        data = tj.at("data").get<std::vector<double>>();
      } catch (const json::exception& e) {
        throw Error::format("malformed tensor '" + name + "' in " + path + ": " + e.what());
      }
      if (rows != want_rows || cols != dn || data.size() != t.size())
        throw Error::format("tensor '" + name + "' has wrong shape in " + path);
      t.data() = std::move(data);
      (kind[1] == 'q' ? h.wq : h.wk).push_back(std::move(t));
    }
  }
  return h;
}

std::vector<double> align_head_attention(const AlignHead& head, std::span<const double> query,
                                         const Tensor& H) {
  if (static_cast<int>(query.size()) != head.query_dim)
    throw Error::state("align head query width mismatch");
  if (H.cols() != head.d) throw Error::state("align head key width mismatch");
  const int S = H.rows();
  const int dn = head.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(head.d));
  std::vector<double> avg(S, 0.0);
  std::vector<double> scores(S);
  for (int n = 0; n < head.n_heads; ++n) {
    // q = query · wq,  K = H · wk,  scores = q Kᵀ / sqrt(d)
    std::vector<double> q(dn, 0.0);
    for (int r = 0; r < head.query_dim; ++r) {
      const double f = query[r];
      if (f == 0.0) continue;
      for (int c = 0; c < dn; ++c) q[c] += f * head.wq[n].at(r, c);
    }
    for (int j = 0; j < S; ++j) {
      double s = 0.0;
      const double* hrow = H.row(j);
      for (int c = 0; c < dn; ++c) {
        double kv = 0.0;
        for (int r = 0; r < head.d; ++r) kv += hrow[r] * head.wk[n].at(r, c);
        s += q[c] * kv;
      }
      scores[j] = s * scale;
    }
    softmax_inplace(scores);
    for (int j = 0; j < S; ++j) avg[j] += scores[j];
  }
  for (double& v : avg) v /= head.n_heads;
  return avg;
}

namespace {

void check_step(const ModelState& state, int step) {
  if (step < 0 || step >= state.steps())
    throw Error::state("decode step " + std::to_string(step) + " not cached (state has " +
                       std::to_string(state.steps()) + " steps)");
}

int state_layers(const ModelState& state) { return static_cast<int>(state.cross_k.size()); }

int state_heads(const ModelState& state, int layers) {
  return layers > 0 && !state.attn.empty() ? state.attn[0].rows() / layers : 0;
}

}  // namespace

std::vector<double> naive_att(const ModelState& state, int layer, int step) {
  check_step(state, step);
  const int L = state_layers(state);
  if (layer < 0 || layer >= L)
    throw Error::state("decoder layer " + std::to_string(layer) + " out of range");
  const int eta = state_heads(state, L);
  const int S = state.src_len();
  std::vector<double> avg(S, 0.0);
  for (int n = 0; n < eta; ++n) {
    auto row = state.attn_row(step, layer, n, eta);
    for (int j = 0; j < S; ++j) avg[j] += row[j];
  }
  for (double& v : avg) v /= eta;
  return avg;
}

// Reuses the cached step t+1 when the state already contains it with the same
// input token; otherwise advances a copy.
static const ModelState& ensure_next_step(const Model& m, const ModelState& state, int step,
                                          int y_t, ModelState& scratch) {
  if (step + 1 < state.steps()) {
    if (state.fed[step + 1] == y_t) return state;
    throw Error::state("state already contains step " + std::to_string(step + 1) +
                       " with a different token");
  }
  scratch = state;
  decode_step(m, scratch, y_t);
  return scratch;
}

std::vector<double> shift_att(const Model& m, const ModelState& state, int layer, int step,
                              int y_t) {
  check_step(state, step);
  ModelState scratch;
  const ModelState& next = ensure_next_step(m, state, step, y_t, scratch);
  return naive_att(next, layer, step + 1);
}

std::vector<double> posterior_align(const AlignHead& head, const Model& m, const ModelState& state,
                                    int step, int y_t) {
  check_step(state, step);
  if (!head.posterior()) throw Error::state("posterior_align requires a posterior head");
  if (y_t < 0 || y_t >= m.config.tgt_vocab)
    throw Error::data("unknown target token id " + std::to_string(y_t));
  const int d = m.config.d;
  std::vector<double> query(2 * d);
  auto g = state.g_row(step, m.config.align_layer());
  const double* e = m.tgt_embed.row(y_t);
  for (int c = 0; c < d; ++c) query[c] = g[c];
  for (int c = 0; c < d; ++c) query[d + c] = e[c];
  return align_head_attention(head, query, state.enc_out);
}

std::vector<double> prior_align(const AlignHead& head, const ModelState& state, int step) {
  check_step(state, step);
  if (head.posterior()) throw Error::state("prior_align requires a prior head");
  const int L = state_layers(state);
  auto g = state.g_row(step, L - 2 >= 0 ? L - 2 : 0);
  return align_head_attention(head, g, state.enc_out);
}

std::vector<double> shift_aet(const AlignHead& head, const Model& m, const ModelState& state,
                              int step, int y_t) {
  check_step(state, step);
  if (head.posterior()) throw Error::state("shift_aet requires a prior-style head");
  ModelState scratch;
  const ModelState& next = ensure_next_step(m, state, step, y_t, scratch);
  return prior_align(head, next, step + 1);
}

int hard_align(std::span<const double> dist) {
  if (dist.empty()) throw Error::data("hard_align on an empty distribution");
  int best = 0;
  for (int j = 1; j < static_cast<int>(dist.size()); ++j)
    if (dist[j] > dist[best]) best = j;
  return best;
}

Alignment project_subword_to_word(const Alignment& a, std::span<const int> src_map,
                                  std::span<const int> tgt_map) {
  Alignment out;
  for (const auto& [s, t] : a.all()) {
    if (s >= static_cast<int>(src_map.size()) || t >= static_cast<int>(tgt_map.size()))
      throw Error::data("piece index outside the piece-to-word map");
    out.add(src_map[s], tgt_map[t], a.has_sure(s, t));
  }
  return out;
}

Alignment transpose_alignment(const Alignment& a) {
  Alignment out;
  for (const auto& [s, t] : a.all()) out.add(t, s, a.has_sure(s, t));
  return out;
}

Alignment symmetrize_grow_diag(const Alignment& fwd, const Alignment& rev, bool final_and) {
  std::set<std::pair<int, int>> uni, cur;
  for (const auto& l : fwd.all()) uni.insert(l);
  for (const auto& l : rev.all()) uni.insert(l);
  for (const auto& l : fwd.all())
    if (rev.all().count(l)) cur.insert(l);

  std::set<int> src_cov, tgt_cov;
  for (const auto& [s, t] : cur) {
    src_cov.insert(s);
    tgt_cov.insert(t);
  }

  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<std::pair<int, int>> snapshot(cur.begin(), cur.end());
    for (const auto& [s, t] : snapshot) {
      for (int ds = -1; ds <= 1; ++ds) {
        for (int dt = -1; dt <= 1; ++dt) {
          if (ds == 0 && dt == 0) continue;
          const std::pair<int, int> cand{s + ds, t + dt};
          if (cur.count(cand) || !uni.count(cand)) continue;
          if (src_cov.count(cand.first) && tgt_cov.count(cand.second)) continue;
          cur.insert(cand);
          src_cov.insert(cand.first);
          tgt_cov.insert(cand.second);
          changed = true;
        }
      }
    }
  }

  if (final_and) {
    for (const auto& [s, t] : uni) {
      if (cur.count({s, t})) continue;
      if (src_cov.count(s) || tgt_cov.count(t)) continue;
      cur.insert({s, t});
      src_cov.insert(s);
      tgt_cov.insert(t);
    }
  }

  Alignment out;
  for (const auto& [s, t] : cur) out.add(s, t, true);
  return out;
}

double aer(const Alignment& pred, const Alignment& gold) {
  const auto& A = pred.all();
  size_t a_and_p = 0, a_and_s = 0;
  for (const auto& l : A) {
    if (gold.all().count(l)) ++a_and_p;
    if (gold.sure().count(l)) ++a_and_s;
  }
  const size_t denom = A.size() + gold.sure().size();
  if (denom == 0) return 0.0;
  return 1.0 - static_cast<double>(a_and_p + a_and_s) / static_cast<double>(denom);
}

// ---------------------------------------------------------------------------
// Training.

Tensor supervision_from_alignment(const Alignment& a, int tgt_len, int src_len) {
  Tensor s(tgt_len, src_len);
  for (const auto& [src, tgt] : a.all()) {
    if (src >= src_len || tgt >= tgt_len)
      throw Error::data("supervision link (" + std::to_string(src) + "," + std::to_string(tgt) +
                        ") outside sentence bounds");
    s.at(tgt, src) = 1.0;
  }
  return s;
}

AlignTrainExample build_align_example(const Model& m, std::span<const int> src,
                                      std::span<const int> tgt, const Tensor& supervision,
                                      AlignMethod method) {
  const int T = static_cast<int>(tgt.size());
  const int S = static_cast<int>(src.size());
  if (supervision.rows() != T || supervision.cols() != S)
    throw Error::data("supervision matrix is " + std::to_string(supervision.rows()) + "x" +
                      std::to_string(supervision.cols()) + ", expected " + std::to_string(T) + "x" +
                      std::to_string(S));
  const int d = m.config.d;
  ModelState state = encode(m, src);
  // Forced decode: feed BOS then the gold target. shift-aet reads the decoder
  // state one step late, so it needs the step that consumes the last token.
  const int extra = method == AlignMethod::kShiftAet ? 1 : 0;
  decode_step(m, state, m.config.bos_id);
  for (int t = 0; t + 1 < T + extra; ++t) decode_step(m, state, tgt[t]);

  AlignTrainExample ex;
  ex.H = state.enc_out;
  ex.supervision = supervision;
  const int layer = m.config.align_layer();
  if (method == AlignMethod::kPostAln) {
    ex.queries = Tensor(T, 2 * d);
    for (int t = 0; t < T; ++t) {
      auto g = state.g_row(t, layer);
      const double* e = m.tgt_embed.row(tgt[t]);
      for (int c = 0; c < d; ++c) ex.queries.at(t, c) = g[c];
      for (int c = 0; c < d; ++c) ex.queries.at(t, d + c) = e[c];
    }
  } else if (method == AlignMethod::kPrior) {
    ex.queries = Tensor(T, d);
    for (int t = 0; t < T; ++t) {
      auto g = state.g_row(t, layer);
      for (int c = 0; c < d; ++c) ex.queries.at(t, c) = g[c];
    }
  } else if (method == AlignMethod::kShiftAet) {
    ex.queries = Tensor(T, d);
    for (int t = 0; t < T; ++t) {
      auto g = state.g_row(t + 1, layer);
      for (int c = 0; c < d; ++c) ex.queries.at(t, c) = g[c];
    }
  } else {
    throw Error::config("align method " + to_string(method) + " has no trainable head");
  }
  return ex;
}

double align_loss_and_grad(const AlignHead& head, const AlignTrainExample& ex,
                           std::vector<Tensor>* gwq, std::vector<Tensor>* gwk) {
  const int T = ex.queries.rows();
  const int S = ex.H.rows();
  const int dn = head.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(head.d));
  if (ex.supervision.rows() != T || ex.supervision.cols() != S)
    throw Error::data("supervision matrix does not match cached features");
  if (ex.queries.cols() != head.query_dim)
    throw Error::data("cached queries do not match head query width");
  if (T == 0) return 0.0;

  std::vector<Tensor> Q(head.n_heads), K(head.n_heads), A(head.n_heads);
  Tensor P(T, S);
  for (int n = 0; n < head.n_heads; ++n) {
    Q[n] = matmul(ex.queries, head.wq[n]);  // T×dn
    K[n] = matmul(ex.H, head.wk[n]);        // S×dn
    Tensor Z = matmul(Q[n], transpose(K[n]));
    scale_inplace(Z, scale);
    A[n] = softmax_rows(Z);
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < S; ++j) P.at(t, j) += A[n].at(t, j);
  }
  scale_inplace(P, 1.0 / head.n_heads);

  double loss = 0.0;
  Tensor dP(T, S);
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < S; ++j) {
      if (ex.supervision.at(t, j) == 0.0) continue;
      const double p = std::max(P.at(t, j), 1e-300);
      loss -= std::log(p);
      dP.at(t, j) = -1.0 / (p * T);
    }
  }
  loss /= T;

  if (gwq && gwk) {
    for (int n = 0; n < head.n_heads; ++n) {
      // Softmax backward per row, then push into the projections.
      Tensor dZ(T, S);
      for (int t = 0; t < T; ++t) {
        double dot = 0.0;
        for (int j = 0; j < S; ++j) {
          const double da = dP.at(t, j) / head.n_heads;
          dot += da * A[n].at(t, j);
        }
        for (int j = 0; j < S; ++j) {
          const double da = dP.at(t, j) / head.n_heads;
          dZ.at(t, j) = A[n].at(t, j) * (da - dot) * scale;
        }
      }
      Tensor dQ = matmul(dZ, K[n]);              // T×dn
      Tensor dK = matmul(transpose(dZ), Q[n]);   // S×dn
      add_inplace((*gwq)[n], matmul(transpose(ex.queries), dQ));
      add_inplace((*gwk)[n], matmul(transpose(ex.H), dK));
    }
  }
  return loss;
}

AlignTrainResult train_align_head(const Model& m, const AlignTrainData& data, AlignMethod method,
                                  const AlignTrainConfig& cfg) {
  if (data.src.size() != data.tgt.size() || data.src.size() != data.supervision.size())
    throw Error::data("align training data lists have different lengths");
  if (!method_needs_head(method))
    throw Error::config("align method " + to_string(method) + " has no trainable head");

  AlignTrainResult result;
  result.head = init_align_head(m.config.d, m.config.n_heads,
                                method == AlignMethod::kPostAln, cfg.seed);
  AlignHead& head = result.head;

  std::vector<AlignTrainExample> examples;
  examples.reserve(data.src.size());
  for (size_t i = 0; i < data.src.size(); ++i)
    examples.push_back(build_align_example(m, data.src[i], data.tgt[i], data.supervision[i], method));

  std::vector<Tensor*> params;
  for (auto& t : head.wq) params.push_back(&t);
  for (auto& t : head.wk) params.push_back(&t);
  AdamState adam;
  adam_init(adam, params);

  Rng rng(cfg.seed);
  std::vector<size_t> order(examples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<Tensor> gwq(head.n_heads), gwk(head.n_heads);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) rng.shuffle(order);
    double epoch_loss = 0.0;
    for (size_t i : order) {
      for (int n = 0; n < head.n_heads; ++n) {
        gwq[n] = Tensor(head.query_dim, head.head_dim());
        gwk[n] = Tensor(head.d, head.head_dim());
      }
      epoch_loss += align_loss_and_grad(head, examples[i], &gwq, &gwk);
      std::vector<const Tensor*> grads;
      for (const auto& t : gwq) grads.push_back(&t);
      for (const auto& t : gwk) grads.push_back(&t);
      if (cfg.optimizer == "adam") {
        adam_step(params, grads, adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
      } else if (cfg.optimizer == "sgd") {
        for (size_t p = 0; p < params.size(); ++p)
          for (size_t k = 0; k < params[p]->size(); ++k)
            params[p]->data()[k] -= cfg.lr * grads[p]->data()[k];
      } else {
        throw Error::config("unknown optimizer: " + cfg.optimizer);
      }
    }
    result.epoch_loss.push_back(epoch_loss / std::max<size_t>(1, examples.size()));
  }

  double final_loss = 0.0;
  for (const auto& ex : examples) final_loss += align_loss_and_grad(head, ex, nullptr, nullptr);
  result.final_loss = final_loss / std::max<size_t>(1, examples.size());
  return result;
}

}  // namespace alnbeam
