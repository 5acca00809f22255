#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "alnbeam/model.h"
#include "alnbeam/tensor.h"

namespace alnbeam {

// Word alignment as a set of (source, target) links. Gold alignments label
// links sure or possible; sure is always a subset of the full link set.
class Alignment {
 public:
  void add(int src, int tgt, bool sure = true);
  bool has(int src, int tgt) const { return all_.count({src, tgt}) > 0; }
  bool has_sure(int src, int tgt) const { return sure_.count({src, tgt}) > 0; }
  const std::set<std::pair<int, int>>& all() const { return all_; }
  const std::set<std::pair<int, int>>& sure() const { return sure_; }
  size_t size() const { return all_.size(); }
  bool empty() const { return all_.empty(); }
  bool operator==(const Alignment& o) const { return all_ == o.all_ && sure_ == o.sure_; }

 private:
  std::set<std::pair<int, int>> all_;   // sure + possible
  std::set<std::pair<int, int>> sure_;
};

// Pharaoh format: one sentence per line, "s-t" for sure links, "s?t" for
// possible-only links, 0-based indices.
std::vector<Alignment> read_pharaoh(const std::string& path);
void write_pharaoh(const std::string& path, const std::vector<Alignment>& alignments);
Alignment parse_pharaoh_line(const std::string& line);
std::string format_pharaoh_line(const Alignment& a);

enum class AlignMethod { kNaive, kShift, kPrior, kShiftAet, kPostAln };
AlignMethod align_method_from_string(const std::string& name);  // config error on junk
std::string to_string(AlignMethod m);
bool method_needs_head(AlignMethod m);
bool method_is_posterior(AlignMethod m);  // conditions on the emitted token

// Learned alignment sub-layer. Posterior heads build queries from the decoder
// state concatenated with the emitted token's embedding (query_dim = 2d);
// prior-style heads use the decoder state alone (query_dim = d).
struct AlignHead {
  int d = 0;
  int n_heads = 0;
  int query_dim = 0;
  std::vector<Tensor> wq;  // per head: query_dim × head_dim
  std::vector<Tensor> wk;  // per head: d × head_dim

  int head_dim() const { return n_heads > 0 ? d / n_heads : 0; }
  bool posterior() const { return query_dim == 2 * d; }
  size_t param_count() const;
};

AlignHead init_align_head(int d, int n_heads, bool posterior, uint64_t seed);
void save_align_head(const AlignHead& h, const std::string& path);
AlignHead load_align_head(const std::string& path);

// Head-averaged attention for an arbitrary query feature vector.
std::vector<double> align_head_attention(const AlignHead& head, std::span<const double> query,
                                         const Tensor& H);

// --- extraction methods -----------------------------------------------------
// `step` indexes decoded output positions: the state must already contain the
// decode step that produced token `step`.

std::vector<double> naive_att(const ModelState& state, int layer, int step);
// Attention one step later, with y_t fed as input; the caller's state is not
// modified.
std::vector<double> shift_att(const Model& m, const ModelState& state, int layer, int step, int y_t);
std::vector<double> posterior_align(const AlignHead& head, const Model& m, const ModelState& state,
                                    int step, int y_t);
std::vector<double> prior_align(const AlignHead& head, const ModelState& state, int step);
std::vector<double> shift_aet(const AlignHead& head, const Model& m, const ModelState& state,
                              int step, int y_t);

int hard_align(std::span<const double> dist);  // argmax, ties to the lowest index

Alignment project_subword_to_word(const Alignment& a, std::span<const int> src_map,
                                  std::span<const int> tgt_map);

// Grow-diag symmetrization: start from the intersection, repeatedly add union
// links 8-adjacent to the current set that touch an uncovered row or column,
// then (optionally) add union links whose row and column are both uncovered.
Alignment symmetrize_grow_diag(const Alignment& fwd, const Alignment& rev, bool final_and = true);

Alignment transpose_alignment(const Alignment& a);

// 1 - (|A∩P| + |A∩S|) / (|A| + |S|); 0 when both A and S are empty.
double aer(const Alignment& pred, const Alignment& gold);

// --- training ----------------------------------------------------------------

struct AlignTrainData {
  std::vector<std::vector<int>> src, tgt;
  std::vector<Tensor> supervision;  // per sentence: T×S binary
};

struct AlignTrainConfig {
  int epochs = 30;
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  std::string optimizer = "adam";  // adam | sgd
  uint64_t seed = 7;
  bool shuffle = true;
};

struct AlignTrainResult {
  AlignHead head;
  double final_loss = 0.0;
  std::vector<double> epoch_loss;
};

// Cached per-sentence features for head training and gradient checks.
struct AlignTrainExample {
  Tensor H;            // S×d
  Tensor queries;      // T×query_dim
  Tensor supervision;  // T×S
};

AlignTrainExample build_align_example(const Model& m, std::span<const int> src,
                                      std::span<const int> tgt, const Tensor& supervision,
                                      AlignMethod method);

// Negative mean supervised log-likelihood for one example; accumulates
// parameter gradients when the buffers are given.
double align_loss_and_grad(const AlignHead& head, const AlignTrainExample& ex,
                           std::vector<Tensor>* gwq, std::vector<Tensor>* gwk);

AlignTrainResult train_align_head(const Model& m, const AlignTrainData& data, AlignMethod method,
                                  const AlignTrainConfig& cfg);

Tensor supervision_from_alignment(const Alignment& a, int tgt_len, int src_len);

}  // namespace alnbeam
