#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "alnbeam/align.h"
#include "alnbeam/constraints.h"
#include "alnbeam/model.h"

namespace alnbeam {

enum class DecodeMethod { kNone, kReplace, kVdba, kAlignVdba };
DecodeMethod decode_method_from_string(const std::string& name);
std::string to_string(DecodeMethod m);

struct DecodeConfig {
  int beam = 5;
  int max_len = 0;  // <= 0: source length + constraint tokens + 8
  DecodeMethod method = DecodeMethod::kNone;
  AlignMethod align_method = AlignMethod::kPostAln;
  double threshold = 0.1;
  double temperature = 2.0;  // +inf drops the alignment term from scores
  int layer = -1;            // attention layer for naive/shift, -1 = penultimate
  bool length_norm = false;
  void validate() const;
};

// Opaque per-hypothesis decoder state; concrete scorers define the contents.
class DecoderState {
 public:
  virtual ~DecoderState() = default;
};

// What the search needs from a model: next-token log probabilities and an
// alignment distribution for a candidate token. Kept abstract so tests can
// drive the decoders with constructed scores.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual int vocab() const = 0;
  virtual int eos() const = 0;
  virtual int src_len() const = 0;
  // State ready to score the first output token (BOS already consumed).
  virtual std::shared_ptr<const DecoderState> start() const = 0;
  virtual std::shared_ptr<const DecoderState> advance(const DecoderState& s, int y) const = 0;
  virtual const std::vector<double>& log_probs(const DecoderState& s) const = 0;
  // Distribution over source positions for emitting y next.
  virtual std::vector<double> align_dist(const DecoderState& s, int y) const = 0;
};

class ModelScorer : public Scorer {
 public:
  ModelScorer(const Model& m, const AlignHead* head, AlignMethod method, int layer,
              std::span<const int> src);

  int vocab() const override { return model_.config.tgt_vocab; }
  int eos() const override { return model_.config.eos_id; }
  int src_len() const override { return src_len_; }
  std::shared_ptr<const DecoderState> start() const override;
  std::shared_ptr<const DecoderState> advance(const DecoderState& s, int y) const override;
  const std::vector<double>& log_probs(const DecoderState& s) const override;
  std::vector<double> align_dist(const DecoderState& s, int y) const override;

 private:
  struct State;
  const Model& model_;
  const AlignHead* head_;
  AlignMethod method_;
  int layer_;
  int src_len_;
  std::shared_ptr<const DecoderState> start_;
};

struct Hypothesis {
  std::vector<int> tokens;
  double log_score = 0.0;
  ConstraintProgress progress;
  std::shared_ptr<const DecoderState> state;
  std::vector<int> alignments;  // one hard alignment per emitted token
  bool fallback = false;        // finished without all constraints met
};

struct DecodeResult {
  Hypothesis best;
  std::vector<int> satisfied, unsatisfied;  // constraint ids
  long long micros = 0;
};

// Per-step candidate log, for tests that inspect candidate sets.
struct StepTrace {
  struct Candidate {
    std::vector<int> tokens;
    ConstraintProgress progress;
    double score = 0.0;
    int constraint = -1;
  };
  std::vector<std::vector<Candidate>> steps;
};

// log P(y) plus the tempered log alignment mass on [span_begin, span_end].
// Zero mass yields -inf (the candidate is dropped).
double joint_score(double token_logprob, std::span<const double> align_dist, int span_begin,
                   int span_end, double temperature);

std::vector<Hypothesis> beam_search(const Scorer& scorer, const DecodeConfig& config);
DecodeResult replace_decode(const Scorer& scorer, const ConstraintSet& cs,
                            const DecodeConfig& config);
DecodeResult vdba_decode(const Scorer& scorer, const ConstraintSet& cs, const DecodeConfig& config,
                         StepTrace* trace = nullptr);
DecodeResult align_vdba_decode(const Scorer& scorer, const ConstraintSet& cs,
                               const DecodeConfig& config, StepTrace* trace = nullptr);

}  // namespace alnbeam
