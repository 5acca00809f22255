#pragma once

// Shared helpers for the decode tests and the acceptance suite: a scorer with
// constructed tables, and an exhaustive-enumeration oracle that searches the
// same transition system the beam decoders prune.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "alnbeam/constraints.h"
#include "alnbeam/decode.h"

namespace alnbeam::testsupport {

// Scores come from fixed per-step tables; the alignment distribution for a
// candidate token likewise. Step indexes past the table reuse the last entry.
class TableScorer : public Scorer {
 public:
  struct StepSpec {
    std::vector<double> log_probs;                   // size = vocab
    std::vector<std::vector<double>> align_by_token; // [vocab][src_len]
  };

  TableScorer(int vocab, int eos, int src_len, std::vector<StepSpec> steps)
      : vocab_(vocab), eos_(eos), src_len_(src_len), steps_(std::move(steps)) {}

  int vocab() const override { return vocab_; }
  int eos() const override { return eos_; }
  int src_len() const override { return src_len_; }

  std::shared_ptr<const DecoderState> start() const override {
    auto s = std::make_shared<State>();
    s->step = 0;
    return s;
  }
  std::shared_ptr<const DecoderState> advance(const DecoderState& s, int) const override {
    auto next = std::make_shared<State>();
    next->step = static_cast<const State&>(s).step + 1;
    return next;
  }
  const std::vector<double>& log_probs(const DecoderState& s) const override {
    return spec(static_cast<const State&>(s).step).log_probs;
  }
  std::vector<double> align_dist(const DecoderState& s, int y) const override {
    const StepSpec& sp = spec(static_cast<const State&>(s).step);
    if (sp.align_by_token.empty()) return std::vector<double>(src_len_, 1.0 / src_len_);
    return sp.align_by_token[y];
  }

 private:
  struct State : DecoderState {
    int step = 0;
  };
  const StepSpec& spec(int step) const {
    return steps_[std::min<size_t>(step, steps_.size() - 1)];
  }
  int vocab_, eos_, src_len_;
  std::vector<StepSpec> steps_;
};

// Uniform token scores with EOS forbidden before min_len: every sequence of a
// given length ties exactly, so any placement preference must come from the
// alignment term.
inline std::vector<TableScorer::StepSpec> uniform_steps(int vocab, int eos, int min_len,
                                                        int src_len,
                                                        std::vector<double> span_mass_by_step,
                                                        int span_pos) {
  std::vector<TableScorer::StepSpec> steps;
  const int n_steps = static_cast<int>(span_mass_by_step.size());
  for (int t = 0; t <= n_steps; ++t) {
    TableScorer::StepSpec sp;
    const double eos_p = t < min_len ? 1e-9 : (t >= n_steps ? 1.0 - 1e-9 : 1e-9);
    const double tok_p = (1.0 - eos_p) / (vocab - 1);
    sp.log_probs.assign(vocab, std::log(tok_p));
    sp.log_probs[eos] = std::log(eos_p);
    const double mass = t < n_steps ? span_mass_by_step[t] : 0.5;
    std::vector<double> dist(src_len, (1.0 - mass) / (src_len - 1));
    dist[span_pos] = mass;
    sp.align_by_token.assign(vocab, dist);
    steps.push_back(std::move(sp));
  }
  return steps;
}

struct OracleBest {
  std::vector<int> tokens;
  double score = -std::numeric_limits<double>::infinity();
  bool found = false;
};

// Depth-first enumeration of every (sequence, interpretation) path. Mirrors
// the decoders' scoring rules exactly but searches exhaustively.
inline void oracle_dfs(const Scorer& scorer, const ConstraintSet& cs, const DecodeConfig& cfg,
                       bool align_scoring, const DecoderState& state,
                       const ConstraintProgress& progress, std::vector<int>& tokens, double score,
                       int max_len, OracleBest& best) {
  const auto& lp = scorer.log_probs(state);
  if (progress.all_met(cs)) {
    const double final_score = score + lp[scorer.eos()];
    if (final_score > best.score ||
        (final_score == best.score && (!best.found || tokens < best.tokens))) {
      best.tokens = tokens;
      best.score = final_score;
      best.found = true;
    }
  }
  if (static_cast<int>(tokens.size()) >= max_len) return;
  for (int y = 0; y < scorer.vocab(); ++y) {
    if (y == scorer.eos()) continue;
    std::shared_ptr<const DecoderState> next_state;
    for (const auto& su : advance(progress, cs, y)) {
      double step_score = lp[y];
      if (su.constraint >= 0 && align_scoring) {
        const auto dist = scorer.align_dist(state, y);
        const Constraint& c = cs.items[su.constraint];
        double mass = 0.0;
        for (int j = std::max(0, c.src_begin);
             j <= c.src_end && j < static_cast<int>(dist.size()); ++j)
          mass += dist[j];
        if (!(mass > cfg.threshold)) continue;
        if (std::isfinite(cfg.temperature)) step_score += std::log(mass) / cfg.temperature;
      }
      if (!next_state) next_state = scorer.advance(state, y);
      tokens.push_back(y);
      oracle_dfs(scorer, cs, cfg, align_scoring, *next_state, su.next, tokens,
                 score + step_score, max_len, best);
      tokens.pop_back();
    }
  }
}

inline OracleBest exhaustive_best(const Scorer& scorer, const ConstraintSet& cs,
                                  const DecodeConfig& cfg, bool align_scoring, int max_len) {
  OracleBest best;
  std::vector<int> tokens;
  auto start = scorer.start();
  ConstraintProgress progress;
  oracle_dfs(scorer, cs, cfg, align_scoring, *start, progress, tokens, 0.0, max_len, best);
  return best;
}

}  // namespace alnbeam::testsupport
