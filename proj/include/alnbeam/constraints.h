#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "alnbeam/align.h"
#include "alnbeam/io.h"

namespace alnbeam {

// A source span (inclusive) paired with the target tokens that must appear in
// the translation. Spans of distinct constraints in a sentence never overlap.
struct Constraint {
  int src_begin = 0;
  int src_end = 0;
  std::vector<int> tgt_tokens;

  int length() const { return static_cast<int>(tgt_tokens.size()); }
  bool covers(int src_pos) const { return src_pos >= src_begin && src_pos <= src_end; }
};

struct ConstraintSet {
  std::vector<Constraint> items;
  // Constraints whose tokens cannot be produced (e.g. out-of-vocabulary) are
  // kept for reporting but never enforced.
  std::vector<bool> feasible;

  int size() const { return static_cast<int>(items.size()); }
  bool is_feasible(int id) const { return feasible.empty() ? true : feasible[id]; }
  int total_tokens() const;  // over feasible constraints
  void validate() const;
};

// Per-hypothesis satisfaction state. met_token_count equals the sum of met
// constraint lengths plus the in-progress offset, and doubles as the bank id.
struct ConstraintProgress {
  uint32_t met = 0;      // bitmask over constraint ids
  int in_progress = -1;  // constraint id, -1 when none
  int offset = 0;        // tokens consumed of in_progress, in [1, len-1]
  int met_token_count = 0;

  bool is_met(int id) const { return (met >> id) & 1u; }
  bool all_met(const ConstraintSet& cs) const;
  uint64_t key() const {
    return (static_cast<uint64_t>(met) << 16) | (static_cast<uint64_t>(in_progress + 1) << 8) |
           static_cast<uint64_t>(offset);
  }
  bool operator==(const ConstraintProgress& o) const = default;
};

struct ProgressSuccessor {
  ConstraintProgress next;
  int constraint = -1;  // constraint started or continued by the token, -1 = free
};

// Enumerates every legal way to consume token y: continue the in-progress
// constraint, start any unmet one whose first token is y (abandoning the
// in-progress constraint resets it to unmet), or take y as a free token.
std::vector<ProgressSuccessor> advance(const ConstraintProgress& p, const ConstraintSet& cs, int y);

inline int bank_index(const ConstraintProgress& p) { return p.met_token_count; }

struct ExtractParams {
  int max_constraints = 3;
  int max_phrase_len = 3;
  uint64_t seed = 1;
};

// Samples up to max_constraints non-overlapping gold-aligned spans of up to
// max_phrase_len reference words whose phrase does not already appear in the
// greedy hypothesis.
std::vector<Constraint> extract_constraints(const Alignment& gold, std::span<const int> src,
                                            std::span<const int> ref,
                                            std::span<const int> greedy_hyp,
                                            const ExtractParams& params);

// JSON Lines constraint files carry token strings and 0-based inclusive spans.
struct ConstraintFile {
  struct Item {
    int src_begin = 0, src_end = 0;
    std::vector<std::string> tgt_tokens;
  };
  std::vector<std::vector<Item>> sentences;
};

ConstraintFile read_constraints_jsonl(const std::string& path);
void write_constraints_jsonl(const std::string& path, const ConstraintFile& file);

// Maps token strings to ids; unknown or special tokens mark a constraint
// infeasible rather than failing the decode.
ConstraintSet to_constraint_set(const std::vector<ConstraintFile::Item>& items, const Vocab& tgt,
                                int bos_id, int eos_id);
std::vector<ConstraintFile::Item> to_file_items(std::span<const Constraint> constraints,
                                                const Vocab& tgt);

}  // namespace alnbeam
