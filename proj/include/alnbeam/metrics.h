#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace alnbeam {

using TokenLine = std::vector<std::string>;

// Sufficient statistics for corpus BLEU; additive across sentences, which is
// what makes bootstrap resampling cheap.
struct BleuStats {
  std::array<long long, 4> match{0, 0, 0, 0};
  std::array<long long, 4> total{0, 0, 0, 0};
  long long ref_len = 0;
  long long hyp_len = 0;
  BleuStats& operator+=(const BleuStats& o);
};

BleuStats bleu_sentence_stats(const TokenLine& ref, const TokenLine& hyp);
// Corpus BLEU in [0, 100]. Smoothing adds one to the 2..4-gram precisions.
double bleu_from_stats(const BleuStats& stats, bool smooth);
double bleu(const std::vector<TokenLine>& refs, const std::vector<TokenLine>& hyps,
            bool smooth = false);

struct SpanPair {
  TokenLine ref_span;
  TokenLine hyp_span;  // empty when the constraint is unsatisfied
};

// Windows of `window` words around each constraint phrase. The phrase must
// occur in the reference; the first occurrence anchors the window on both
// sides.
std::vector<SpanPair> extract_spans(const TokenLine& ref, const TokenLine& hyp,
                                    const std::vector<TokenLine>& constraint_phrases,
                                    const std::vector<bool>& satisfied, int window = 3);

double bleu_c(const std::vector<SpanPair>& spans, bool smooth = false);

bool phrase_in(const TokenLine& phrase, const TokenLine& sentence);

// Percentage of constraints whose phrase appears contiguously in the
// hypothesis.
double csr(const std::vector<std::vector<TokenLine>>& constraints_per_sentence,
           const std::vector<TokenLine>& hyps);

// Paired bootstrap resampling (one-sided): the returned p-value is the
// fraction of resamples where the baseline system B scores at least as well
// as system A.
double paired_bootstrap_bleu(const std::vector<TokenLine>& refs,
                             const std::vector<TokenLine>& hyps_a,
                             const std::vector<TokenLine>& hyps_b, int n_samples, uint64_t seed,
                             bool smooth = false);
double paired_bootstrap_csr(const std::vector<std::vector<TokenLine>>& constraints_per_sentence,
                            const std::vector<TokenLine>& hyps_a,
                            const std::vector<TokenLine>& hyps_b, int n_samples, uint64_t seed);

}  // namespace alnbeam
