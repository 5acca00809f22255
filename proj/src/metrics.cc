#include "alnbeam/metrics.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_map>

#include "alnbeam/error.h"
#include "alnbeam/rng.h"

namespace alnbeam {

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (int n = 0; n < 4; ++n) {
    match[n] += o.match[n];
    total[n] += o.total[n];
  }
  ref_len += o.ref_len;
  hyp_len += o.hyp_len;
  return *this;
}

namespace {

// n-grams are joined with an unlikely separator so a flat hash map suffices.
std::string ngram_key(const TokenLine& words, size_t start, int n) {
  std::string key;
  for (int i = 0; i < n; ++i) {
    if (i) key += '\x1f';
    key += words[start + i];
  }
  return key;
}

}  // namespace

BleuStats bleu_sentence_stats(const TokenLine& ref, const TokenLine& hyp) {
  BleuStats st;
  st.ref_len = static_cast<long long>(ref.size());
  st.hyp_len = static_cast<long long>(hyp.size());
  for (int n = 1; n <= 4; ++n) {
    if (static_cast<int>(hyp.size()) < n) break;
    std::unordered_map<std::string, int> ref_counts;
    if (static_cast<int>(ref.size()) >= n)
      for (size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[ngram_key(ref, i, n)];
    std::unordered_map<std::string, int> hyp_counts;
    for (size_t i = 0; i + n <= hyp.size(); ++i) ++hyp_counts[ngram_key(hyp, i, n)];
    long long match = 0, total = 0;
    for (const auto& [key, count] : hyp_counts) {
      total += count;
      auto it = ref_counts.find(key);
      if (it != ref_counts.end()) match += std::min(count, it->second);
    }
    st.match[n - 1] = match;
    st.total[n - 1] = total;
  }
  return st;
}

double bleu_from_stats(const BleuStats& st, bool smooth) {
  if (st.hyp_len == 0) return 0.0;
  double log_prec = 0.0;
  for (int n = 0; n < 4; ++n) {
    double m = static_cast<double>(st.match[n]);
    double t = static_cast<double>(st.total[n]);
    if (smooth && n > 0) {
      m += 1.0;
      t += 1.0;
    }
    if (m <= 0.0 || t <= 0.0) return 0.0;
    log_prec += std::log(m / t);
  }
  double bp = 0.0;
  if (st.hyp_len < st.ref_len)
    bp = 1.0 - static_cast<double>(st.ref_len) / static_cast<double>(st.hyp_len);
  return 100.0 * std::exp(bp + log_prec / 4.0);
}

double bleu(const std::vector<TokenLine>& refs, const std::vector<TokenLine>& hyps, bool smooth) {
  if (refs.empty() || refs.size() != hyps.size())
    throw Error::data("bleu needs equally sized, non-empty reference and hypothesis lists");
  BleuStats corpus;
  for (size_t i = 0; i < refs.size(); ++i) corpus += bleu_sentence_stats(refs[i], hyps[i]);
  return bleu_from_stats(corpus, smooth);
}

bool phrase_in(const TokenLine& phrase, const TokenLine& sentence) {
  if (phrase.empty() || phrase.size() > sentence.size()) return false;
  for (size_t pos = 0; pos + phrase.size() <= sentence.size(); ++pos) {
    bool hit = true;
    for (size_t i = 0; i < phrase.size() && hit; ++i)
      if (sentence[pos + i] != phrase[i]) hit = false;
    if (hit) return true;
  }
  return false;
}

namespace {

int find_phrase(const TokenLine& phrase, const TokenLine& sentence) {
  if (phrase.empty() || phrase.size() > sentence.size()) return -1;
  for (size_t pos = 0; pos + phrase.size() <= sentence.size(); ++pos) {
    bool hit = true;
    for (size_t i = 0; i < phrase.size() && hit; ++i)
      if (sentence[pos + i] != phrase[i]) hit = false;
    if (hit) return static_cast<int>(pos);
  }
  return -1;
}

TokenLine window_around(const TokenLine& sent, int pos, int len, int window) {
  const int lo = std::max(0, pos - window);
  const int hi = std::min(static_cast<int>(sent.size()), pos + len + window);
  return TokenLine(sent.begin() + lo, sent.begin() + hi);
}

}  // namespace

std::vector<SpanPair> extract_spans(const TokenLine& ref, const TokenLine& hyp,
                                    const std::vector<TokenLine>& constraint_phrases,
                                    const std::vector<bool>& satisfied, int window) {
  if (constraint_phrases.size() != satisfied.size())
    throw Error::data("satisfied flags do not match constraint count");
  std::vector<SpanPair> out;
  for (size_t i = 0; i < constraint_phrases.size(); ++i) {
    const TokenLine& phrase = constraint_phrases[i];
    const int rpos = find_phrase(phrase, ref);
    if (rpos < 0)
      throw Error::data("constraint phrase not found in reference: '" +
                        (phrase.empty() ? std::string() : phrase[0]) + " ...'");
    SpanPair sp;
    sp.ref_span = window_around(ref, rpos, static_cast<int>(phrase.size()), window);
    if (satisfied[i]) {
      const int hpos = find_phrase(phrase, hyp);
      if (hpos < 0) throw Error::data("constraint marked satisfied but absent from hypothesis");
      sp.hyp_span = window_around(hyp, hpos, static_cast<int>(phrase.size()), window);
    }
    out.push_back(std::move(sp));
  }
  return out;
}

double bleu_c(const std::vector<SpanPair>& spans, bool smooth) {
  if (spans.empty()) throw Error::data("bleu_c needs at least one span pair");
  BleuStats corpus;
  for (const auto& sp : spans) corpus += bleu_sentence_stats(sp.ref_span, sp.hyp_span);
  return bleu_from_stats(corpus, smooth);
}

double csr(const std::vector<std::vector<TokenLine>>& constraints_per_sentence,
           const std::vector<TokenLine>& hyps) {
  if (constraints_per_sentence.size() != hyps.size())
    throw Error::data("csr needs one constraint list per hypothesis");
  long long total = 0, hit = 0;
  for (size_t i = 0; i < hyps.size(); ++i) {
    for (const auto& phrase : constraints_per_sentence[i]) {
      ++total;
      if (phrase_in(phrase, hyps[i])) ++hit;
    }
  }
  if (total == 0) return 100.0;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(total);
}

namespace {

double bootstrap_p(int n_sentences, int n_samples, uint64_t seed,
                   const std::function<double(const std::vector<int>&, bool)>& metric) {
  if (n_sentences <= 0) throw Error::data("bootstrap needs a non-empty corpus");
  if (n_samples <= 0) throw Error::data("bootstrap needs a positive sample count");
  Rng rng(seed);
  std::vector<int> idx(n_sentences);
  int b_wins = 0;
  for (int s = 0; s < n_samples; ++s) {
    for (int i = 0; i < n_sentences; ++i)
      idx[i] = static_cast<int>(rng.below(static_cast<uint64_t>(n_sentences)));
    const double a = metric(idx, false);
    const double b = metric(idx, true);
    if (b >= a) ++b_wins;
  }
  return static_cast<double>(b_wins) / static_cast<double>(n_samples);
}

}  // namespace

double paired_bootstrap_bleu(const std::vector<TokenLine>& refs,
                             const std::vector<TokenLine>& hyps_a,
                             const std::vector<TokenLine>& hyps_b, int n_samples, uint64_t seed,
                             bool smooth) {
  if (refs.size() != hyps_a.size() || refs.size() != hyps_b.size())
    throw Error::data("bootstrap corpora must have equal sizes");
  std::vector<BleuStats> sa(refs.size()), sb(refs.size());
  for (size_t i = 0; i < refs.size(); ++i) {
    sa[i] = bleu_sentence_stats(refs[i], hyps_a[i]);
    sb[i] = bleu_sentence_stats(refs[i], hyps_b[i]);
  }
  return bootstrap_p(static_cast<int>(refs.size()), n_samples, seed,
                     [&](const std::vector<int>& idx, bool system_b) {
                       BleuStats agg;
                       for (int i : idx) agg += system_b ? sb[i] : sa[i];
                       return bleu_from_stats(agg, smooth);
                     });
}

double paired_bootstrap_csr(const std::vector<std::vector<TokenLine>>& constraints_per_sentence,
                            const std::vector<TokenLine>& hyps_a,
                            const std::vector<TokenLine>& hyps_b, int n_samples, uint64_t seed) {
  if (constraints_per_sentence.size() != hyps_a.size() ||
      constraints_per_sentence.size() != hyps_b.size())
    throw Error::data("bootstrap corpora must have equal sizes");
  const size_t n = hyps_a.size();
  std::vector<std::array<long long, 2>> hits_a(n), hits_b(n);  // {hit, total}
  for (size_t i = 0; i < n; ++i) {
    long long ha = 0, hb = 0, tot = 0;
    for (const auto& phrase : constraints_per_sentence[i]) {
      ++tot;
      if (phrase_in(phrase, hyps_a[i])) ++ha;
      if (phrase_in(phrase, hyps_b[i])) ++hb;
    }
    hits_a[i] = {ha, tot};
    hits_b[i] = {hb, tot};
  }
  auto rate = [](long long hit, long long total) {
    return total == 0 ? 100.0 : 100.0 * static_cast<double>(hit) / static_cast<double>(total);
  };
  return bootstrap_p(static_cast<int>(n), n_samples, seed,
                     [&](const std::vector<int>& idx, bool system_b) {
                       long long hit = 0, total = 0;
                       for (int i : idx) {
                         const auto& h = system_b ? hits_b[i] : hits_a[i];
                         hit += h[0];
                         total += h[1];
                       }
                       return rate(hit, total);
                     });
}

}  // namespace alnbeam
