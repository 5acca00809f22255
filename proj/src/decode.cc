#include "alnbeam/decode.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "alnbeam/error.h"

namespace alnbeam {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kBosMask = -1e30;
}  // namespace

DecodeMethod decode_method_from_string(const std::string& name) {
  if (name == "none") return DecodeMethod::kNone;
  if (name == "replace") return DecodeMethod::kReplace;
  if (name == "vdba") return DecodeMethod::kVdba;
  if (name == "align-vdba" || name == "align_vdba") return DecodeMethod::kAlignVdba;
  throw Error::config("unknown decode method: " + name);
}

std::string to_string(DecodeMethod m) {
  switch (m) {
    case DecodeMethod::kNone: return "none";
    case DecodeMethod::kReplace: return "replace";
    case DecodeMethod::kVdba: return "vdba";
    case DecodeMethod::kAlignVdba: return "align-vdba";
  }
  return "?";
}

void DecodeConfig::validate() const {
  if (beam < 1) throw Error::config("beam size must be at least 1");
  if (threshold < 0.0 || threshold > 1.0) throw Error::config("threshold must be in [0, 1]");
  if (!(temperature > 0.0)) throw Error::config("temperature must be positive");
}

// ---------------------------------------------------------------------------
// ModelScorer

struct ModelScorer::State : DecoderState {
  ModelState ms;
  std::vector<double> lp;
};

ModelScorer::ModelScorer(const Model& m, const AlignHead* head, AlignMethod method, int layer,
                         std::span<const int> src)
    : model_(m),
      head_(head),
      method_(method),
      layer_(layer >= 0 ? layer : m.config.align_layer()),
      src_len_(static_cast<int>(src.size())) {
  // Without a trained head the head-dependent methods degrade to naive
  // attention; callers that require the head check before constructing us.
  if (method_needs_head(method_) && head_ == nullptr) method_ = AlignMethod::kNaive;
  auto s = std::make_shared<State>();
  s->ms = encode(m, src);
  std::vector<double> logits = decode_step(m, s->ms, m.config.bos_id);
  logits[m.config.bos_id] = kBosMask;  // BOS is not a legal output token
  s->lp = log_softmax(logits);
  start_ = std::move(s);
}

std::shared_ptr<const DecoderState> ModelScorer::start() const { return start_; }

std::shared_ptr<const DecoderState> ModelScorer::advance(const DecoderState& s, int y) const {
  const auto& st = static_cast<const State&>(s);
  auto next = std::make_shared<State>();
  next->ms = st.ms;
  std::vector<double> logits = decode_step(model_, next->ms, y);
  logits[model_.config.bos_id] = kBosMask;
  next->lp = log_softmax(logits);
  return next;
}

const std::vector<double>& ModelScorer::log_probs(const DecoderState& s) const {
  return static_cast<const State&>(s).lp;
}

std::vector<double> ModelScorer::align_dist(const DecoderState& s, int y) const {
  const auto& st = static_cast<const State&>(s);
  const int step = st.ms.steps() - 1;
  switch (method_) {
    case AlignMethod::kNaive: return naive_att(st.ms, layer_, step);
    case AlignMethod::kShift: return shift_att(model_, st.ms, layer_, step, y);
    case AlignMethod::kPrior: return prior_align(*head_, st.ms, step);
    case AlignMethod::kShiftAet: return shift_aet(*head_, model_, st.ms, step, y);
    case AlignMethod::kPostAln: return posterior_align(*head_, model_, st.ms, step, y);
  }
  throw Error::state("unreachable align method");
}

// ---------------------------------------------------------------------------
// Scoring helpers

double joint_score(double token_logprob, std::span<const double> align_dist, int span_begin,
                   int span_end, double temperature) {
  if (!(temperature > 0.0)) throw Error::config("temperature must be positive");
  double mass = 0.0;
  for (int j = std::max(0, span_begin); j <= span_end && j < static_cast<int>(align_dist.size());
       ++j)
    mass += align_dist[j];
  if (mass <= 0.0) return kNegInf;
  if (!std::isfinite(temperature)) return token_logprob;
  return token_logprob + std::log(mass) / temperature;
}

namespace {

double ranking_score(const Hypothesis& h, bool length_norm) {
  if (!length_norm) return h.log_score;
  return h.log_score / (static_cast<double>(h.tokens.size()) + 1.0);
}

bool hyp_better(const Hypothesis& a, const Hypothesis& b, bool length_norm) {
  const double sa = ranking_score(a, length_norm);
  const double sb = ranking_score(b, length_norm);
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

void pool_insert(std::vector<Hypothesis>& pool, Hypothesis h, size_t cap, bool length_norm) {
  pool.push_back(std::move(h));
  std::sort(pool.begin(), pool.end(),
            [length_norm](const Hypothesis& a, const Hypothesis& b) {
              return hyp_better(a, b, length_norm);
            });
  if (pool.size() > cap) pool.resize(cap);
}

struct Cand {
  int parent = -1;
  int token = -1;
  ConstraintProgress progress;
  double score = 0.0;
  int constraint = -1;
  std::vector<int> tokens;
};

bool cand_better(const Cand& a, const Cand& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

int default_max_len(const Scorer& scorer, const ConstraintSet& cs, const DecodeConfig& config) {
  if (config.max_len > 0) return config.max_len;
  return scorer.src_len() + cs.total_tokens() + 8;
}

struct EngineOutput {
  std::vector<Hypothesis> finished_met;
  std::vector<Hypothesis> fallback;
};

// Shared search for beam_search / vdba / align_vdba. Each step gathers the
// global top-K token extensions, every constraint extension, and each
// hypothesis' best single word, then allocates the K slots evenly over banks
// indexed by completed constraint tokens. With no constraints there is one
// bank and this is plain beam search.
EngineOutput banked_search(const Scorer& scorer, const ConstraintSet& cs,
                           const DecodeConfig& config, bool align_scoring, StepTrace* trace) {
  config.validate();
  cs.validate();
  const int K = config.beam;
  const int eos = scorer.eos();
  const int V = scorer.vocab();
  const int c_total = cs.total_tokens();
  const int n_banks = c_total + 1;
  const int max_len = default_max_len(scorer, cs, config);
  const size_t pool_cap = static_cast<size_t>(K);

  std::vector<Hypothesis> beam(1);
  beam[0].state = scorer.start();

  EngineOutput out;

  for (int step = 0; step <= max_len; ++step) {
    if (beam.empty()) break;
    const bool forced = step == max_len;

    if (!config.length_norm && out.finished_met.size() >= pool_cap) {
      double best_alive = kNegInf;
      for (const auto& h : beam) best_alive = std::max(best_alive, h.log_score);
      if (best_alive <= out.finished_met.back().log_score) break;
    }

    // Finishing: EOS is admissible only with all constraints met, except at
    // the forced final step.
    for (const auto& hyp : beam) {
      const bool met = hyp.progress.all_met(cs);
      if (!met && !forced) continue;
      Hypothesis f = hyp;
      f.log_score += scorer.log_probs(*hyp.state)[eos];
      f.fallback = !met;
      pool_insert(met ? out.finished_met : out.fallback, std::move(f), pool_cap,
                  config.length_norm);
    }
    if (forced) break;

    // Candidate (parent, token) pairs.
    std::vector<std::pair<int, int>> pairs;
    {
      std::vector<std::pair<double, std::pair<int, int>>> scored;
      for (int k = 0; k < static_cast<int>(beam.size()); ++k) {
        const auto& lp = scorer.log_probs(*beam[k].state);
        for (int y = 0; y < V; ++y) {
          if (y == eos) continue;
          scored.push_back({beam[k].log_score + lp[y], {k, y}});
        }
      }
      const size_t topk = std::min<size_t>(K, scored.size());
      std::partial_sort(scored.begin(), scored.begin() + topk, scored.end(),
                        [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                        });
      scored.resize(topk);
      for (const auto& [s, ky] : scored) pairs.push_back(ky);
    }
    for (int k = 0; k < static_cast<int>(beam.size()); ++k) {
      const auto& hyp = beam[k];
      const auto& lp = scorer.log_probs(*hyp.state);
      // Constraint extensions.
      if (hyp.progress.in_progress >= 0)
        pairs.push_back({k, cs.items[hyp.progress.in_progress].tgt_tokens[hyp.progress.offset]});
      for (int j = 0; j < cs.size(); ++j) {
        if (!cs.is_feasible(j) || hyp.progress.is_met(j)) continue;
        if (j == hyp.progress.in_progress) continue;
        pairs.push_back({k, cs.items[j].tgt_tokens[0]});
      }
      // Best single word.
      int w = -1;
      for (int y = 0; y < V; ++y) {
        if (y == eos) continue;
        if (w < 0 || lp[y] > lp[w]) w = y;
      }
      if (w >= 0) pairs.push_back({k, w});
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

    // Expand into successors.
    std::vector<Cand> cands;
    std::map<std::pair<int, int>, std::vector<double>> dist_memo;
    for (const auto& [k, y] : pairs) {
      if (y == eos) continue;
      const auto& hyp = beam[k];
      const double base = hyp.log_score + scorer.log_probs(*hyp.state)[y];
      for (const auto& su : advance(hyp.progress, cs, y)) {
        double score = base;
        if (su.constraint >= 0 && align_scoring) {
          auto it = dist_memo.find({k, y});
          if (it == dist_memo.end())
            it = dist_memo.emplace(std::pair<int, int>{k, y}, scorer.align_dist(*hyp.state, y))
                     .first;
          const Constraint& c = cs.items[su.constraint];
          double mass = 0.0;
          for (int j = std::max(0, c.src_begin);
               j <= c.src_end && j < static_cast<int>(it->second.size()); ++j)
            mass += it->second[j];
          if (!(mass > config.threshold)) continue;
          score = base + (std::isfinite(config.temperature) ? std::log(mass) / config.temperature
                                                            : 0.0);
          if (score == kNegInf) continue;
        }
        Cand c;
        c.parent = k;
        c.token = y;
        c.progress = su.next;
        c.score = score;
        c.constraint = su.constraint;
        c.tokens = hyp.tokens;
        c.tokens.push_back(y);
        cands.push_back(std::move(c));
      }
    }

    // Dedup identical (tokens, progress), keeping the best score.
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.tokens != b.tokens) return a.tokens < b.tokens;
      if (a.progress.key() != b.progress.key()) return a.progress.key() < b.progress.key();
      return a.score > b.score;
    });
    cands.erase(std::unique(cands.begin(), cands.end(),
                            [](const Cand& a, const Cand& b) {
                              return a.tokens == b.tokens &&
                                     a.progress.key() == b.progress.key();
                            }),
                cands.end());

    if (trace) {
      std::vector<StepTrace::Candidate> rec;
      for (const auto& c : cands) rec.push_back({c.tokens, c.progress, c.score, c.constraint});
      trace->steps.push_back(std::move(rec));
    }

    // Bank allocation: even split, leftover slots flow to the banks holding
    // the best unseated candidates.
    std::vector<std::vector<const Cand*>> banks(n_banks);
    for (const auto& c : cands) banks[bank_index(c.progress)].push_back(&c);
    for (auto& bank : banks)
      std::sort(bank.begin(), bank.end(),
                [](const Cand* a, const Cand* b) { return cand_better(*a, *b); });

    std::vector<int> take(n_banks, 0);
    int assigned = 0;
    const int quota = K / n_banks;
    for (int b = 0; b < n_banks; ++b) {
      take[b] = std::min<int>(quota, static_cast<int>(banks[b].size()));
      assigned += take[b];
    }
    while (assigned < K) {
      int best_bank = -1;
      for (int b = 0; b < n_banks; ++b) {
        if (take[b] >= static_cast<int>(banks[b].size())) continue;
        if (best_bank < 0 ||
            cand_better(*banks[b][take[b]], *banks[best_bank][take[best_bank]]))
          best_bank = b;
      }
      if (best_bank < 0) break;
      ++take[best_bank];
      ++assigned;
    }

    // Materialize the next beam.
    std::map<std::pair<const DecoderState*, int>, std::shared_ptr<const DecoderState>> advance_memo;
    std::vector<Hypothesis> next_beam;
    for (int b = 0; b < n_banks; ++b) {
      for (int i = 0; i < take[b]; ++i) {
        const Cand& c = *banks[b][i];
        const Hypothesis& parent = beam[c.parent];
        Hypothesis h;
        h.tokens = c.tokens;
        h.log_score = c.score;
        h.progress = c.progress;
        const std::pair<const DecoderState*, int> key{parent.state.get(), c.token};
        auto it = advance_memo.find(key);
        if (it == advance_memo.end())
          it = advance_memo.emplace(key, scorer.advance(*parent.state, c.token)).first;
        h.state = it->second;
        h.alignments = parent.alignments;
        h.alignments.push_back(hard_align(scorer.align_dist(*parent.state, c.token)));
        next_beam.push_back(std::move(h));
      }
    }
    beam = std::move(next_beam);
  }
  return out;
}

DecodeResult finalize(EngineOutput&& out, const ConstraintSet& cs) {
  DecodeResult res;
  if (!out.finished_met.empty()) {
    res.best = std::move(out.finished_met.front());
  } else if (!out.fallback.empty()) {
    res.best = std::move(out.fallback.front());
  } else {
    throw Error::state("decode produced no hypothesis");
  }
  for (int i = 0; i < cs.size(); ++i) {
    if (res.best.progress.is_met(i))
      res.satisfied.push_back(i);
    else
      res.unsatisfied.push_back(i);
  }
  return res;
}

}  // namespace

std::vector<Hypothesis> beam_search(const Scorer& scorer, const DecodeConfig& config) {
  ConstraintSet empty;
  EngineOutput out = banked_search(scorer, empty, config, false, nullptr);
  return std::move(out.finished_met);
}

DecodeResult vdba_decode(const Scorer& scorer, const ConstraintSet& cs, const DecodeConfig& config,
                         StepTrace* trace) {
  return finalize(banked_search(scorer, cs, config, false, trace), cs);
}

DecodeResult align_vdba_decode(const Scorer& scorer, const ConstraintSet& cs,
                               const DecodeConfig& config, StepTrace* trace) {
  return finalize(banked_search(scorer, cs, config, true, trace), cs);
}

DecodeResult replace_decode(const Scorer& scorer, const ConstraintSet& cs,
                            const DecodeConfig& config) {
  config.validate();
  cs.validate();
  const int K = config.beam;
  const int eos = scorer.eos();
  const int V = scorer.vocab();
  const int max_len = default_max_len(scorer, cs, config);
  const size_t pool_cap = static_cast<size_t>(std::max(K, 1));

  std::vector<Hypothesis> beam(1);
  beam[0].state = scorer.start();
  std::vector<Hypothesis> finished;

  for (int step = 0; step <= max_len; ++step) {
    if (beam.empty()) break;
    const bool forced = step == max_len;

    if (!config.length_norm && finished.size() >= pool_cap) {
      double best_alive = kNegInf;
      for (const auto& h : beam) best_alive = std::max(best_alive, h.log_score);
      if (best_alive <= finished.back().log_score) break;
    }

    struct RCand {
      Hypothesis hyp;  // fully formed except state
      int parent;
      int emitted;
    };
    std::vector<RCand> cands;

    for (int k = 0; k < static_cast<int>(beam.size()); ++k) {
      const Hypothesis& hyp = beam[k];
      const auto& lp = scorer.log_probs(*hyp.state);
      if (forced) {
        Hypothesis f = hyp;
        f.log_score += lp[eos];
        f.fallback = !f.progress.all_met(cs);
        pool_insert(finished, std::move(f), pool_cap, config.length_norm);
        continue;
      }
      // Best two tokens for this hypothesis.
      int y1 = -1, y2 = -1;
      for (int y = 0; y < V; ++y) {
        if (y1 < 0 || lp[y] > lp[y1]) {
          y2 = y1;
          y1 = y;
        } else if (y2 < 0 || lp[y] > lp[y2]) {
          y2 = y;
        }
      }
      for (int y : {y1, y2}) {
        if (y < 0) continue;
        const double score = hyp.log_score + lp[y];
        // The alignment is computed for the model's candidate token; the
        // replacement below may overwrite the token while keeping this score.
        std::vector<double> dist = scorer.align_dist(*hyp.state, y);
        const int ax = hard_align(dist);

        int emitted = y;
        ConstraintProgress progress = hyp.progress;
        if (progress.in_progress >= 0) {
          const int j = progress.in_progress;
          emitted = cs.items[j].tgt_tokens[progress.offset];
          ++progress.offset;
          ++progress.met_token_count;
          if (progress.offset == cs.items[j].length()) {
            progress.met |= 1u << j;
            progress.in_progress = -1;
            progress.offset = 0;
          }
        } else {
          int start = -1;
          for (int j = 0; j < cs.size(); ++j) {
            if (!cs.is_feasible(j) || progress.is_met(j)) continue;
            if (cs.items[j].covers(ax)) {
              start = j;
              break;
            }
          }
          if (start >= 0) {
            emitted = cs.items[start].tgt_tokens[0];
            ++progress.met_token_count;
            if (cs.items[start].length() == 1) {
              progress.met |= 1u << start;
            } else {
              progress.in_progress = start;
              progress.offset = 1;
            }
          } else if (y == eos) {
            Hypothesis f = hyp;
            f.log_score = score;
            f.fallback = !f.progress.all_met(cs);
            pool_insert(finished, std::move(f), pool_cap, config.length_norm);
            continue;
          }
        }
        RCand rc;
        rc.parent = k;
        rc.emitted = emitted;
        rc.hyp.tokens = hyp.tokens;
        rc.hyp.tokens.push_back(emitted);
        rc.hyp.log_score = score;
        rc.hyp.progress = progress;
        rc.hyp.alignments = hyp.alignments;
        rc.hyp.alignments.push_back(ax);
        cands.push_back(std::move(rc));
      }
    }
    if (forced) break;

    // Remove duplicates before top-K.
    std::sort(cands.begin(), cands.end(), [](const RCand& a, const RCand& b) {
      if (a.hyp.tokens != b.hyp.tokens) return a.hyp.tokens < b.hyp.tokens;
      if (a.hyp.progress.key() != b.hyp.progress.key())
        return a.hyp.progress.key() < b.hyp.progress.key();
      return a.hyp.log_score > b.hyp.log_score;
    });
    cands.erase(std::unique(cands.begin(), cands.end(),
                            [](const RCand& a, const RCand& b) {
                              return a.hyp.tokens == b.hyp.tokens &&
                                     a.hyp.progress.key() == b.hyp.progress.key();
                            }),
                cands.end());
    std::sort(cands.begin(), cands.end(),
              [](const RCand& a, const RCand& b) { return hyp_better(a.hyp, b.hyp, false); });
    if (static_cast<int>(cands.size()) > K) cands.resize(K);

    std::map<std::pair<const DecoderState*, int>, std::shared_ptr<const DecoderState>> memo;
    std::vector<Hypothesis> next_beam;
    for (auto& rc : cands) {
      const std::pair<const DecoderState*, int> key{beam[rc.parent].state.get(), rc.emitted};
      auto it = memo.find(key);
      if (it == memo.end())
        it = memo.emplace(key, scorer.advance(*beam[rc.parent].state, rc.emitted)).first;
      rc.hyp.state = it->second;
      next_beam.push_back(std::move(rc.hyp));
    }
    beam = std::move(next_beam);
  }

  if (finished.empty()) throw Error::state("replace decode produced no hypothesis");
  DecodeResult res;
  res.best = std::move(finished.front());
  for (int i = 0; i < cs.size(); ++i) {
    if (res.best.progress.is_met(i))
      res.satisfied.push_back(i);
    else
      res.unsatisfied.push_back(i);
  }
  return res;
}

}  // namespace alnbeam
