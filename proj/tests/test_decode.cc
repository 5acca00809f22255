#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "alnbeam/corpus.h"
#include "alnbeam/decode.h"
#include "alnbeam/error.h"
#include "alnbeam/rng.h"
#include "test_support.h"

using namespace alnbeam;
using namespace alnbeam::testsupport;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ModelConfig toy_config(uint64_t seed, int tgt_vocab = 5) {
  ModelConfig c;
  c.d = 8;
  c.n_heads = 2;
  c.n_layers = 2;
  c.d_ff = 12;
  c.src_vocab = 4;
  c.tgt_vocab = tgt_vocab;  // <s> </s> plus content tokens
  c.bos_id = 0;
  c.eos_id = 1;
  c.seed = seed;
  return c;
}

ConstraintSet make_set(std::vector<Constraint> items) {
  ConstraintSet cs;
  cs.items = std::move(items);
  cs.feasible.assign(cs.items.size(), true);
  cs.validate();
  return cs;
}

bool contains_contiguous(const std::vector<int>& hay, const std::vector<int>& needle) {
  if (needle.empty() || needle.size() > hay.size()) return false;
  for (size_t p = 0; p + needle.size() <= hay.size(); ++p) {
    bool hit = true;
    for (size_t i = 0; i < needle.size() && hit; ++i)
      if (hay[p + i] != needle[i]) hit = false;
    if (hit) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("joint_score closed forms") {
  std::vector<double> dist{0.25, 0.5, 0.25};
  // Full mass: token log prob unchanged.
  CHECK(joint_score(-1.25, dist, 0, 2, 2.0) == doctest::Approx(-1.25).epsilon(1e-15));
  // Token prob 0.5, span mass 0.25, T = 2 -> log 0.25.
  const double got = joint_score(std::log(0.5), dist, 0, 0, 2.0);
  CHECK(std::abs(got - std::log(0.25)) < 1e-12);
  // Zero mass drops the candidate.
  std::vector<double> zero{0.0, 1.0};
  CHECK(joint_score(-0.1, zero, 0, 0, 2.0) == -kInf);
  // T = 1 is the plain product; T = inf removes the alignment term.
  CHECK(joint_score(std::log(0.5), dist, 0, 0, 1.0) ==
        doctest::Approx(std::log(0.5 * 0.25)).epsilon(1e-12));
  CHECK(joint_score(std::log(0.5), dist, 0, 0, kInf) ==
        doctest::Approx(std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("decode config defaults and validation") {
  DecodeConfig cfg;
  CHECK(cfg.temperature == 2.0);
  CHECK(cfg.threshold == 0.1);
  cfg.beam = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.beam = 5;
  cfg.threshold = 1.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("beam search with K=1 equals greedy decoding") {
  Model m = init_model(toy_config(42));
  std::vector<int> src{0, 2, 1};
  ModelScorer scorer(m, nullptr, AlignMethod::kNaive, -1, src);
  DecodeConfig cfg;
  cfg.beam = 1;
  cfg.max_len = 6;
  auto hyps = beam_search(scorer, cfg);
  REQUIRE(!hyps.empty());

  // Greedy reference: follow the argmax until EOS or max_len.
  std::vector<int> greedy;
  auto state = scorer.start();
  for (int t = 0; t < 6; ++t) {
    const auto& lp = scorer.log_probs(*state);
    int best = 0;
    for (size_t v = 1; v < lp.size(); ++v)
      if (lp[v] > lp[best]) best = static_cast<int>(v);
    if (best == scorer.eos()) break;
    greedy.push_back(best);
    state = scorer.advance(*state, best);
  }
  CHECK(hyps[0].tokens == greedy);
}

TEST_CASE("large-beam search equals exhaustive enumeration") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    Model m = init_model(toy_config(seed));
    std::vector<int> src{1, 3, 0};
    ModelScorer scorer(m, nullptr, AlignMethod::kNaive, -1, src);
    DecodeConfig cfg;
    cfg.beam = 512;  // covers every sequence of length <= 3 over 3 tokens
    cfg.max_len = 3;
    auto hyps = beam_search(scorer, cfg);
    REQUIRE(!hyps.empty());
    ConstraintSet none;
    OracleBest oracle = exhaustive_best(scorer, none, cfg, false, 3);
    REQUIRE(oracle.found);
    CHECK(hyps[0].tokens == oracle.tokens);
    CHECK(hyps[0].log_score == doctest::Approx(oracle.score).epsilon(1e-12));
  }
}

TEST_CASE("beam search is deterministic") {
  Model m = init_model(toy_config(7));
  std::vector<int> src{2, 0, 3, 1};
  DecodeConfig cfg;
  cfg.beam = 4;
  cfg.max_len = 8;
  std::vector<std::vector<int>> toks;
  std::vector<double> scores;
  for (int run = 0; run < 2; ++run) {
    ModelScorer scorer(m, nullptr, AlignMethod::kNaive, -1, src);
    auto hyps = beam_search(scorer, cfg);
    toks.push_back(hyps[0].tokens);
    scores.push_back(hyps[0].log_score);
  }
  CHECK(toks[0] == toks[1]);
  CHECK(scores[0] == scores[1]);
}

TEST_CASE("vdba with no constraints equals beam search") {
  Model m = init_model(toy_config(11));
  std::vector<int> src{1, 2};
  DecodeConfig cfg;
  cfg.beam = 3;
  cfg.max_len = 5;
  ModelScorer scorer(m, nullptr, AlignMethod::kNaive, -1, src);
  auto plain = beam_search(scorer, cfg);
  ConstraintSet none;
  auto banked = vdba_decode(scorer, none, cfg);
  CHECK(banked.best.tokens == plain[0].tokens);
  CHECK(banked.best.log_score == plain[0].log_score);
}

TEST_CASE("vdba enforces satisfiable constraints") {
  Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    Model m = init_model(toy_config(100 + trial));
    std::vector<int> src{0, 1, 2, 3};
    ModelScorer scorer(m, nullptr, AlignMethod::kNaive, -1, src);
    const int a = 2 + static_cast<int>(rng.below(3));
    const int b = 2 + static_cast<int>(rng.below(3));
    ConstraintSet cs = make_set({{0, 1, {a, b}}});
    DecodeConfig cfg;
    cfg.beam = 10;
    cfg.max_len = 8;
    auto r = vdba_decode(scorer, cs, cfg);
    CHECK(!r.best.fallback);
    CHECK(r.satisfied.size() == 1);
    CHECK(contains_contiguous(r.best.tokens, {a, b}));
    CHECK(r.best.tokens.size() == r.best.alignments.size());
  }
}

TEST_CASE("vdba and align_vdba match their exhaustive oracles") {
  Rng rng(5);
  int instances = 0;
  for (int trial = 0; trial < 12; ++trial) {
    Model m = init_model(toy_config(200 + trial));
    std::vector<int> src{0, 2, 3};
    ModelScorer scorer(m, nullptr, AlignMethod::kNaive, -1, src);
    const int c1 = 2 + static_cast<int>(rng.below(3));
    const int c2 = 2 + static_cast<int>(rng.below(3));
    ConstraintSet cs = trial % 2 == 0
        ? make_set({{0, 0, {c1}}, {2, 2, {c2}}})
        : make_set({{0, 1, {c1, c2}}});
    DecodeConfig cfg;
    cfg.beam = 4096;
    cfg.max_len = 4;
    cfg.threshold = 0.0;
    cfg.temperature = 2.0;

    auto vd = vdba_decode(scorer, cs, cfg);
    OracleBest vd_oracle = exhaustive_best(scorer, cs, cfg, false, cfg.max_len);
    REQUIRE(vd_oracle.found);
    CHECK(vd.best.tokens == vd_oracle.tokens);
    CHECK(vd.best.log_score == doctest::Approx(vd_oracle.score).epsilon(1e-12));

    auto av = align_vdba_decode(scorer, cs, cfg);
    OracleBest av_oracle = exhaustive_best(scorer, cs, cfg, true, cfg.max_len);
    REQUIRE(av_oracle.found);
    CHECK(av.best.tokens == av_oracle.tokens);
    CHECK(av.best.log_score == doctest::Approx(av_oracle.score).epsilon(1e-12));
    ++instances;
  }
  CHECK(instances == 12);
}

TEST_CASE("align_vdba with threshold 0 and infinite temperature reproduces vdba") {
  for (uint64_t seed : {31ull, 32ull, 33ull, 34ull}) {
    Model m = init_model(toy_config(seed));
    std::vector<int> src{1, 0, 2};
    ModelScorer scorer(m, nullptr, AlignMethod::kNaive, -1, src);
    ConstraintSet cs = make_set({{1, 2, {3, 4}}});
    DecodeConfig cfg;
    cfg.beam = 6;
    cfg.max_len = 7;
    cfg.threshold = 0.0;
    cfg.temperature = kInf;
    StepTrace tv, ta;
    auto vd = vdba_decode(scorer, cs, cfg, &tv);
    auto av = align_vdba_decode(scorer, cs, cfg, &ta);
    CHECK(vd.best.tokens == av.best.tokens);
    CHECK(vd.best.log_score == av.best.log_score);
    // Candidate sets agree step by step.
    REQUIRE(tv.steps.size() == ta.steps.size());
    for (size_t s = 0; s < tv.steps.size(); ++s) {
      REQUIRE(tv.steps[s].size() == ta.steps[s].size());
      for (size_t c = 0; c < tv.steps[s].size(); ++c) {
        CHECK(tv.steps[s][c].tokens == ta.steps[s][c].tokens);
        CHECK(tv.steps[s][c].score == ta.steps[s][c].score);
      }
    }
    // No two candidates share (tokens, progress) after deduplication.
    for (const auto& step : ta.steps) {
      std::set<std::pair<std::vector<int>, uint64_t>> seen;
      for (const auto& c : step) CHECK(seen.insert({c.tokens, c.progress.key()}).second);
    }
  }
}

TEST_CASE("threshold gates low-mass constraint expansions") {
  // Span mass at step 0 is 0.3: a 0.4 threshold must drop the expansion that
  // a zero threshold admits.
  const int vocab = 4, eos = 1;
  auto steps = uniform_steps(vocab, eos, 2, 2, {0.3, 0.3, 0.3}, 0);
  TableScorer scorer(vocab, eos, 2, steps);
  ConstraintSet cs = make_set({{0, 0, {2}}});
  DecodeConfig cfg;
  cfg.beam = 4;
  cfg.max_len = 3;
  cfg.temperature = 2.0;

  cfg.threshold = 0.0;
  StepTrace open_trace;
  align_vdba_decode(scorer, cs, cfg, &open_trace);
  bool open_has_expansion = false;
  for (const auto& c : open_trace.steps[0])
    if (c.constraint == 0) open_has_expansion = true;
  CHECK(open_has_expansion);

  cfg.threshold = 0.4;
  StepTrace gated_trace;
  auto gated = align_vdba_decode(scorer, cs, cfg, &gated_trace);
  for (const auto& step : gated_trace.steps)
    for (const auto& c : step) CHECK(c.constraint == -1);
  // The constraint still completes through the fallback path at max_len or
  // stays unsatisfied; with every expansion gated it must be unsatisfied.
  CHECK(gated.satisfied.empty());
}

TEST_CASE("align_vdba follows posterior mass where token scores tie") {
  // Length-2 outputs tie exactly on token score. Mass on the constraint span
  // is high at step 0 and low at step 1, so joint scoring places the
  // constraint token first; vdba's lexicographic tie-break places it last.
  const int vocab = 5, eos = 1;  // tokens 0,2,3,4 usable; constraint is 4
  for (double hi : {0.6, 0.7, 0.9}) {
    auto steps = uniform_steps(vocab, eos, 2, 2, {hi, hi - 0.4}, 0);
    TableScorer scorer(vocab, eos, 2, steps);
    ConstraintSet cs = make_set({{0, 0, {4}}});
    DecodeConfig cfg;
    cfg.beam = 40;
    cfg.max_len = 2;
    cfg.threshold = 0.0;
    cfg.temperature = 2.0;

    auto av = align_vdba_decode(scorer, cs, cfg);
    REQUIRE(av.best.tokens.size() == 2);
    CHECK(av.best.tokens[0] == 4);  // constraint placed where the mass is

    auto vd = vdba_decode(scorer, cs, cfg);
    REQUIRE(vd.best.tokens.size() == 2);
    CHECK(vd.best.tokens == std::vector<int>{0, 4});  // pure tie-break

    // Flipping the mass flips align_vdba but not vdba.
    auto flipped_steps = uniform_steps(vocab, eos, 2, 2, {hi - 0.4, hi}, 0);
    TableScorer flipped(vocab, eos, 2, flipped_steps);
    auto av2 = align_vdba_decode(flipped, cs, cfg);
    CHECK(av2.best.tokens == std::vector<int>{0, 4});
    auto vd2 = vdba_decode(flipped, cs, cfg);
    CHECK(vd2.best.tokens == vd.best.tokens);
  }
}

TEST_CASE("replace decode without alignment hits equals beam search") {
  // Alignment mass always on source position 1; the constraint span is {0}.
  const int vocab = 5, eos = 1;
  auto steps = uniform_steps(vocab, eos, 3, 2, {0.0, 0.0, 0.0, 0.0}, 0);
  TableScorer scorer(vocab, eos, 2, steps);
  ConstraintSet cs = make_set({{0, 0, {4}}});
  DecodeConfig cfg;
  cfg.beam = 4;
  cfg.max_len = 4;
  auto rep = replace_decode(scorer, cs, cfg);
  auto plain = beam_search(scorer, cfg);
  CHECK(rep.best.tokens == plain[0].tokens);
  CHECK(rep.best.log_score == plain[0].log_score);
  CHECK(rep.satisfied.empty());
}

TEST_CASE("replace decode overwrites tokens once the alignment hits the span") {
  // Step 2 aligns into the constrained span; the two constraint tokens must
  // be emitted at steps 2 and 3 while the scores stay the model's own.
  const int vocab = 6, eos = 1;
  std::vector<TableScorer::StepSpec> steps;
  for (int t = 0; t < 6; ++t) {
    TableScorer::StepSpec sp;
    sp.log_probs.assign(vocab, std::log(0.01));
    sp.log_probs[2] = std::log(0.9);  // model always prefers token 2
    sp.log_probs[eos] = t >= 4 ? std::log(0.9) : std::log(1e-6);
    std::vector<double> dist{1.0, 0.0};       // aligns to source 0
    if (t == 2) dist = {0.0, 1.0};            // step 2 aligns to source 1
    sp.align_by_token.assign(vocab, dist);
    steps.push_back(sp);
  }
  TableScorer scorer(vocab, eos, 2, steps);
  ConstraintSet cs = make_set({{1, 1, {4, 5}}});
  DecodeConfig cfg;
  cfg.beam = 2;
  cfg.max_len = 5;
  auto r = replace_decode(scorer, cs, cfg);
  REQUIRE(r.best.tokens.size() >= 4);
  CHECK(r.best.tokens[2] == 4);
  CHECK(r.best.tokens[3] == 5);
  CHECK(r.satisfied == std::vector<int>{0});
  CHECK(r.best.tokens.size() == r.best.alignments.size());
  CHECK(r.best.alignments[2] == 1);
}

TEST_CASE("constraint phrases appear contiguously and only once per id") {
  Rng rng(23);
  for (int trial = 0; trial < 8; ++trial) {
    Model m = init_model(toy_config(300 + trial, 7));
    std::vector<int> src{0, 1, 2, 3};
    ModelScorer scorer(m, nullptr, AlignMethod::kNaive, -1, src);
    ConstraintSet cs = make_set({{0, 1, {2, 5}}, {3, 3, {6}}});
    DecodeConfig cfg;
    cfg.beam = 8;
    cfg.max_len = 9;
    for (int which = 0; which < 2; ++which) {
      DecodeResult r = which == 0 ? vdba_decode(scorer, cs, cfg)
                                  : align_vdba_decode(scorer, cs, cfg);
      for (int id : r.satisfied)
        CHECK(contains_contiguous(r.best.tokens, cs.items[id].tgt_tokens));
      CHECK(r.satisfied.size() + r.unsatisfied.size() == 2);
    }
  }
}

TEST_CASE("enlarging the beam never lowers the best score") {
  for (uint64_t seed : {51ull, 52ull, 53ull, 54ull, 55ull}) {
    Model m = init_model(toy_config(seed));
    std::vector<int> src{3, 1, 0};
    ModelScorer scorer(m, nullptr, AlignMethod::kNaive, -1, src);
    ConstraintSet cs = make_set({{0, 1, {2, 3}}});
    DecodeConfig cfg;
    cfg.max_len = 6;
    cfg.threshold = 0.0;
    double prev_vd = -kInf, prev_av = -kInf;
    for (int K : {1, 2, 5, 12, 40}) {
      cfg.beam = K;
      const double vd = vdba_decode(scorer, cs, cfg).best.log_score;
      const double av = align_vdba_decode(scorer, cs, cfg).best.log_score;
      CHECK(vd >= prev_vd - 1e-12);
      CHECK(av >= prev_av - 1e-12);
      prev_vd = vd;
      prev_av = av;
    }
  }
}

TEST_CASE("infeasible constraints are reported unsatisfied, decode still returns") {
  Model m = init_model(toy_config(61));
  std::vector<int> src{0, 1};
  ModelScorer scorer(m, nullptr, AlignMethod::kNaive, -1, src);
  ConstraintSet cs;
  cs.items = {{0, 0, {2}}, {1, 1, {97}}};  // 97 outside the vocab
  cs.feasible = {true, false};
  DecodeConfig cfg;
  cfg.beam = 6;
  cfg.max_len = 6;
  auto r = vdba_decode(scorer, cs, cfg);
  CHECK(r.satisfied == std::vector<int>{0});
  CHECK(r.unsatisfied == std::vector<int>{1});
  CHECK(!r.best.tokens.empty());
}

TEST_CASE("decoders are bit-stable across runs") {
  Model m = init_model(toy_config(71));
  std::vector<int> src{2, 3, 1};
  ConstraintSet cs = make_set({{0, 0, {3}}});
  DecodeConfig cfg;
  cfg.beam = 7;
  cfg.max_len = 7;
  std::vector<std::vector<int>> toks;
  std::vector<double> scores;
  for (int run = 0; run < 2; ++run) {
    ModelScorer scorer(m, nullptr, AlignMethod::kNaive, -1, src);
    auto r = align_vdba_decode(scorer, cs, cfg);
    toks.push_back(r.best.tokens);
    scores.push_back(r.best.log_score);
  }
  CHECK(toks[0] == toks[1]);
  CHECK(scores[0] == scores[1]);
}
