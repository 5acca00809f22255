// alnbeam command line: gen-toy | train-model | train-align | align |
// symmetrize | decode | score | bootstrap
//
// Machine-readable JSON goes to stdout (or --out); human summaries to stderr.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "alnbeam/align.h"
#include "alnbeam/constraints.h"
#include "alnbeam/corpus.h"
#include "alnbeam/decode.h"
#include "alnbeam/error.h"
#include "alnbeam/io.h"
#include "alnbeam/metrics.h"
#include "alnbeam/model.h"

using nlohmann::json;
using namespace alnbeam;

namespace {

std::optional<uint64_t> env_seed() {
  const char* v = std::getenv("ALNBEAM_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw Error::config("ALNBEAM_SEED is not an integer");
  }
}

uint64_t apply_env_seed(uint64_t seed) { return env_seed().value_or(seed); }

void emit(const json& payload, const std::string& out_path) {
  const std::string text = payload.dump() + "\n";
  if (out_path.empty())
    std::cout << text;
  else
    write_file(out_path, text);
}

std::vector<int> encode_line(const Vocab& v, const std::vector<std::string>& words) {
  return v.encode(words);
}

struct DecodedLine {
  std::vector<std::string> tokens;
  long long micros = 0;
};

std::vector<DecodedLine> read_decode_jsonl(const std::string& path) {
  std::vector<DecodedLine> out;
  std::string content = read_file(path);
  size_t pos = 0;
  while (pos < content.size()) {
    size_t nl = content.find('\n', pos);
    if (nl == std::string::npos) nl = content.size();
    const std::string line = content.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      DecodedLine d;
      d.tokens = j.at("tokens").get<std::vector<std::string>>();
      if (j.contains("micros")) d.micros = j["micros"].get<long long>();
      out.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw Error::format("bad decode output line in " + path + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::vector<TokenLine>> constraint_phrases(const ConstraintFile& file) {
  std::vector<std::vector<TokenLine>> out;
  for (const auto& items : file.sentences) {
    std::vector<TokenLine> phrases;
    for (const auto& item : items) phrases.push_back(item.tgt_tokens);
    out.push_back(std::move(phrases));
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_gen_toy(const std::string& out_dir, ToySpec spec, int heldout,
                const std::string& out_path) {
  spec.seed = apply_env_seed(spec.seed);
  std::filesystem::create_directories(out_dir);
  const int total = spec.n_sentences + heldout;
  ToySpec full = spec;
  full.n_sentences = total;
  ToyCorpus corpus = gen_toy_corpus(full);

  ToyCorpus train = corpus;
  train.sentences.assign(corpus.sentences.begin(), corpus.sentences.begin() + spec.n_sentences);
  write_corpus(train, out_dir, "train");
  if (heldout > 0) {
    ToyCorpus held = corpus;
    held.sentences.assign(corpus.sentences.begin() + spec.n_sentences, corpus.sentences.end());
    write_corpus(held, out_dir, "heldout");
  }
  // One shared vocabulary; written under both names the other commands take.
  corpus.src_vocab.save(out_dir + "/src.vocab");
  corpus.tgt_vocab.save(out_dir + "/tgt.vocab");

  json j{{"train_sentences", spec.n_sentences},
         {"heldout_sentences", heldout},
         {"src_vocab", corpus.src_vocab.size()},
         {"tgt_vocab", corpus.tgt_vocab.size()},
         {"ambiguity", spec.ambiguity},
         {"seed", spec.seed}};
  emit(j, out_path);
  std::cerr << "gen-toy: " << total << " sentences into " << out_dir << "\n";
  return 0;
}

ToyCorpus load_text_corpus(const std::string& src_path, const std::string& tgt_path,
                           const Vocab& src_vocab, const Vocab& tgt_vocab) {
  ToyCorpus corpus;
  corpus.src_vocab = src_vocab;
  corpus.tgt_vocab = tgt_vocab;
  corpus.bos_id = tgt_vocab.require("<s>");
  corpus.eos_id = tgt_vocab.require("</s>");
  auto src_lines = read_token_lines(src_path);
  auto tgt_lines = read_token_lines(tgt_path);
  if (src_lines.size() != tgt_lines.size())
    throw Error::data("source and target files have different line counts");
  for (size_t i = 0; i < src_lines.size(); ++i) {
    SentencePair s;
    s.src = src_vocab.encode(src_lines[i]);
    s.tgt = tgt_vocab.encode(tgt_lines[i]);
    corpus.sentences.push_back(std::move(s));
  }
  return corpus;
}

int cmd_train_model(const std::string& src, const std::string& tgt, const std::string& src_vocab,
                    const std::string& tgt_vocab, const std::string& heldout_src,
                    const std::string& heldout_tgt, ModelTrainConfig cfg,
                    const std::string& model_out, const std::string& out_path) {
  cfg.seed = apply_env_seed(cfg.seed);
  Vocab sv = Vocab::load(src_vocab);
  Vocab tv = Vocab::load(tgt_vocab);
  ToyCorpus corpus = load_text_corpus(src, tgt, sv, tv);
  std::vector<SentencePair> heldout;
  if (!heldout_src.empty()) {
    ToyCorpus h = load_text_corpus(heldout_src, heldout_tgt, sv, tv);
    heldout = std::move(h.sentences);
  }
  ModelTrainResult r = train_toy_model(corpus, heldout, cfg);
  save_model(r.model, model_out);
  char checksum[32];
  std::snprintf(checksum, sizeof checksum, "%016llx",
                static_cast<unsigned long long>(model_checksum(r.model)));
  json j{{"final_loss", r.final_loss},
         {"heldout_accuracy", r.heldout_accuracy},
         {"steps", r.steps},
         {"checksum", checksum}};
  emit(j, out_path);
  std::cerr << "train-model: loss " << r.final_loss << ", heldout acc " << r.heldout_accuracy
            << ", saved " << model_out << "\n";
  return 0;
}

// Forced decode of every sentence pair with all steps cached.
ModelState forced_state(const Model& m, const SentencePair& s) {
  ModelState state = encode(m, s.src);
  decode_step(m, state, m.config.bos_id);
  for (int tok : s.tgt) decode_step(m, state, tok);
  return state;
}

std::vector<double> method_dist(const Model& m, const AlignHead* head, AlignMethod method,
                                int layer, const ModelState& state, int t, int y_t) {
  switch (method) {
    case AlignMethod::kNaive: return naive_att(state, layer, t);
    case AlignMethod::kShift: return shift_att(m, state, layer, t, y_t);
    case AlignMethod::kPrior: return prior_align(*head, state, t);
    case AlignMethod::kShiftAet: return shift_aet(*head, m, state, t, y_t);
    case AlignMethod::kPostAln: return posterior_align(*head, m, state, t, y_t);
  }
  throw Error::state("unreachable align method");
}

std::vector<Alignment> extract_corpus_alignments(const Model& m, const AlignHead* head,
                                                 AlignMethod method, int layer,
                                                 const ToyCorpus& corpus) {
  if (method_needs_head(method) && head == nullptr)
    throw Error::config("align method " + to_string(method) + " needs --align-head");
  const int use_layer = layer >= 0 ? layer : m.config.align_layer();
  std::vector<Alignment> out;
  for (const auto& s : corpus.sentences) {
    ModelState state = forced_state(m, s);
    Alignment a;
    for (int t = 0; t < static_cast<int>(s.tgt.size()); ++t) {
      auto dist = method_dist(m, head, method, use_layer, state, t, s.tgt[t]);
      a.add(hard_align(dist), t, true);
    }
    out.push_back(std::move(a));
  }
  return out;
}

int cmd_align(const std::string& model_path, const std::string& head_path,
              const std::string& method_name, int layer, const std::string& src,
              const std::string& tgt, const std::string& src_vocab, const std::string& tgt_vocab,
              const std::string& align_out, const std::string& out_path) {
  Model m = load_model(model_path);
  std::optional<AlignHead> head;
  if (!head_path.empty()) head = load_align_head(head_path);
  AlignMethod method = align_method_from_string(method_name);
  ToyCorpus corpus =
      load_text_corpus(src, tgt, Vocab::load(src_vocab), Vocab::load(tgt_vocab));
  auto alignments =
      extract_corpus_alignments(m, head ? &*head : nullptr, method, layer, corpus);
  write_pharaoh(align_out, alignments);
  json j{{"sentences", alignments.size()}, {"method", method_name}};
  emit(j, out_path);
  std::cerr << "align: wrote " << alignments.size() << " lines to " << align_out << "\n";
  return 0;
}

int cmd_train_align(const std::string& model_path, const std::string& src, const std::string& tgt,
                    const std::string& src_vocab, const std::string& tgt_vocab,
                    const std::string& method_name, const std::string& supervision,
                    const std::string& gold_path, const std::string& reverse_model_path,
                    int layer, AlignTrainConfig cfg, const std::string& head_out,
                    const std::string& out_path) {
  cfg.seed = apply_env_seed(cfg.seed);
  Model m = load_model(model_path);
  AlignMethod method = align_method_from_string(method_name);
  ToyCorpus corpus =
      load_text_corpus(src, tgt, Vocab::load(src_vocab), Vocab::load(tgt_vocab));

  std::vector<Alignment> labels;
  if (supervision == "gold") {
    if (gold_path.empty()) throw Error::config("--supervision gold requires --gold");
    labels = read_pharaoh(gold_path);
    if (labels.size() != corpus.sentences.size())
      throw Error::data("gold alignment count does not match corpus size");
  } else if (supervision == "shiftatt") {
    labels = extract_corpus_alignments(m, nullptr, AlignMethod::kShift, layer, corpus);
    if (!reverse_model_path.empty()) {
      Model rev = load_model(reverse_model_path);
      ToyCorpus rcorpus =
          load_text_corpus(tgt, src, Vocab::load(tgt_vocab), Vocab::load(src_vocab));
      auto rev_raw = extract_corpus_alignments(rev, nullptr, AlignMethod::kShift, layer, rcorpus);
      for (size_t i = 0; i < labels.size(); ++i)
        labels[i] = symmetrize_grow_diag(labels[i], transpose_alignment(rev_raw[i]), true);
    }
  } else {
    throw Error::config("--supervision must be 'gold' or 'shiftatt'");
  }

  AlignTrainData data;
  for (size_t i = 0; i < corpus.sentences.size(); ++i) {
    const auto& s = corpus.sentences[i];
    data.src.push_back(s.src);
    data.tgt.push_back(s.tgt);
    data.supervision.push_back(supervision_from_alignment(
        labels[i], static_cast<int>(s.tgt.size()), static_cast<int>(s.src.size())));
  }
  AlignTrainResult r = train_align_head(m, data, method, cfg);
  save_align_head(r.head, head_out);
  json j{{"final_loss", r.final_loss},
         {"examples", data.src.size()},
         {"method", method_name},
         {"parameters", r.head.param_count()}};
  emit(j, out_path);
  std::cerr << "train-align: loss " << r.final_loss << ", saved " << head_out << "\n";
  return 0;
}

int cmd_extract_constraints(const std::string& src, const std::string& ref,
                            const std::string& gold_path, const std::string& greedy_path,
                            const std::string& greedy_jsonl, const std::string& src_vocab,
                            const std::string& tgt_vocab, ExtractParams params,
                            const std::string& cons_out, const std::string& out_path) {
  params.seed = apply_env_seed(params.seed);
  Vocab sv = Vocab::load(src_vocab);
  Vocab tv = Vocab::load(tgt_vocab);
  auto src_lines = read_token_lines(src);
  auto ref_lines = read_token_lines(ref);
  auto gold = read_pharaoh(gold_path);
  std::vector<std::vector<std::string>> greedy_lines;
  if (!greedy_jsonl.empty()) {
    for (auto& d : read_decode_jsonl(greedy_jsonl)) greedy_lines.push_back(d.tokens);
  } else if (!greedy_path.empty()) {
    greedy_lines = read_token_lines(greedy_path);
  } else {
    throw Error::config("extract-constraints needs --greedy or --greedy-jsonl");
  }
  if (src_lines.size() != ref_lines.size() || src_lines.size() != gold.size() ||
      src_lines.size() != greedy_lines.size())
    throw Error::data("src/ref/gold/greedy line counts differ");

  ConstraintFile file;
  int total = 0;
  for (size_t i = 0; i < src_lines.size(); ++i) {
    std::vector<int> s = sv.encode(src_lines[i]);
    std::vector<int> r = tv.encode(ref_lines[i]);
    std::vector<int> g;
    for (const auto& w : greedy_lines[i]) g.push_back(tv.id(w));  // unknowns never match
    ExtractParams p = params;
    p.seed = params.seed + i;  // per-sentence stream, deterministic in the base seed
    auto cons = extract_constraints(gold[i], s, r, g, p);
    total += static_cast<int>(cons.size());
    file.sentences.push_back(to_file_items(cons, tv));
  }
  write_constraints_jsonl(cons_out, file);
  json j{{"sentences", file.sentences.size()}, {"constraints", total}, {"seed", params.seed}};
  emit(j, out_path);
  std::cerr << "extract-constraints: " << total << " constraints over " << file.sentences.size()
            << " sentences\n";
  return 0;
}

int cmd_symmetrize(const std::string& fwd_path, const std::string& rev_path, bool final_and,
                   bool transpose_rev, const std::string& align_out, const std::string& out_path) {
  auto fwd = read_pharaoh(fwd_path);
  auto rev = read_pharaoh(rev_path);
  if (fwd.size() != rev.size())
    throw Error::data("forward and reverse alignment files have different line counts");
  std::vector<Alignment> out;
  for (size_t i = 0; i < fwd.size(); ++i) {
    Alignment r = transpose_rev ? transpose_alignment(rev[i]) : rev[i];
    out.push_back(symmetrize_grow_diag(fwd[i], r, final_and));
  }
  write_pharaoh(align_out, out);
  json j{{"sentences", out.size()}, {"final_and", final_and}};
  emit(j, out_path);
  std::cerr << "symmetrize: wrote " << out.size() << " lines to " << align_out << "\n";
  return 0;
}

int cmd_decode(const std::string& model_path, const std::string& head_path,
               const std::string& src_path, const std::string& src_vocab_path,
               const std::string& tgt_vocab_path, const std::string& constraints_path,
               DecodeConfig config, const std::string& method_name,
               const std::string& align_method_name, int jobs, bool timing,
               const std::string& out_path) {
  config.method = decode_method_from_string(method_name);
  config.align_method = align_method_from_string(align_method_name);
  config.validate();
  Model m = load_model(model_path);
  std::optional<AlignHead> head;
  if (!head_path.empty()) head = load_align_head(head_path);
  if (config.method == DecodeMethod::kAlignVdba && method_needs_head(config.align_method) &&
      !head)
    throw Error::config("align-vdba with " + align_method_name + " needs --align-head");
  if (config.method == DecodeMethod::kReplace && method_needs_head(config.align_method) && !head)
    throw Error::config("replace decoding with " + align_method_name + " needs --align-head");

  Vocab sv = Vocab::load(src_vocab_path);
  Vocab tv = Vocab::load(tgt_vocab_path);
  auto src_lines = read_token_lines(src_path);

  ConstraintFile cfile;
  if (!constraints_path.empty()) {
    cfile = read_constraints_jsonl(constraints_path);
    if (cfile.sentences.size() != src_lines.size())
      throw Error::data("constraint file line count does not match source");
  } else {
    cfile.sentences.resize(src_lines.size());
  }

  const int bos = tv.require("<s>");
  const int eos = tv.require("</s>");
  std::vector<std::string> lines(src_lines.size());

  auto run_sentence = [&](size_t i) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int> src = sv.encode(src_lines[i]);
    ConstraintSet cs = to_constraint_set(cfile.sentences[i], tv, bos, eos);
    ModelScorer scorer(m, head ? &*head : nullptr, config.align_method, config.layer, src);
    DecodeResult r;
    switch (config.method) {
      case DecodeMethod::kNone: {
        auto hyps = beam_search(scorer, config);
        r.best = hyps.front();
        for (int c = 0; c < cs.size(); ++c) r.unsatisfied.push_back(c);
        break;
      }
      case DecodeMethod::kReplace: r = replace_decode(scorer, cs, config); break;
      case DecodeMethod::kVdba: r = vdba_decode(scorer, cs, config); break;
      case DecodeMethod::kAlignVdba: r = align_vdba_decode(scorer, cs, config); break;
    }
    const auto t1 = std::chrono::steady_clock::now();
    r.micros = timing
        ? std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count()
        : 0;
    json j{{"tokens", tv.decode(r.best.tokens)},
           {"log_score", r.best.log_score},
           {"alignments", r.best.alignments},
           {"satisfied", r.satisfied},
           {"unsatisfied", r.unsatisfied},
           {"fallback", r.best.fallback},
           {"micros", r.micros}};
    lines[i] = j.dump();
  };

  if (jobs <= 1) {
    for (size_t i = 0; i < src_lines.size(); ++i) run_sentence(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < jobs; ++w)
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < src_lines.size(); i = next.fetch_add(1))
          run_sentence(i);
      });
    for (auto& th : pool) th.join();
  }

  std::string text;
  for (const auto& l : lines) {
    text += l;
    text += '\n';
  }
  if (out_path.empty())
    std::cout << text;
  else
    write_file(out_path, text);
  std::cerr << "decode: " << src_lines.size() << " sentences, method " << method_name << "\n";
  return 0;
}

int cmd_score(const std::string& metric, const std::string& pred, const std::string& gold,
              const std::string& ref_path, const std::string& hyp_path,
              const std::string& hyp_jsonl, const std::string& constraints_path, int window,
              bool smooth, bool tsv, const std::string& out_path) {
  json j;
  std::vector<TokenLine> hyps;
  long long total_micros = 0;
  if (!hyp_jsonl.empty()) {
    for (auto& d : read_decode_jsonl(hyp_jsonl)) {
      hyps.push_back(d.tokens);
      total_micros += d.micros;
    }
  } else if (!hyp_path.empty()) {
    hyps = read_token_lines(hyp_path);
  }

  if (metric == "aer") {
    if (pred.empty() || gold.empty()) throw Error::config("aer needs --pred and --gold");
    auto p = read_pharaoh(pred);
    auto g = read_pharaoh(gold);
    if (p.size() != g.size()) throw Error::data("pred and gold files have different line counts");
    // Corpus AER pools link counts over all sentences.
    size_t a_p = 0, a_s = 0, a_n = 0, s_n = 0;
    for (size_t i = 0; i < p.size(); ++i) {
      for (const auto& l : p[i].all()) {
        if (g[i].all().count(l)) ++a_p;
        if (g[i].sure().count(l)) ++a_s;
      }
      a_n += p[i].size();
      s_n += g[i].sure().size();
    }
    const double v = (a_n + s_n) == 0
        ? 0.0
        : 1.0 - static_cast<double>(a_p + a_s) / static_cast<double>(a_n + s_n);
    j = json{{"aer", v}, {"sentences", p.size()}};
  } else if (metric == "bleu") {
    auto refs = read_token_lines(ref_path);
    j = json{{"bleu", bleu(refs, hyps, smooth)}, {"sentences", refs.size()}};
  } else if (metric == "csr") {
    auto phrases = constraint_phrases(read_constraints_jsonl(constraints_path));
    j = json{{"csr", csr(phrases, hyps)}};
  } else if (metric == "bleu-c" || metric == "report") {
    auto refs = read_token_lines(ref_path);
    auto phrases = constraint_phrases(read_constraints_jsonl(constraints_path));
    if (refs.size() != hyps.size() || refs.size() != phrases.size())
      throw Error::data("ref/hyp/constraints line counts differ");
    std::vector<SpanPair> spans;
    std::vector<std::vector<bool>> satisfied_all;
    for (size_t i = 0; i < refs.size(); ++i) {
      std::vector<bool> satisfied;
      for (const auto& phrase : phrases[i]) satisfied.push_back(phrase_in(phrase, hyps[i]));
      auto sp = extract_spans(refs[i], hyps[i], phrases[i], satisfied, window);
      spans.insert(spans.end(), sp.begin(), sp.end());
      satisfied_all.push_back(std::move(satisfied));
    }
    const double bc = spans.empty() ? 0.0 : bleu_c(spans, smooth);
    if (metric == "bleu-c") {
      j = json{{"bleu_c", bc}, {"constraints", spans.size()}};
    } else {
      j = json{{"bleu", bleu(refs, hyps, smooth)},
               {"bleu_c", bc},
               {"csr", csr(phrases, hyps)},
               {"time_seconds", static_cast<double>(total_micros) / 1e6},
               {"per_constraint", satisfied_all}};
    }
  } else {
    throw Error::config("unknown metric: " + metric);
  }

  if (tsv && metric == "report") {
    std::string t = "bleu_c\tcsr\tbleu\ttime_seconds\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.2f\t%.2f\t%.2f\t%.2f\n", j["bleu_c"].get<double>(),
                  j["csr"].get<double>(), j["bleu"].get<double>(),
                  j["time_seconds"].get<double>());
    t += buf;
    if (out_path.empty())
      std::cout << t;
    else
      write_file(out_path, t);
  } else {
    emit(j, out_path);
  }
  std::cerr << "score: " << metric << " done\n";
  return 0;
}

int cmd_bootstrap(const std::string& metric, const std::string& ref_path,
                  const std::string& hyp_a, const std::string& hyp_b,
                  const std::string& constraints_path, int samples, uint64_t seed, bool smooth,
                  const std::string& out_path) {
  seed = apply_env_seed(seed);
  auto a = read_token_lines(hyp_a);
  auto b = read_token_lines(hyp_b);
  double p;
  if (metric == "bleu") {
    auto refs = read_token_lines(ref_path);
    p = paired_bootstrap_bleu(refs, a, b, samples, seed, smooth);
  } else if (metric == "csr") {
    auto phrases = constraint_phrases(read_constraints_jsonl(constraints_path));
    p = paired_bootstrap_csr(phrases, a, b, samples, seed);
  } else {
    throw Error::config("bootstrap metric must be 'bleu' or 'csr'");
  }
  json j{{"p_value", p}, {"samples", samples}, {"metric", metric}, {"seed", seed}};
  emit(j, out_path);
  std::cerr << "bootstrap: p = " << p << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"online posterior alignment and lexically constrained decoding"};
  app.require_subcommand(1);

  std::string out_path;
  app.add_option("--out", out_path, "write machine-readable output here instead of stdout")
      ->capture_default_str();

  // gen-toy
  auto* gen = app.add_subcommand("gen-toy", "generate a synthetic parallel corpus");
  std::string gen_dir;
  ToySpec spec;
  int gen_heldout = 0;
  gen->add_option("--out-dir", gen_dir, "output directory")->required();
  gen->add_option("--lexicon", spec.lexicon_size, "source lexicon size");
  gen->add_option("--ambiguity", spec.ambiguity, "fraction of paired source words");
  gen->add_option("--reorder", spec.reorder, "verb-final | none");
  gen->add_option("--sentences", spec.n_sentences, "training sentences");
  gen->add_option("--heldout", gen_heldout, "additional held-out sentences");
  gen->add_option("--min-len", spec.min_len, "minimum sentence length");
  gen->add_option("--max-len", spec.max_len, "maximum sentence length");
  gen->add_option("--seed", spec.seed, "corpus seed");

  // train-model
  auto* tm = app.add_subcommand("train-model", "train the toy translation model");
  std::string tm_src, tm_tgt, tm_sv, tm_tv, tm_hsrc, tm_htgt, tm_out;
  ModelTrainConfig tm_cfg;
  tm->add_option("--src", tm_src)->required();
  tm->add_option("--tgt", tm_tgt)->required();
  tm->add_option("--src-vocab", tm_sv)->required();
  tm->add_option("--tgt-vocab", tm_tv)->required();
  tm->add_option("--heldout-src", tm_hsrc);
  tm->add_option("--heldout-tgt", tm_htgt);
  tm->add_option("--model-out", tm_out, "model file to write")->required();
  tm->add_option("--d", tm_cfg.d);
  tm->add_option("--heads", tm_cfg.n_heads);
  tm->add_option("--layers", tm_cfg.n_layers);
  tm->add_option("--ff", tm_cfg.d_ff);
  tm->add_option("--epochs", tm_cfg.epochs);
  tm->add_option("--lr", tm_cfg.lr);
  tm->add_option("--clip", tm_cfg.clip);
  tm->add_option("--optimizer", tm_cfg.optimizer, "sgd | adam");
  tm->add_option("--seed", tm_cfg.seed);

  // train-align
  auto* ta = app.add_subcommand("train-align", "train an alignment sub-layer");
  std::string ta_model, ta_src, ta_tgt, ta_sv, ta_tv, ta_method = "postaln";
  std::string ta_supervision = "shiftatt", ta_gold, ta_rev_model, ta_out;
  int ta_layer = -1;
  AlignTrainConfig ta_cfg;
  ta->add_option("--model", ta_model)->required();
  ta->add_option("--src", ta_src)->required();
  ta->add_option("--tgt", ta_tgt)->required();
  ta->add_option("--src-vocab", ta_sv)->required();
  ta->add_option("--tgt-vocab", ta_tv)->required();
  ta->add_option("--method", ta_method, "postaln | prior | shift-aet");
  ta->add_option("--supervision", ta_supervision,
                 "shiftatt (symmetrized when --reverse-model is given) | gold");
  ta->add_option("--gold", ta_gold, "gold pharaoh file for --supervision gold");
  ta->add_option("--reverse-model", ta_rev_model,
                 "reverse-direction model for symmetrized shiftatt supervision");
  ta->add_option("--layer", ta_layer, "attention layer for shiftatt supervision");
  ta->add_option("--head-out", ta_out)->required();
  ta->add_option("--epochs", ta_cfg.epochs);
  ta->add_option("--lr", ta_cfg.lr);
  ta->add_option("--optimizer", ta_cfg.optimizer);
  ta->add_option("--seed", ta_cfg.seed);

  // align
  auto* al = app.add_subcommand("align", "extract alignments by forced decoding");
  std::string al_model, al_head, al_method = "postaln", al_src, al_tgt, al_sv, al_tv, al_out;
  int al_layer = -1;
  al->add_option("--model", al_model)->required();
  al->add_option("--align-head", al_head);
  al->add_option("--method", al_method, "naive | shift | prior | shift-aet | postaln");
  al->add_option("--layer", al_layer, "decoder layer for naive/shift (-1 = penultimate)");
  al->add_option("--src", al_src)->required();
  al->add_option("--tgt", al_tgt)->required();
  al->add_option("--src-vocab", al_sv)->required();
  al->add_option("--tgt-vocab", al_tv)->required();
  al->add_option("--align-out", al_out, "pharaoh output file")->required();

  // extract-constraints
  auto* ec = app.add_subcommand("extract-constraints",
                                "sample constraint sets from gold alignments");
  std::string ec_src, ec_ref, ec_gold, ec_greedy, ec_greedy_jsonl, ec_sv, ec_tv, ec_out;
  ExtractParams ec_params;
  ec->add_option("--src", ec_src)->required();
  ec->add_option("--ref", ec_ref, "reference translations")->required();
  ec->add_option("--gold", ec_gold, "gold pharaoh alignments")->required();
  ec->add_option("--greedy", ec_greedy, "greedy decode, plain text");
  ec->add_option("--greedy-jsonl", ec_greedy_jsonl, "greedy decode output JSONL");
  ec->add_option("--src-vocab", ec_sv)->required();
  ec->add_option("--tgt-vocab", ec_tv)->required();
  ec->add_option("--max-constraints", ec_params.max_constraints);
  ec->add_option("--max-phrase-len", ec_params.max_phrase_len);
  ec->add_option("--seed", ec_params.seed);
  ec->add_option("--constraints-out", ec_out)->required();

  // symmetrize
  auto* sy = app.add_subcommand("symmetrize", "grow-diag symmetrization of two alignments");
  std::string sy_fwd, sy_rev, sy_out;
  bool sy_no_final_and = false, sy_no_transpose = false;
  sy->add_option("--fwd", sy_fwd)->required();
  sy->add_option("--rev", sy_rev)->required();
  sy->add_option("--align-out", sy_out)->required();
  sy->add_flag("--no-final-and", sy_no_final_and, "skip the final-and step");
  sy->add_flag("--no-transpose-rev", sy_no_transpose,
               "reverse file is already in (src,tgt) order");

  // decode
  auto* de = app.add_subcommand("decode", "translate with optional lexical constraints");
  std::string de_model, de_head, de_src, de_sv, de_tv, de_cons;
  std::string de_method = "none", de_align_method = "postaln";
  DecodeConfig de_cfg;
  int de_jobs = 1;
  bool de_no_timing = false;
  de->add_option("--model", de_model)->required();
  de->add_option("--align-head", de_head);
  de->add_option("--src", de_src)->required();
  de->add_option("--src-vocab", de_sv)->required();
  de->add_option("--tgt-vocab", de_tv)->required();
  de->add_option("--constraints", de_cons, "constraint JSONL file");
  de->add_option("--method", de_method, "none | replace | vdba | align-vdba");
  de->add_option("--align-method", de_align_method,
                 "naive | prior | shift | shift-aet | postaln");
  de->add_option("--beam", de_cfg.beam);
  de->add_option("--threshold", de_cfg.threshold);
  de->add_option("--temperature", de_cfg.temperature);
  de->add_option("--layer", de_cfg.layer);
  de->add_option("--max-len", de_cfg.max_len, "0 = source length + constraint tokens + 8");
  de->add_flag("--length-norm", de_cfg.length_norm);
  de->add_option("--jobs", de_jobs, "decode sentences in parallel");
  de->add_flag("--no-timing", de_no_timing, "write micros as 0 for reproducible output");

  // score
  auto* sc = app.add_subcommand("score", "aer | bleu | bleu-c | csr | report");
  std::string sc_metric, sc_pred, sc_gold, sc_ref, sc_hyp, sc_hyp_jsonl, sc_cons;
  int sc_window = 3;
  bool sc_smooth = false, sc_tsv = false;
  sc->add_option("--metric", sc_metric)->required();
  sc->add_option("--pred", sc_pred, "predicted pharaoh alignments (aer)");
  sc->add_option("--gold", sc_gold, "gold pharaoh alignments (aer)");
  sc->add_option("--ref", sc_ref, "reference text");
  sc->add_option("--hyp", sc_hyp, "hypothesis text");
  sc->add_option("--hyp-jsonl", sc_hyp_jsonl, "decode output JSONL");
  sc->add_option("--constraints", sc_cons, "constraint JSONL file");
  sc->add_option("--window", sc_window, "BLEU-C window size");
  sc->add_flag("--smooth", sc_smooth, "add-one smoothing for tiny corpora");
  sc->add_flag("--tsv", sc_tsv, "emit the report as TSV");

  // bootstrap
  auto* bs = app.add_subcommand("bootstrap", "paired bootstrap significance test");
  std::string bs_metric = "bleu", bs_ref, bs_a, bs_b, bs_cons;
  int bs_samples = 10000;
  uint64_t bs_seed = 1;
  bool bs_smooth = false;
  bs->add_option("--metric", bs_metric, "bleu | csr");
  bs->add_option("--ref", bs_ref);
  bs->add_option("--hyp-a", bs_a)->required();
  bs->add_option("--hyp-b", bs_b, "baseline system")->required();
  bs->add_option("--constraints", bs_cons);
  bs->add_option("--samples", bs_samples);
  bs->add_option("--seed", bs_seed);
  bs->add_flag("--smooth", bs_smooth);

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_toy(gen_dir, spec, gen_heldout, out_path);
    if (tm->parsed())
      return cmd_train_model(tm_src, tm_tgt, tm_sv, tm_tv, tm_hsrc, tm_htgt, tm_cfg, tm_out,
                             out_path);
    if (ta->parsed())
      return cmd_train_align(ta_model, ta_src, ta_tgt, ta_sv, ta_tv, ta_method, ta_supervision,
                             ta_gold, ta_rev_model, ta_layer, ta_cfg, ta_out, out_path);
    if (al->parsed())
      return cmd_align(al_model, al_head, al_method, al_layer, al_src, al_tgt, al_sv, al_tv,
                       al_out, out_path);
    if (ec->parsed())
      return cmd_extract_constraints(ec_src, ec_ref, ec_gold, ec_greedy, ec_greedy_jsonl, ec_sv,
                                     ec_tv, ec_params, ec_out, out_path);
    if (sy->parsed())
      return cmd_symmetrize(sy_fwd, sy_rev, !sy_no_final_and, !sy_no_transpose, sy_out, out_path);
    if (de->parsed())
      return cmd_decode(de_model, de_head, de_src, de_sv, de_tv, de_cons, de_cfg, de_method,
                        de_align_method, de_jobs, !de_no_timing, out_path);
    if (sc->parsed())
      return cmd_score(sc_metric, sc_pred, sc_gold, sc_ref, sc_hyp, sc_hyp_jsonl, sc_cons,
                       sc_window, sc_smooth, sc_tsv, out_path);
    if (bs->parsed())
      return cmd_bootstrap(bs_metric, bs_ref, bs_a, bs_b, bs_cons, bs_samples, bs_seed, bs_smooth,
                           out_path);
  } catch (const Error& e) {
    std::cerr << "alnbeam: " << to_string(e.category()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "alnbeam: state: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
