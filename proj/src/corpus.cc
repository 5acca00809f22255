#include "alnbeam/corpus.h"

#include <algorithm>
#include <cmath>

#include "alnbeam/error.h"
#include "alnbeam/model_train.h"
#include "alnbeam/rng.h"

namespace alnbeam {

void ToySpec::validate() const {
  if (lexicon_size < 2) throw Error::config("lexicon_size must be at least 2");
  if (ambiguity < 0.0 || ambiguity > 1.0) throw Error::config("ambiguity rate must be in [0, 1]");
  if (reorder != "verb-final" && reorder != "none")
    throw Error::config("reorder must be 'verb-final' or 'none'");
  if (n_sentences < 1) throw Error::config("n_sentences must be positive");
  if (min_len < 1 || max_len < min_len) throw Error::config("need 1 <= min_len <= max_len");
  if (max_len > lexicon_size)
    throw Error::config("max_len cannot exceed lexicon_size (words are drawn without replacement)");
}

namespace {

bool is_verb(int word) { return word % 4 == 3; }

}  // namespace

ToyCorpus gen_toy_corpus(const ToySpec& spec) {
  spec.validate();
  const int N = spec.lexicon_size;
  int n_amb = static_cast<int>(spec.ambiguity * N);
  n_amb -= n_amb % 2;  // paired words come in twos

  // partner[i] >= 0 marks an ambiguous word; pair_id[i] indexes its pair.
  std::vector<int> partner(N, -1), pair_id(N, -1);
  for (int j = 0; j * 2 + 1 < n_amb; ++j) {
    partner[2 * j] = 2 * j + 1;
    partner[2 * j + 1] = 2 * j;
    pair_id[2 * j] = j;
    pair_id[2 * j + 1] = j;
  }
  const int n_pairs = n_amb / 2;

  // One word-level vocabulary shared by both sides, with the sentence
  // markers up front; a reverse-direction model trains on the same files.
  std::vector<std::string> tokens;
  tokens.push_back("<s>");
  tokens.push_back("</s>");
  for (int i = 0; i < N; ++i) tokens.push_back("s" + std::to_string(i));
  for (int i = 0; i < N; ++i) tokens.push_back("t" + std::to_string(i));
  for (int p = 0; p < n_pairs; ++p) tokens.push_back("u" + std::to_string(p));
  const auto src_tok = [](int word) { return 2 + word; };
  const auto unique_tok = [N](int word) { return 2 + N + word; };
  // Shared tokens sort after the unique ones; the pair-slot rule depends on
  // that ordering.
  const auto shared_tok = [N](int pair) { return 2 + 2 * N + pair; };

  ToyCorpus corpus;
  corpus.src_vocab = Vocab::from_tokens(tokens);
  corpus.tgt_vocab = corpus.src_vocab;
  corpus.bos_id = 0;
  corpus.eos_id = 1;

  Rng rng(spec.seed);
  std::vector<int> deck(N);
  for (int i = 0; i < N; ++i) deck[i] = i;

  for (int s = 0; s < spec.n_sentences; ++s) {
    const int k = spec.min_len + static_cast<int>(rng.below(spec.max_len - spec.min_len + 1));
    rng.shuffle(deck);
    std::vector<int> words;
    std::vector<bool> present(N, false);
    for (int cand : deck) {
      if (static_cast<int>(words.size()) >= k) break;
      if (present[cand]) continue;
      words.push_back(cand);
      present[cand] = true;
      // Keep ambiguous pairs together so the shared token stays ambiguous.
      const int mate = partner[cand];
      if (mate >= 0 && !present[mate] && static_cast<int>(words.size()) < k) {
        words.push_back(mate);
        present[mate] = true;
      }
    }
    const int len = static_cast<int>(words.size());

    // Target slot for each source position.
    std::vector<int> slot_of(len);
    if (spec.reorder == "verb-final") {
      int slot = 0;
      for (int p = 0; p < len; ++p)
        if (!is_verb(words[p])) slot_of[p] = slot++;
      for (int p = 0; p < len; ++p)
        if (is_verb(words[p])) slot_of[p] = slot++;
    } else {
      for (int p = 0; p < len; ++p) slot_of[p] = p;
    }

    // Emissions. Pairs with both words present draw two distinct tokens from
    // {unique_a, unique_b, shared}; the shared token can come from either.
    std::vector<int> emit(len, -1);
    std::vector<int> pos_of_word(N, -1);
    for (int p = 0; p < len; ++p) pos_of_word[words[p]] = p;
    for (int p = 0; p < len; ++p) {
      const int w = words[p];
      if (partner[w] < 0) {
        emit[p] = unique_tok(w);
        continue;
      }
      const int mate = partner[w];
      if (!present[mate]) {
        emit[p] = rng.below(2) == 0 ? unique_tok(w) : shared_tok(pair_id[w]);
        continue;
      }
      if (w > mate) continue;  // handled when visiting the lower word
      const int pm = pos_of_word[mate];
      const int combo = static_cast<int>(rng.below(3));
      if (combo == 0) {
        emit[p] = unique_tok(w);
        emit[pm] = unique_tok(mate);
      } else if (combo == 1) {
        emit[p] = unique_tok(w);
        emit[pm] = shared_tok(pair_id[w]);
      } else {
        emit[p] = shared_tok(pair_id[w]);
        emit[pm] = unique_tok(mate);
      }
    }

    // Fill slots; a co-occurring pair's two emissions land in its two slots
    // in token-id order, so the slot order reveals nothing by itself.
    SentencePair sent;
    sent.src.reserve(len);
    for (int w : words) sent.src.push_back(src_tok(w));
    sent.tgt.assign(len, -1);
    std::vector<bool> handled(len, false);
    for (int p = 0; p < len; ++p) {
      if (handled[p]) continue;
      const int w = words[p];
      const int mate = partner[w] >= 0 && present[partner[w]] ? pos_of_word[partner[w]] : -1;
      if (mate < 0) {
        sent.tgt[slot_of[p]] = emit[p];
        sent.gold.add(p, slot_of[p], true);
        handled[p] = true;
        continue;
      }
      const int q1 = std::min(slot_of[p], slot_of[mate]);
      const int q2 = std::max(slot_of[p], slot_of[mate]);
      const int first_pos = emit[p] <= emit[mate] ? p : mate;
      const int second_pos = first_pos == p ? mate : p;
      sent.tgt[q1] = emit[first_pos];
      sent.tgt[q2] = emit[second_pos];
      sent.gold.add(first_pos, q1, true);
      sent.gold.add(second_pos, q2, true);
      handled[p] = handled[mate] = true;
    }
    corpus.sentences.push_back(std::move(sent));
  }
  return corpus;
}

void write_corpus(const ToyCorpus& corpus, const std::string& dir, const std::string& prefix) {
  std::vector<std::vector<std::string>> src_lines, tgt_lines;
  std::vector<Alignment> gold;
  for (const auto& s : corpus.sentences) {
    src_lines.push_back(corpus.src_vocab.decode(s.src));
    tgt_lines.push_back(corpus.tgt_vocab.decode(s.tgt));
    gold.push_back(s.gold);
  }
  write_token_lines(dir + "/" + prefix + ".src.txt", src_lines);
  write_token_lines(dir + "/" + prefix + ".tgt.txt", tgt_lines);
  write_pharaoh(dir + "/" + prefix + ".align", gold);
}

double teacher_forced_accuracy(const Model& m, std::span<const SentencePair> sentences) {
  long long hits = 0, total = 0;
  for (const auto& s : sentences) {
    std::vector<int> tgt_in;
    tgt_in.push_back(m.config.bos_id);
    tgt_in.insert(tgt_in.end(), s.tgt.begin(), s.tgt.end());
    std::vector<int> targets = s.tgt;
    targets.push_back(m.config.eos_id);
    ForwardCache cache = forward_teacher_forced(m, s.src, tgt_in);
    int correct = 0;
    softmax_xent_loss(cache.logits, targets, nullptr, &correct);
    hits += correct;
    total += static_cast<long long>(targets.size());
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

ModelTrainResult train_toy_model(const ToyCorpus& corpus, std::span<const SentencePair> heldout,
                                 const ModelTrainConfig& cfg) {
  if (corpus.sentences.empty()) throw Error::data("cannot train on an empty corpus");
  ModelConfig mc;
  mc.d = cfg.d;
  mc.n_heads = cfg.n_heads;
  mc.n_layers = cfg.n_layers;
  mc.d_ff = cfg.d_ff;
  mc.src_vocab = corpus.src_vocab.size();
  mc.tgt_vocab = corpus.tgt_vocab.size();
  mc.bos_id = corpus.bos_id;
  mc.eos_id = corpus.eos_id;
  mc.seed = cfg.seed;

  ModelTrainResult result;
  result.model = init_model(mc);
  Model grads = zero_like(result.model);

  std::vector<Tensor*> params;
  std::vector<const Tensor*> grad_ptrs;
  AdamState adam;
  if (cfg.optimizer == "adam") {
    for_each_tensor(result.model,
                    [&params](const std::string&, Tensor& t) { params.push_back(&t); });
    for_each_tensor(static_cast<const Model&>(grads),
                    [&grad_ptrs](const std::string&, const Tensor& t) { grad_ptrs.push_back(&t); });
    adam_init(adam, params);
  } else if (cfg.optimizer != "sgd") {
    throw Error::config("unknown optimizer: " + cfg.optimizer);
  }

  Rng rng(cfg.seed ^ 0x5eed5eedull);
  std::vector<size_t> order(corpus.sentences.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (size_t i : order) {
      const SentencePair& s = corpus.sentences[i];
      std::vector<int> tgt_in;
      tgt_in.push_back(mc.bos_id);
      tgt_in.insert(tgt_in.end(), s.tgt.begin(), s.tgt.end());
      std::vector<int> targets = s.tgt;
      targets.push_back(mc.eos_id);

      ForwardCache cache = forward_teacher_forced(result.model, s.src, tgt_in);
      Tensor dlogits;
      const double loss = softmax_xent_loss(cache.logits, targets, &dlogits, nullptr);
      if (!std::isfinite(loss))
        throw Error::state("training diverged: loss is not finite at epoch " +
                           std::to_string(epoch));
      epoch_loss += loss;

      for_each_tensor(grads, [](const std::string&, Tensor& t) { t.fill(0.0); });
      backward_teacher_forced(result.model, cache, dlogits, grads);
      if (cfg.optimizer == "adam")
        adam_step(params, grad_ptrs, adam, cfg.lr, 0.9, 0.98, 1e-9);
      else
        sgd_update(result.model, grads, cfg.lr, cfg.clip);
      ++result.steps;
    }
    result.final_loss = epoch_loss / corpus.sentences.size();
  }
  if (!heldout.empty()) result.heldout_accuracy = teacher_forced_accuracy(result.model, heldout);
  return result;
}

}  // namespace alnbeam
