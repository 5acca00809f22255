#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "alnbeam/align.h"
#include "alnbeam/io.h"
#include "alnbeam/model.h"

namespace alnbeam {

// Synthetic bilingual corpus. Source sentences draw distinct words from a toy
// lexicon; a deterministic reorder rule (verb-final) makes alignments
// non-trivial. An ambiguity-rate fraction of source words is grouped into
// pairs that share a translation, and a pair's two emissions fill the pair's
// target slots in token-id order, so the identity of the emitted token --
// not the position alone -- decides which source word a slot aligns to.
struct ToySpec {
  int lexicon_size = 30;
  double ambiguity = 0.0;      // fraction of source words in ambiguous pairs
  std::string reorder = "verb-final";  // verb-final | none
  int n_sentences = 1000;
  int min_len = 3;
  int max_len = 8;
  uint64_t seed = 1;
  void validate() const;
};

struct SentencePair {
  std::vector<int> src, tgt;
  Alignment gold;
};

struct ToyCorpus {
  Vocab src_vocab, tgt_vocab;
  int bos_id = -1, eos_id = -1;
  std::vector<SentencePair> sentences;
};

ToyCorpus gen_toy_corpus(const ToySpec& spec);

void write_corpus(const ToyCorpus& corpus, const std::string& dir, const std::string& prefix);

struct ModelTrainConfig {
  int d = 32;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 64;
  int epochs = 30;
  double lr = 0.1;
  double clip = 1.0;
  std::string optimizer = "sgd";  // sgd | adam
  uint64_t seed = 1;
};

struct ModelTrainResult {
  Model model;
  double final_loss = 0.0;
  double heldout_accuracy = -1.0;  // teacher-forced argmax accuracy, EOS included
  int steps = 0;
};

// Plain per-sentence gradient descent on cross-entropy. Throws a state error
// if the loss stops being finite.
ModelTrainResult train_toy_model(const ToyCorpus& corpus, std::span<const SentencePair> heldout,
                                 const ModelTrainConfig& cfg);

double teacher_forced_accuracy(const Model& m, std::span<const SentencePair> sentences);

}  // namespace alnbeam
