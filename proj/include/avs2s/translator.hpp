#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avs2s/corpus.hpp"
#include "avs2s/graph.hpp"
#include "avs2s/nn.hpp"

namespace avs2s {

// Unit-to-unit encoder-decoder. Token space: [0,U) source units, [U,2U)
// target units, then the two language ids, EOS and PAD. The decoder is
// primed with the target-language token and predicts units autoregressively.
struct Seq2SeqModel {
  static constexpr int kWidth = 32;
  static constexpr int kHeads = 2;
  static constexpr int kHeadDim = kWidth / kHeads;
  static constexpr int kLayers = 2;
  static constexpr int kFf = 64;

  int unit_vocab = 0;  // U per language
  ParameterSet params;

  int vocab() const { return 2 * unit_vocab + 4; }
  int lang_id(Lang l) const { return 2 * unit_vocab + (l == Lang::Src ? 0 : 1); }
  int eos_id() const { return 2 * unit_vocab + 2; }
  int pad_id() const { return 2 * unit_vocab + 3; }
  int unit_token(Lang l, int unit) const {
    return (l == Lang::Src ? 0 : unit_vocab) + unit;
  }
};

Seq2SeqModel make_translator(int unit_vocab, uint64_t seed);

struct TranslatorTrainConfig {
  int steps = 4000;
  int batch = 16;
  double lr = 1e-3;
};

struct TranslatorTrainResult {
  Seq2SeqModel model;
  std::vector<double> loss_curve;
};

// Teacher-forced cross-entropy on (source units -> canonical target units).
TranslatorTrainResult train_translator(const Corpus& corpus, const LanguagePair& pair,
                                       const TranslatorTrainConfig& config, uint64_t seed);

struct TranslationResult {
  std::vector<int> units;  // raw unit ids in the requested language's vocab
  bool truncated = false;  // hit the 2*len+5 cap before EOS
};

// Greedy decode constrained to the requested language's unit range plus EOS.
TranslationResult translate(const Seq2SeqModel& model, const UnitSequence& src, Lang tgt_lang);

struct ParaphraseFinetuneConfig {
  int steps = 1200;          // optimizer steps (one source group per step)
  int groups_per_batch = 1;  // each group is the 4 targets of one source
  double lr = 1e-3;
};

// Fine-tune with each batch holding the four targets (canonical + 3
// paraphrases) of one source, uniformly weighted.
TranslatorTrainResult finetune_paraphrase(const Seq2SeqModel& init, const Corpus& corpus,
                                          const ParaphraseFinetuneConfig& config, uint64_t seed);

// argmin over candidates of |len(candidate) - len(src)|, ties to the lowest
// index.
size_t select_length_match(const std::vector<const UnitSequence*>& candidates,
                           const UnitSequence& src);

// Fine-tune on the single best length-matched target per sample
// (candidates: canonical first, then the 3 paraphrases).
TranslatorTrainResult finetune_length_match(const Seq2SeqModel& init, const Corpus& corpus,
                                            const TranslatorTrainConfig& config, uint64_t seed);

// Fraction of held-out positions where greedy output matches the canonical
// target exactly (position-wise over the overlap, penalizing length drift).
double translation_unit_accuracy(const Seq2SeqModel& model, const Corpus& corpus,
                                 int max_samples = 100);

}  // namespace avs2s
