#include "avs2s/translator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "avs2s/rng.hpp"

namespace avs2s {

namespace {

constexpr int kMaxPos = 512;

// Fixed sinusoidal position table, shared process-wide.
const Tensor& position_table() {
  static const Tensor table = [] {
    Tensor t({kMaxPos, Seq2SeqModel::kWidth});
    for (int pos = 0; pos < kMaxPos; ++pos) {
      for (int i = 0; i < Seq2SeqModel::kWidth / 2; ++i) {
        const double rate = std::pow(10000.0, -2.0 * i / Seq2SeqModel::kWidth);
        t.at(pos, 2 * i) = std::sin(pos * rate);
        t.at(pos, 2 * i + 1) = std::cos(pos * rate);
      }
    }
    return t;
  }();
  return table;
}

Tensor positions_for(int64_t len) {
  if (len > kMaxPos) throw std::invalid_argument("sequence exceeds position table");
  Tensor out({len, Seq2SeqModel::kWidth});
  std::copy_n(position_table().data(), len * Seq2SeqModel::kWidth, out.data());
  return out;
}

Tensor causal_mask(int64_t len) {
  Tensor m({len, len});
  for (int64_t r = 0; r < len; ++r) {
    for (int64_t c = r + 1; c < len; ++c) m.at(r, c) = -1e30;
  }
  return m;
}

struct LayerRef {
  const ad::ParamBinder& binder;
  std::string prefix;
  ad::Var operator[](const std::string& name) const { return binder[prefix + name]; }
};

// Multi-head attention block: queries from `x`, keys/values from `kv`.
ad::Var attention(ad::Tape& tape, const LayerRef& p, ad::Var x, ad::Var kv,
                  const Tensor* mask) {
  constexpr int H = Seq2SeqModel::kHeads;
  constexpr int Dh = Seq2SeqModel::kHeadDim;
  ad::Var q = tape.add_row(tape.matmul(x, p["wq"]), p["bq"]);
  ad::Var k = tape.add_row(tape.matmul(kv, p["wk"]), p["bk"]);
  ad::Var v = tape.add_row(tape.matmul(kv, p["wv"]), p["bv"]);
  ad::Var heads = nullptr;
  for (int h = 0; h < H; ++h) {
    ad::Var qh = tape.slice_cols(q, h * Dh, (h + 1) * Dh);
    ad::Var kh = tape.slice_cols(k, h * Dh, (h + 1) * Dh);
    ad::Var vh = tape.slice_cols(v, h * Dh, (h + 1) * Dh);
    ad::Var scores = tape.affine(tape.matmul(qh, kh, false, true), 1.0 / std::sqrt(Dh), 0.0);
    ad::Var attn = tape.row_softmax(scores, mask);
    ad::Var ctx = tape.matmul(attn, vh);
    heads = heads ? tape.concat_cols(heads, ctx) : ctx;
  }
  return tape.add_row(tape.matmul(heads, p["wo"]), p["bo"]);
}

ad::Var feed_forward(ad::Tape& tape, const LayerRef& p, ad::Var x) {
  ad::Var h = tape.relu(tape.add_row(tape.matmul(x, p["ff.w1"]), p["ff.b1"]));
  return tape.add_row(tape.matmul(h, p["ff.w2"]), p["ff.b2"]);
}

ad::Var encoder_stack(ad::Tape& tape, const ad::ParamBinder& binder,
                      const std::vector<int>& tokens) {
  ad::Var x = tape.add_const(tape.gather_rows(binder["emb"], tokens),
                             positions_for(static_cast<int64_t>(tokens.size())));
  for (int l = 0; l < Seq2SeqModel::kLayers; ++l) {
    const std::string base = "enc" + std::to_string(l) + ".";
    LayerRef attn_p{binder, base + "attn."};
    LayerRef ff_p{binder, base};
    ad::Var normed = tape.layer_norm(x, binder[base + "ln1.g"], binder[base + "ln1.b"]);
    x = tape.add(x, attention(tape, attn_p, normed, normed, nullptr));
    ad::Var normed2 = tape.layer_norm(x, binder[base + "ln2.g"], binder[base + "ln2.b"]);
    x = tape.add(x, feed_forward(tape, ff_p, normed2));
  }
  return x;
}

ad::Var decoder_logits(ad::Tape& tape, const ad::ParamBinder& binder, ad::Var enc_out,
                       const std::vector<int>& dec_tokens) {
  const int64_t len = static_cast<int64_t>(dec_tokens.size());
  const Tensor mask = causal_mask(len);
  ad::Var x = tape.add_const(tape.gather_rows(binder["emb"], dec_tokens), positions_for(len));
  for (int l = 0; l < Seq2SeqModel::kLayers; ++l) {
    const std::string base = "dec" + std::to_string(l) + ".";
    LayerRef self_p{binder, base + "self."};
    LayerRef cross_p{binder, base + "cross."};
    LayerRef ff_p{binder, base};
    ad::Var n1 = tape.layer_norm(x, binder[base + "ln1.g"], binder[base + "ln1.b"]);
    x = tape.add(x, attention(tape, self_p, n1, n1, &mask));
    ad::Var n2 = tape.layer_norm(x, binder[base + "ln2.g"], binder[base + "ln2.b"]);
    x = tape.add(x, attention(tape, cross_p, n2, enc_out, nullptr));
    ad::Var n3 = tape.layer_norm(x, binder[base + "ln3.g"], binder[base + "ln3.b"]);
    x = tape.add(x, feed_forward(tape, ff_p, n3));
  }
  return tape.add_row(tape.matmul(x, binder["out.w"]), binder["out.b"]);
}

std::vector<int> encoder_tokens(const Seq2SeqModel& model, const UnitSequence& src) {
  std::vector<int> tokens;
  tokens.reserve(src.units.size() + 1);
  tokens.push_back(model.lang_id(src.lang));
  for (int u : src.units) tokens.push_back(model.unit_token(src.lang, u));
  return tokens;
}

// Per-sample teacher-forced loss node.
ad::Var sample_loss(ad::Tape& tape, const Seq2SeqModel& model, const ad::ParamBinder& binder,
                    const UnitSequence& src, const UnitSequence& tgt) {
  ad::Var enc = encoder_stack(tape, binder, encoder_tokens(model, src));
  // position i consumes token i and predicts token i+1; the language token
  // primes the decoder and the final position predicts EOS
  std::vector<int> dec_in = {model.lang_id(tgt.lang)};
  std::vector<int> dec_targets;
  for (int u : tgt.units) {
    dec_in.push_back(model.unit_token(tgt.lang, u));
    dec_targets.push_back(model.unit_token(tgt.lang, u));
  }
  dec_targets.push_back(model.eos_id());
  ad::Var logits = decoder_logits(tape, binder, enc, dec_in);
  return tape.cross_entropy(logits, std::move(dec_targets));
}

void layer_norm_layout(std::vector<std::pair<std::string, std::vector<int64_t>>>& layout,
                       const std::string& name) {
  layout.emplace_back(name + ".g", std::vector<int64_t>{Seq2SeqModel::kWidth});
  layout.emplace_back(name + ".b", std::vector<int64_t>{Seq2SeqModel::kWidth});
}

void attention_layout(std::vector<std::pair<std::string, std::vector<int64_t>>>& layout,
                      const std::string& prefix) {
  constexpr int64_t W = Seq2SeqModel::kWidth;
  for (const char* n : {"wq", "wk", "wv", "wo"}) {
    layout.emplace_back(prefix + n, std::vector<int64_t>{W, W});
  }
  for (const char* n : {"bq", "bk", "bv", "bo"}) {
    layout.emplace_back(prefix + n, std::vector<int64_t>{W});
  }
}

void ff_layout(std::vector<std::pair<std::string, std::vector<int64_t>>>& layout,
               const std::string& base) {
  constexpr int64_t W = Seq2SeqModel::kWidth;
  constexpr int64_t F = Seq2SeqModel::kFf;
  layout.emplace_back(base + "ff.w1", std::vector<int64_t>{W, F});
  layout.emplace_back(base + "ff.b1", std::vector<int64_t>{F});
  layout.emplace_back(base + "ff.w2", std::vector<int64_t>{F, W});
  layout.emplace_back(base + "ff.b2", std::vector<int64_t>{W});
}

}  // namespace

Seq2SeqModel make_translator(int unit_vocab, uint64_t seed) {
  Seq2SeqModel model;
  model.unit_vocab = unit_vocab;
  constexpr int64_t W = Seq2SeqModel::kWidth;

  std::vector<std::pair<std::string, std::vector<int64_t>>> layout;
  layout.emplace_back("emb", std::vector<int64_t>{model.vocab(), W});
  for (int l = 0; l < Seq2SeqModel::kLayers; ++l) {
    const std::string base = "enc" + std::to_string(l) + ".";
    layer_norm_layout(layout, base + "ln1");
    attention_layout(layout, base + "attn.");
    layer_norm_layout(layout, base + "ln2");
    ff_layout(layout, base);
  }
  for (int l = 0; l < Seq2SeqModel::kLayers; ++l) {
    const std::string base = "dec" + std::to_string(l) + ".";
    layer_norm_layout(layout, base + "ln1");
    attention_layout(layout, base + "self.");
    layer_norm_layout(layout, base + "ln2");
    attention_layout(layout, base + "cross.");
    layer_norm_layout(layout, base + "ln3");
    ff_layout(layout, base);
  }
  layout.emplace_back("out.w", std::vector<int64_t>{W, model.vocab()});
  layout.emplace_back("out.b", std::vector<int64_t>{model.vocab()});

  model.params = init_parameters(layout, seed);
  // Layer norms start as identity transforms.
  for (auto& [name, t] : model.params.entries()) {
    if (name.ends_with("ln1.g") || name.ends_with("ln2.g") || name.ends_with("ln3.g")) t.fill(1.0);
    if (name.ends_with("ln1.b") || name.ends_with("ln2.b") || name.ends_with("ln3.b")) t.fill(0.0);
  }
  return model;
}

TranslatorTrainResult train_translator(const Corpus& corpus, const LanguagePair& pair,
                                       const TranslatorTrainConfig& config, uint64_t seed) {
  if (corpus.samples.empty()) throw std::invalid_argument("train_translator: empty corpus");

  TranslatorTrainResult result;
  result.model = make_translator(pair.vocab_size, derive_seed(seed, "translator/init"));
  AdamWConfig opt_cfg;
  opt_cfg.lr = config.lr;
  OptimizerState opt = make_optimizer_state(result.model.params, opt_cfg);

  RngStream rng(seed, "translator/train");
  std::vector<size_t> order(corpus.samples.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // trigger shuffle on first use

  for (int step = 0; step < config.steps; ++step) {
    ParameterSet grads = result.model.params.zeros_like();
    double batch_loss = 0.0;
    for (int b = 0; b < config.batch; ++b) {
      if (cursor >= order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const Sample& s = corpus.samples[order[cursor++]];
      ad::Tape tape;
      ad::ParamBinder binder(tape, result.model.params);
      ad::Var loss = sample_loss(tape, result.model, binder, s.source, s.target);
      tape.backward(loss);
      binder.accumulate_grads(grads, 1.0 / config.batch);
      batch_loss += loss->value[0] / config.batch;
    }
    optimizer_step(result.model.params, grads, opt);
    result.loss_curve.push_back(batch_loss);
  }
  return result;
}

TranslationResult translate(const Seq2SeqModel& model, const UnitSequence& src, Lang tgt_lang) {
  const int max_len = 2 * static_cast<int>(src.units.size()) + 5;
  const int unit_base = tgt_lang == Lang::Src ? 0 : model.unit_vocab;

  ad::Tape tape;
  ad::ParamBinder binder(tape, model.params);
  ad::Var enc = encoder_stack(tape, binder, encoder_tokens(model, src));

  TranslationResult result;
  std::vector<int> dec_tokens = {model.lang_id(tgt_lang)};
  for (int stepn = 0; stepn < max_len; ++stepn) {
    ad::Var logits = decoder_logits(tape, binder, enc, dec_tokens);
    const double* row = logits->value.row_ptr(logits->value.rows() - 1);
    // Constrained greedy pick: requested language's units or EOS.
    int best = model.eos_id();
    double best_score = row[model.eos_id()];
    for (int u = 0; u < model.unit_vocab; ++u) {
      const int tok = unit_base + u;
      if (row[tok] > best_score) {
        best_score = row[tok];
        best = tok;
      }
    }
    if (best == model.eos_id()) return result;
    result.units.push_back(best - unit_base);
    dec_tokens.push_back(best);
  }
  result.truncated = true;
  return result;
}

TranslatorTrainResult finetune_paraphrase(const Seq2SeqModel& init, const Corpus& corpus,
                                          const ParaphraseFinetuneConfig& config, uint64_t seed) {
  if (corpus.samples.empty()) throw std::invalid_argument("finetune_paraphrase: empty corpus");
  for (const auto& s : corpus.samples) {
    for (const auto& p : s.paraphrases) {
      if (p.units.empty()) throw std::invalid_argument("finetune_paraphrase: missing paraphrases");
    }
  }

  TranslatorTrainResult result;
  result.model = init;
  AdamWConfig opt_cfg;
  opt_cfg.lr = config.lr;
  OptimizerState opt = make_optimizer_state(result.model.params, opt_cfg);

  RngStream rng(seed, "translator/paraphrase");
  std::vector<size_t> order(corpus.samples.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();

  for (int step = 0; step < config.steps; ++step) {
    ParameterSet grads = result.model.params.zeros_like();
    double step_loss = 0.0;
    const int groups = std::max(1, config.groups_per_batch);
    for (int g = 0; g < groups; ++g) {
      if (cursor >= order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const Sample& s = corpus.samples[order[cursor++]];
      // One graph per group: the source is encoded once, all four targets
      // (canonical + 3 paraphrases) share it within the batch.
      ad::Tape tape;
      ad::ParamBinder binder(tape, result.model.params);
      ad::Var enc = encoder_stack(tape, binder, encoder_tokens(result.model, s.source));
      const UnitSequence* targets[4] = {&s.target, &s.paraphrases[0], &s.paraphrases[1],
                                        &s.paraphrases[2]};
      ad::Var loss = nullptr;
      for (const UnitSequence* tgt : targets) {
        std::vector<int> dec_in = {result.model.lang_id(tgt->lang)};
        std::vector<int> dec_targets;
        for (int u : tgt->units) {
          dec_in.push_back(result.model.unit_token(tgt->lang, u));
          dec_targets.push_back(result.model.unit_token(tgt->lang, u));
        }
        dec_targets.push_back(result.model.eos_id());
        ad::Var l = tape.cross_entropy(decoder_logits(tape, binder, enc, dec_in),
                                       std::move(dec_targets));
        loss = loss ? tape.add(loss, l) : l;
      }
      loss = tape.affine(loss, 0.25, 0.0);  // uniform weight over the 4 targets
      tape.backward(loss);
      binder.accumulate_grads(grads, 1.0 / groups);
      step_loss += loss->value[0] / groups;
    }
    optimizer_step(result.model.params, grads, opt);
    result.loss_curve.push_back(step_loss);
  }
  return result;
}

size_t select_length_match(const std::vector<const UnitSequence*>& candidates,
                           const UnitSequence& src) {
  if (candidates.empty()) throw std::invalid_argument("select_length_match: no candidates");
  const auto src_len = static_cast<long>(src.units.size());
  size_t best = 0;
  long best_diff = std::abs(static_cast<long>(candidates[0]->units.size()) - src_len);
  for (size_t i = 1; i < candidates.size(); ++i) {
    const long diff = std::abs(static_cast<long>(candidates[i]->units.size()) - src_len);
    if (diff < best_diff) {
      best_diff = diff;
      best = i;
    }
  }
  return best;
}

TranslatorTrainResult finetune_length_match(const Seq2SeqModel& init, const Corpus& corpus,
                                            const TranslatorTrainConfig& config, uint64_t seed) {
  if (corpus.samples.empty()) throw std::invalid_argument("finetune_length_match: empty corpus");

  TranslatorTrainResult result;
  result.model = init;
  AdamWConfig opt_cfg;
  opt_cfg.lr = config.lr;
  OptimizerState opt = make_optimizer_state(result.model.params, opt_cfg);

  RngStream rng(seed, "translator/length_match");
  std::vector<size_t> order(corpus.samples.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();

  for (int step = 0; step < config.steps; ++step) {
    ParameterSet grads = result.model.params.zeros_like();
    double batch_loss = 0.0;
    for (int b = 0; b < config.batch; ++b) {
      if (cursor >= order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const Sample& s = corpus.samples[order[cursor++]];
      const std::vector<const UnitSequence*> candidates = {&s.target, &s.paraphrases[0],
                                                           &s.paraphrases[1], &s.paraphrases[2]};
      const UnitSequence& tgt = *candidates[select_length_match(candidates, s.source)];
      ad::Tape tape;
      ad::ParamBinder binder(tape, result.model.params);
      ad::Var loss = sample_loss(tape, result.model, binder, s.source, tgt);
      tape.backward(loss);
      binder.accumulate_grads(grads, 1.0 / config.batch);
      batch_loss += loss->value[0] / config.batch;
    }
    optimizer_step(result.model.params, grads, opt);
    result.loss_curve.push_back(batch_loss);
  }
  return result;
}

double translation_unit_accuracy(const Seq2SeqModel& model, const Corpus& corpus,
                                 int max_samples) {
  const int n = std::min<int>(max_samples, static_cast<int>(corpus.samples.size()));
  if (n == 0) return 0.0;
  int64_t correct = 0, total = 0;
  for (int i = 0; i < n; ++i) {
    const Sample& s = corpus.samples[static_cast<size_t>(i)];
    const TranslationResult hyp = translate(model, s.source, Lang::Tgt);
    const auto& ref = s.target.units;
    const size_t overlap = std::min(hyp.units.size(), ref.size());
    for (size_t j = 0; j < overlap; ++j) {
      if (hyp.units[j] == ref[j]) ++correct;
    }
    total += static_cast<int64_t>(std::max(hyp.units.size(), ref.size()));
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace avs2s
