#include "avs2s/duration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "avs2s/rng.hpp"

namespace avs2s {

DurationPredictor make_duration_predictor(int vocab_size, uint64_t seed) {
  DurationPredictor model;
  model.vocab_size = vocab_size;
  model.params = init_parameters(
      {
          {"emb", {vocab_size, DurationPredictor::kEmbed}},
          {"w1", {DurationPredictor::kEmbed + 2, DurationPredictor::kHidden}},
          {"b1", {DurationPredictor::kHidden}},
          {"w2", {DurationPredictor::kHidden, 1}},
          {"b2", {1}},
      },
      seed);
  return model;
}

ad::Var predict_log_durations_graph(ad::Tape& tape, const ad::ParamBinder& binder,
                                    const std::vector<int>& units, int source_frames) {
  const auto L = static_cast<int64_t>(units.size());
  if (L == 0) throw std::invalid_argument("predict_log_durations: empty unit sequence");
  Tensor cond({L, 2});
  for (int64_t i = 0; i < L; ++i) {
    cond.at(i, 0) = source_frames / 100.0;
    cond.at(i, 1) = static_cast<double>(i) / static_cast<double>(L);
  }
  ad::Var x = tape.concat_cols(tape.gather_rows(binder["emb"], units), tape.constant(cond));
  ad::Var h = tape.relu(tape.add_row(tape.matmul(x, binder["w1"]), binder["b1"]));
  return tape.add_row(tape.matmul(h, binder["w2"]), binder["b2"]);  // [L,1]
}

std::vector<double> predict_log_durations(const DurationPredictor& model,
                                          const std::vector<int>& units, int source_frames) {
  ad::Tape tape;
  ad::ParamBinder binder(tape, model.params);
  ad::Var out = predict_log_durations_graph(tape, binder, units, source_frames);
  std::vector<double> result(units.size());
  for (size_t i = 0; i < units.size(); ++i) result[i] = out->value[static_cast<int64_t>(i)];
  return result;
}

std::vector<int> allocate_integer_durations(std::span<const double> weights, int total) {
  const auto n = static_cast<int>(weights.size());
  if (n == 0) throw std::invalid_argument("allocate_integer_durations: empty weights");
  if (total < n) {
    throw std::invalid_argument("cannot fit one frame per unit: " + std::to_string(total) +
                                " frames for " + std::to_string(n) + " units");
  }
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw std::invalid_argument("allocate_integer_durations: weights must be finite and >= 0");
    }
    sum += w;
  }

  std::vector<int> out(static_cast<size_t>(n), 0);
  std::vector<double> remainder(static_cast<size_t>(n), 0.0);
  int assigned = 0;
  if (sum > 0.0) {
    for (int i = 0; i < n; ++i) {
      const double q = weights[static_cast<size_t>(i)] * total / sum;
      out[static_cast<size_t>(i)] = static_cast<int>(std::floor(q));
      remainder[static_cast<size_t>(i)] = q - std::floor(q);
      assigned += out[static_cast<size_t>(i)];
    }
  }
  // Largest remainder; ties go to the lower index.
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return remainder[static_cast<size_t>(a)] > remainder[static_cast<size_t>(b)];
  });
  for (int k = 0; assigned < total; ++k) {
    out[static_cast<size_t>(idx[static_cast<size_t>(k % n)])] += 1;
    ++assigned;
  }
  // Lift zeros to 1, taking frames from the largest entries.
  for (int i = 0; i < n; ++i) {
    if (out[static_cast<size_t>(i)] >= 1) continue;
    int donor = -1;
    for (int j = 0; j < n; ++j) {
      if (out[static_cast<size_t>(j)] > 1 && (donor < 0 || out[static_cast<size_t>(j)] > out[static_cast<size_t>(donor)])) {
        donor = j;
      }
    }
    if (donor < 0) throw std::logic_error("allocate_integer_durations: no donor frame");
    out[static_cast<size_t>(donor)] -= 1;
    out[static_cast<size_t>(i)] += 1;
  }
  return out;
}

std::vector<int> reference_durations(const UnitSequence& target, int source_frames) {
  if (source_frames < static_cast<int>(target.units.size())) {
    throw std::invalid_argument("cannot fit one frame per unit: " +
                                std::to_string(source_frames) + " frames for " +
                                std::to_string(target.units.size()) + " units");
  }
  std::vector<double> weights(target.durations.begin(), target.durations.end());
  return allocate_integer_durations(weights, source_frames);
}

double duration_loss(std::span<const double> pred_log_d, std::span<const int> ref_d) {
  if (pred_log_d.size() != ref_d.size()) {
    throw std::invalid_argument("duration_loss: length mismatch");
  }
  if (pred_log_d.empty()) throw std::invalid_argument("duration_loss: empty input");
  double acc = 0.0;
  for (size_t i = 0; i < ref_d.size(); ++i) {
    if (ref_d[i] < 1) throw std::invalid_argument("duration_loss: reference durations must be >= 1");
    const double diff = pred_log_d[i] - std::log(static_cast<double>(ref_d[i]));
    acc += diff * diff;
  }
  return acc / static_cast<double>(ref_d.size());
}

double total_loss(double l_sync, double l_dur, double lambda) {
  if (!std::isfinite(l_sync) || !std::isfinite(l_dur)) {
    throw std::invalid_argument("total_loss: non-finite inputs");
  }
  return l_sync + lambda * l_dur;
}

const char* loss_mix_name(LossMix m) {
  switch (m) {
    case LossMix::SyncPlusDur: return "sync+dur";
    case LossMix::SyncOnly: return "sync_only";
    case LossMix::DurOnly: return "dur_only";
  }
  return "?";
}

LossMix loss_mix_from_name(const std::string& s) {
  if (s == "sync+dur") return LossMix::SyncPlusDur;
  if (s == "sync_only") return LossMix::SyncOnly;
  if (s == "dur_only") return LossMix::DurOnly;
  throw std::invalid_argument("unknown loss mix: " + s);
}

namespace {

// References for a unit sequence about to be expanded to T_s frames.
// SourceScaled projects ground-truth target durations onto the source
// length; TargetNatural keeps them as-is.
std::vector<int> make_references(const Sample& sample, const std::vector<int>& units,
                                 int source_frames, DurationTargets mode) {
  const auto& gt = sample.target;
  if (units.size() == gt.units.size()) {
    if (mode == DurationTargets::TargetNatural) return gt.durations;
    return reference_durations(gt, source_frames);
  }
  // Translator output with drifting length: fall back to a uniform split of
  // the source frames (no per-unit ground truth exists for these units).
  std::vector<double> uniform(units.size(), 1.0);
  return allocate_integer_durations(uniform, source_frames);
}

struct TrainEngineConfig {
  LossMix losses = LossMix::DurOnly;
  double lambda = 10.0;
  double lr = 2e-4;
  int accumulation = 32;
  int steps = 1500;
  DurationTargets dur_targets = DurationTargets::SourceScaled;
  ExpandEmbeddings expand = ExpandEmbeddings::AcousticRows;
  double sigma = 1.0;
  int sync_windows = 32;
  bool translator_units = false;
  uint64_t seed = 0;
};

DurationTrainResult run_duration_training(DurationPredictor model, const SyncExpert* expert,
                                          const Seq2SeqModel* translator, const Corpus& corpus,
                                          const LanguagePair& pair,
                                          const TrainEngineConfig& config, TrackCache* cache) {
  if (corpus.samples.empty()) throw std::invalid_argument("duration training: empty corpus");
  const bool need_sync = config.losses != LossMix::DurOnly;
  if (need_sync && expert == nullptr) {
    throw std::invalid_argument("duration training: sync loss requires a sync expert");
  }

  TrackCache local(pair);
  TrackCache& tracks = cache ? *cache : local;

  DurationTrainResult result;
  result.model = std::move(model);
  AdamWConfig opt_cfg;
  opt_cfg.lr = config.lr;
  OptimizerState opt = make_optimizer_state(result.model.params, opt_cfg);

  RngStream rng(config.seed, "duration/train");
  std::vector<size_t> order(corpus.samples.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();

  for (int step = 0; step < config.steps; ++step) {
    ParameterSet grads = result.model.params.zeros_like();
    double acc_total = 0.0, acc_dur = 0.0, acc_sync = 0.0;
    const double inv_acc = 1.0 / config.accumulation;

    for (int a = 0; a < config.accumulation; ++a) {
      if (cursor >= order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const Sample& s = corpus.samples[order[cursor++]];
      if (s.source.lang != Lang::Src || s.target.lang != Lang::Tgt) {
        throw std::invalid_argument("duration training: sample language mismatch");
      }
      const int T_s = s.source.total_frames();

      std::vector<int> units;
      if (config.translator_units && translator) {
        units = translate(*translator, s.source, Lang::Tgt).units;
        if (units.empty() || static_cast<int>(units.size()) > T_s) continue;
      } else {
        units = s.target.units;
      }

      ad::Tape tape;
      ad::ParamBinder binder(tape, result.model.params);
      ad::Var pred = predict_log_durations_graph(tape, binder, units, T_s);

      ad::Var dur_node = nullptr;
      if (config.losses != LossMix::SyncOnly) {
        const auto refs = make_references(s, units, T_s, config.dur_targets);
        Tensor log_ref({static_cast<int64_t>(refs.size()), 1});
        for (size_t i = 0; i < refs.size(); ++i) {
          log_ref[static_cast<int64_t>(i)] = std::log(static_cast<double>(refs[i]));
        }
        ad::Var diff = tape.sub(pred, tape.constant(std::move(log_ref)));
        dur_node = tape.mean(tape.mul(diff, diff));
      }

      ad::Var sync_node = nullptr;
      if (need_sync) {
        const Tensor& table = config.expand == ExpandEmbeddings::AcousticRows
                                  ? pair.acoustic(Lang::Tgt)
                                  : tracks.feature_signatures(Lang::Tgt);
        ad::Var emb = tape.gather_rows(tape.constant(table), units);
        ad::Var expanded = tape.soft_expand(emb, pred, T_s, config.sigma);
        sync_node = sync_loss_graph(tape, *expert, expanded, tracks.lip(s, Lang::Src),
                                    config.sync_windows);
      }

      ad::Var loss;
      switch (config.losses) {
        case LossMix::DurOnly: loss = dur_node; break;
        case LossMix::SyncOnly: loss = sync_node; break;
        case LossMix::SyncPlusDur:
          loss = tape.add(sync_node, tape.affine(dur_node, config.lambda, 0.0));
          break;
      }
      tape.backward(loss);
      binder.accumulate_grads(grads, inv_acc);

      acc_total += loss->value[0] * inv_acc;
      if (dur_node) acc_dur += dur_node->value[0] * inv_acc;
      if (sync_node) acc_sync += sync_node->value[0] * inv_acc;
    }

    optimizer_step(result.model.params, grads, opt);
    result.total_curve.push_back(acc_total);
    result.dur_curve.push_back(acc_dur);
    result.sync_curve.push_back(acc_sync);
  }
  return result;
}

}  // namespace

DurationTrainResult pretrain_duration(const Corpus& corpus, const LanguagePair& pair,
                                      const PretrainConfig& config, uint64_t seed) {
  TrainEngineConfig engine;
  engine.losses = LossMix::DurOnly;
  engine.lr = config.lr;
  engine.accumulation = config.accumulation;
  engine.steps = config.steps;
  engine.dur_targets = config.dur_targets;
  engine.seed = derive_seed(seed, "duration/pretrain");
  DurationPredictor model =
      make_duration_predictor(pair.vocab_size, derive_seed(seed, "duration/init"));
  return run_duration_training(std::move(model), nullptr, nullptr, corpus, pair, engine, nullptr);
}

DurationTrainResult finetune_duration(const DurationPredictor& init, const SyncExpert& expert,
                                      const Seq2SeqModel* translator, const Corpus& corpus,
                                      const LanguagePair& pair, const FinetuneConfig& config,
                                      TrackCache* cache) {
  if (init.vocab_size != pair.vocab_size) {
    throw std::invalid_argument("finetune_duration: model/pair vocab mismatch");
  }
  TrainEngineConfig engine;
  engine.losses = config.losses;
  engine.lambda = config.lambda;
  engine.lr = config.lr;
  engine.accumulation = config.accumulation;
  engine.steps = config.steps;
  engine.dur_targets = config.dur_targets;
  engine.expand = config.expand;
  engine.sigma = config.sigma;
  engine.sync_windows = config.sync_windows;
  engine.translator_units = config.translator_units;
  engine.seed = derive_seed(config.seed, "duration/finetune");

  DurationPredictor model =
      config.init == InitMode::Pretrained
          ? init
          : make_duration_predictor(pair.vocab_size, derive_seed(config.seed, "duration/scratch"));
  return run_duration_training(std::move(model), &expert, translator, corpus, pair, engine,
                               cache);
}

std::vector<int> expand_durations(const DurationPredictor& model, const std::vector<int>& units,
                                  int source_frames, ExpandMode mode) {
  const auto log_d = predict_log_durations(model, units, source_frames);
  if (mode == ExpandMode::Free) {
    std::vector<int> out(log_d.size());
    for (size_t i = 0; i < log_d.size(); ++i) {
      out[i] = std::max(1, static_cast<int>(std::lround(std::exp(log_d[i]))));
    }
    return out;
  }
  if (source_frames < static_cast<int>(units.size())) {
    throw std::invalid_argument("cannot fit one frame per unit: " +
                                std::to_string(source_frames) + " frames for " +
                                std::to_string(units.size()) + " units");
  }
  std::vector<double> weights(log_d.size());
  for (size_t i = 0; i < log_d.size(); ++i) weights[i] = std::exp(log_d[i]);
  return allocate_integer_durations(weights, source_frames);
}

double mean_duration_loss(const DurationPredictor& model, const Corpus& corpus,
                          DurationTargets targets) {
  if (corpus.samples.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& s : corpus.samples) {
    const int T_s = s.source.total_frames();
    const auto pred = predict_log_durations(model, s.target.units, T_s);
    const auto refs = targets == DurationTargets::SourceScaled
                          ? reference_durations(s.target, T_s)
                          : s.target.durations;
    acc += duration_loss(pred, refs);
  }
  return acc / static_cast<double>(corpus.samples.size());
}

}  // namespace avs2s
