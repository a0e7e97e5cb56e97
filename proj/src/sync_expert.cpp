#include "avs2s/sync_expert.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "avs2s/rng.hpp"

namespace avs2s {

const Tensor& TrackCache::lip(const Sample& sample, Lang lang) {
  const std::string key = sample.id + "/" + lang_token(lang);
  auto it = lips_.find(key);
  if (it != lips_.end()) return it->second;
  const UnitSequence& seq = lang == Lang::Src ? sample.source : sample.target;
  Tensor track = render_lip_track(seq, *pair_, lip_track_seed(sample, lang));
  return lips_.emplace(key, std::move(track)).first->second;
}

const Tensor& TrackCache::segment_features(Lang lang, int unit, int frames) {
  const auto key = std::make_tuple(static_cast<int>(lang), unit, frames);
  auto it = seg_feats_.find(key);
  if (it != seg_feats_.end()) return it->second;
  UnitSequence seq;
  seq.lang = lang;
  seq.units = {unit};
  seq.durations = {frames};
  Tensor feats = extract_audio_features(synthesize_waveform(seq, *pair_), *pair_);
  return seg_feats_.emplace(key, std::move(feats)).first->second;
}

const std::vector<double>& TrackCache::segment_samples(Lang lang, int unit, int frames) {
  const auto key = std::make_tuple(static_cast<int>(lang), unit, frames);
  auto it = seg_wavs_.find(key);
  if (it != seg_wavs_.end()) return it->second;
  UnitSequence seq;
  seq.lang = lang;
  seq.units = {unit};
  seq.durations = {frames};
  return seg_wavs_.emplace(key, synthesize_waveform(seq, *pair_).samples).first->second;
}

Tensor TrackCache::features_for_sequence(const UnitSequence& seq) {
  constexpr int B = PairConfig::kBands;
  Tensor out({seq.total_frames(), B});
  int t = 0;
  for (size_t i = 0; i < seq.units.size(); ++i) {
    const Tensor& seg = segment_features(seq.lang, seq.units[i], seq.durations[i]);
    std::copy_n(seg.data(), seg.numel(), out.row_ptr(t));
    t += seq.durations[i];
  }
  return out;
}

Waveform TrackCache::waveform_for_sequence(const UnitSequence& seq) {
  Waveform wav;
  wav.samples.reserve(static_cast<size_t>(seq.total_frames()) * Waveform::kSamplesPerFrame);
  for (size_t i = 0; i < seq.units.size(); ++i) {
    const auto& seg = segment_samples(seq.lang, seq.units[i], seq.durations[i]);
    wav.samples.insert(wav.samples.end(), seg.begin(), seg.end());
  }
  return wav;
}

const Tensor& TrackCache::audio_features(const Sample& sample, Lang lang) {
  const std::string key = sample.id + "/" + lang_token(lang);
  auto it = feats_.find(key);
  if (it != feats_.end()) return it->second;
  const UnitSequence& seq = lang == Lang::Src ? sample.source : sample.target;
  return feats_.emplace(key, features_for_sequence(seq)).first->second;
}

const Tensor& TrackCache::feature_signatures(Lang lang) {
  Tensor& slot = lang == Lang::Src ? sig_src_ : sig_tgt_;
  if (slot.empty()) slot = unit_feature_table(*pair_, lang);
  return slot;
}

namespace {

const char* prefix(Modality m) { return m == Modality::Video ? "video" : "audio"; }

ad::Var encoder_graph(ad::Tape& tape, const SyncExpert& expert, Modality modality,
                      ad::Var windows) {
  const std::string p = prefix(modality);
  auto c = [&](const std::string& name) { return tape.constant(expert.params.at(name)); };
  ad::Var h = tape.relu(tape.add_row(tape.matmul(windows, c(p + ".w1")), c(p + ".b1")));
  ad::Var e = tape.add_row(tape.matmul(h, c(p + ".w2")), c(p + ".b2"));
  return tape.l2_normalize_rows(e);
}

// Trainable variant used by train_sync_expert.
ad::Var encoder_graph_trainable(ad::Tape& tape, const ad::ParamBinder& binder, Modality modality,
                                ad::Var windows) {
  const std::string p = prefix(modality);
  ad::Var h = tape.relu(tape.add_row(tape.matmul(windows, binder[p + ".w1"]), binder[p + ".b1"]));
  ad::Var e = tape.add_row(tape.matmul(h, binder[p + ".w2"]), binder[p + ".b2"]);
  return tape.l2_normalize_rows(e);
}

}  // namespace

SyncExpert make_sync_expert(uint64_t seed) {
  SyncExpert expert;
  expert.params = init_parameters(
      {
          {"video.w1", {SyncExpert::kInput, SyncExpert::kHidden}},
          {"video.b1", {SyncExpert::kHidden}},
          {"video.w2", {SyncExpert::kHidden, SyncExpert::kEmbed}},
          {"video.b2", {SyncExpert::kEmbed}},
          {"audio.w1", {SyncExpert::kInput, SyncExpert::kHidden}},
          {"audio.b1", {SyncExpert::kHidden}},
          {"audio.w2", {SyncExpert::kHidden, SyncExpert::kEmbed}},
          {"audio.b2", {SyncExpert::kEmbed}},
      },
      seed);
  return expert;
}

Tensor embed_windows(const SyncExpert& expert, Modality modality, const Tensor& windows) {
  if (windows.cols() != SyncExpert::kInput) {
    throw std::invalid_argument("embed_windows: expected width " +
                                std::to_string(SyncExpert::kInput));
  }
  ad::Tape tape;
  return encoder_graph(tape, expert, modality, tape.constant(windows))->value;
}

Tensor embed_window(const SyncExpert& expert, Modality modality, const Tensor& window) {
  if (window.rank() != 2 || window.rows() != SyncExpert::kWindow ||
      window.cols() != PairConfig::kBands) {
    throw std::invalid_argument("embed_window: expected a 5x16 window, got " +
                                window.shape_str());
  }
  Tensor flat({1, SyncExpert::kInput});
  std::copy_n(window.data(), SyncExpert::kInput, flat.data());
  Tensor e = embed_windows(expert, modality, flat);
  Tensor out({SyncExpert::kEmbed});
  std::copy_n(e.data(), SyncExpert::kEmbed, out.data());
  return out;
}

double sync_probability(const double* v, const double* a, int dim) {
  double dot = 0.0;
  for (int i = 0; i < dim; ++i) dot += v[i] * a[i];
  return std::clamp(0.5 * (1.0 + dot), 1e-6, 1.0 - 1e-6);
}

std::vector<int> sync_window_starts(int total_frames, int num_windows, int window) {
  const int max_start = total_frames - window;
  if (max_start < 0) {
    throw std::invalid_argument("track too short for a " + std::to_string(window) +
                                "-frame window");
  }
  const int all = max_start + 1;
  std::vector<int> starts;
  if (num_windows >= all) {
    starts.resize(static_cast<size_t>(all));
    std::iota(starts.begin(), starts.end(), 0);
  } else if (num_windows == 1) {
    starts.push_back(max_start / 2);
  } else {
    starts.reserve(static_cast<size_t>(num_windows));
    for (int i = 0; i < num_windows; ++i) {
      starts.push_back(static_cast<int>(
          std::lround(static_cast<double>(i) * max_start / (num_windows - 1))));
    }
  }
  return starts;
}

Tensor stack_track_windows(const Tensor& track, const std::vector<int>& starts, int window) {
  ad::Tape tape;
  return tape.stack_windows(tape.constant(track), starts, window)->value;
}

ad::Var sync_loss_graph(ad::Tape& tape, const SyncExpert& expert, ad::Var audio_track,
                        const Tensor& lip_track, int num_windows) {
  const int T = static_cast<int>(lip_track.rows());
  if (audio_track->value.rows() != T) {
    throw std::invalid_argument("sync_loss: lip/audio frame counts differ");
  }
  if (T < SyncExpert::kWindow) {
    throw std::invalid_argument("sync_loss: need at least 5 frames");
  }
  const auto starts = sync_window_starts(T, num_windows);
  ad::Var v_win = tape.stack_windows(tape.constant(lip_track), starts, SyncExpert::kWindow);
  ad::Var a_win = tape.stack_windows(audio_track, starts, SyncExpert::kWindow);
  ad::Var ev = encoder_graph(tape, expert, Modality::Video, v_win);
  ad::Var ea = encoder_graph(tape, expert, Modality::Audio, a_win);
  ad::Var p = tape.clamp(tape.affine(tape.rowwise_dot(ev, ea), 0.5, 0.5), 1e-6, 1.0 - 1e-6);
  return tape.affine(tape.mean(tape.log(p)), -1.0, 0.0);
}

double sync_loss(const SyncExpert& expert, const Tensor& lip_track, const Tensor& audio_track,
                 int num_windows) {
  ad::Tape tape;
  return sync_loss_graph(tape, expert, tape.constant(audio_track), lip_track, num_windows)
      ->value[0];
}

SyncTrainResult train_sync_expert(const Corpus& corpus, const LanguagePair& pair,
                                  const SyncTrainConfig& config, uint64_t seed,
                                  TrackCache* cache) {
  if (corpus.samples.size() < 50) {
    throw std::invalid_argument("train_sync_expert: corpus too small (< 50 samples)");
  }
  TrackCache local(pair);
  TrackCache& tracks = cache ? *cache : local;

  SyncTrainResult result;
  result.expert = make_sync_expert(derive_seed(seed, "sync/init"));
  AdamWConfig opt_cfg;
  opt_cfg.lr = config.lr;
  OptimizerState opt = make_optimizer_state(result.expert.params, opt_cfg);

  RngStream rng(seed, "sync/train");
  const int W = SyncExpert::kWindow;
  const auto n = static_cast<int64_t>(corpus.samples.size());

  for (int step = 0; step < config.steps; ++step) {
    Tensor v_windows({config.batch, SyncExpert::kInput});
    Tensor a_windows({config.batch, SyncExpert::kInput});
    Tensor labels({config.batch});

    for (int b = 0; b < config.batch; ++b) {
      const auto& sample = corpus.samples[static_cast<size_t>(rng.uniform_int(0, n - 1))];
      const Lang lang = rng.uniform() < 0.5 ? Lang::Src : Lang::Tgt;
      const Tensor& lip = tracks.lip(sample, lang);
      const Tensor& aud = tracks.audio_features(sample, lang);
      const int T = static_cast<int>(lip.rows());

      const bool positive = b % 2 == 0;  // fixed 50/50 composition per batch
      labels[b] = positive ? 1.0 : 0.0;

      int vt, at;
      const double* a_src_row = nullptr;
      if (positive) {
        vt = static_cast<int>(rng.uniform_int(0, T - W));
        at = vt;
        a_src_row = aud.row_ptr(at);
      } else if (rng.uniform() < 0.5) {
        // Same pair, temporally offset.
        int o = static_cast<int>(rng.uniform_int(config.offset_min, config.offset_max));
        if (rng.uniform() < 0.5) o = -o;
        const int lo = std::max(0, -o);
        const int hi = T - W - std::max(0, o);
        vt = hi >= lo ? static_cast<int>(rng.uniform_int(lo, hi)) : 0;
        at = std::clamp(vt + o, 0, T - W);
        a_src_row = aud.row_ptr(at);
      } else {
        // Windows from two different samples.
        vt = static_cast<int>(rng.uniform_int(0, T - W));
        int64_t other_idx;
        do {
          other_idx = rng.uniform_int(0, n - 1);
        } while (other_idx == static_cast<int64_t>(&sample - corpus.samples.data()) && n > 1);
        const auto& other = corpus.samples[static_cast<size_t>(other_idx)];
        const Lang other_lang = rng.uniform() < 0.5 ? Lang::Src : Lang::Tgt;
        const Tensor& other_aud = tracks.audio_features(other, other_lang);
        at = static_cast<int>(rng.uniform_int(0, static_cast<int>(other_aud.rows()) - W));
        a_src_row = other_aud.row_ptr(at);
      }
      std::copy_n(lip.row_ptr(vt), SyncExpert::kInput, v_windows.row_ptr(b));
      std::copy_n(a_src_row, SyncExpert::kInput, a_windows.row_ptr(b));
    }

    // Binary cross-entropy on P over the batch.
    ad::Tape tape;
    ad::ParamBinder binder(tape, result.expert.params);
    ad::Var ev = encoder_graph_trainable(tape, binder, Modality::Video,
                                         tape.constant(std::move(v_windows)));
    ad::Var ea = encoder_graph_trainable(tape, binder, Modality::Audio,
                                         tape.constant(std::move(a_windows)));
    ad::Var p = tape.clamp(tape.affine(tape.rowwise_dot(ev, ea), 0.5, 0.5), 1e-6, 1.0 - 1e-6);
    Tensor pos_mask = labels;
    Tensor neg_mask({config.batch});
    for (int b = 0; b < config.batch; ++b) neg_mask[b] = 1.0 - labels[b];
    ad::Var ll = tape.add(tape.mul_const(tape.log(p), std::move(pos_mask)),
                          tape.mul_const(tape.log(tape.affine(p, -1.0, 1.0)), std::move(neg_mask)));
    ad::Var loss = tape.affine(tape.mean(ll), -1.0, 0.0);
    tape.backward(loss);
    result.loss_curve.push_back(loss->value[0]);

    ParameterSet grads = result.expert.params.zeros_like();
    binder.accumulate_grads(grads);
    optimizer_step(result.expert.params, grads, opt);
  }
  return result;
}

SyncSeparation sync_separation(const SyncExpert& expert, const Corpus& corpus, TrackCache& cache,
                               int probe_offset, int max_samples) {
  SyncSeparation sep;
  int64_t count_aligned = 0, count_offset = 0;
  const int W = SyncExpert::kWindow;
  const int n = std::min<int>(max_samples, static_cast<int>(corpus.samples.size()));
  for (int s = 0; s < n; ++s) {
    const auto& sample = corpus.samples[static_cast<size_t>(s)];
    for (Lang lang : {Lang::Src, Lang::Tgt}) {
      const Tensor& lip = cache.lip(sample, lang);
      const Tensor& aud = cache.audio_features(sample, lang);
      const int T = static_cast<int>(lip.rows());
      if (T < W + probe_offset) continue;
      const auto starts = sync_window_starts(T, 16);
      const Tensor ev = embed_windows(expert, Modality::Video, stack_track_windows(lip, starts));
      const Tensor ea = embed_windows(expert, Modality::Audio, stack_track_windows(aud, starts));
      for (size_t i = 0; i < starts.size(); ++i) {
        sep.mean_aligned += sync_probability(ev.row_ptr(static_cast<int64_t>(i)),
                                             ea.row_ptr(static_cast<int64_t>(i)));
        ++count_aligned;
      }
      // Offset probes in both directions where they stay in range.
      for (int dir : {+1, -1}) {
        std::vector<int> shifted;
        std::vector<int> base;
        for (int st : starts) {
          const int o = st + dir * probe_offset;
          if (o >= 0 && o <= T - W) {
            base.push_back(st);
            shifted.push_back(o);
          }
        }
        if (base.empty()) continue;
        const Tensor evb = embed_windows(expert, Modality::Video, stack_track_windows(lip, base));
        const Tensor eas =
            embed_windows(expert, Modality::Audio, stack_track_windows(aud, shifted));
        for (size_t i = 0; i < base.size(); ++i) {
          sep.mean_offset += sync_probability(evb.row_ptr(static_cast<int64_t>(i)),
                                              eas.row_ptr(static_cast<int64_t>(i)));
          ++count_offset;
        }
      }
    }
  }
  if (count_aligned > 0) sep.mean_aligned /= static_cast<double>(count_aligned);
  if (count_offset > 0) sep.mean_offset /= static_cast<double>(count_offset);
  return sep;
}

}  // namespace avs2s
