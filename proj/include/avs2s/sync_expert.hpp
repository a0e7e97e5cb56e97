#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "avs2s/corpus.hpp"
#include "avs2s/graph.hpp"
#include "avs2s/nn.hpp"
#include "avs2s/vocoder.hpp"

namespace avs2s {

// Memoized rendering of corpus samples: lip tracks, extracted audio feature
// tracks, synthesized waveforms, and the per-unit feature signatures. Audio
// assembly reuses per-(lang, unit, duration) segments, which is exact because
// synthesis and feature frames never cross unit boundaries.
class TrackCache {
 public:
  explicit TrackCache(const LanguagePair& pair) : pair_(&pair) {}

  const LanguagePair& pair() const { return *pair_; }
  const Tensor& lip(const Sample& sample, Lang lang);
  const Tensor& audio_features(const Sample& sample, Lang lang);
  Tensor features_for_sequence(const UnitSequence& seq);
  Waveform waveform_for_sequence(const UnitSequence& seq);
  const Tensor& feature_signatures(Lang lang);

 private:
  const Tensor& segment_features(Lang lang, int unit, int frames);
  const std::vector<double>& segment_samples(Lang lang, int unit, int frames);

  const LanguagePair* pair_;
  std::unordered_map<std::string, Tensor> lips_, feats_;
  std::map<std::tuple<int, int, int>, Tensor> seg_feats_;
  std::map<std::tuple<int, int, int>, std::vector<double>> seg_wavs_;
  Tensor sig_src_, sig_tgt_;
};

enum class Modality { Video, Audio };

// Paired window encoders over 5-frame lip / audio-feature windows, trained
// contrastively. Embeddings are unit-norm 32-d vectors.
struct SyncExpert {
  static constexpr int kWindow = 5;
  static constexpr int kInput = kWindow * PairConfig::kBands;  // 80
  static constexpr int kHidden = 64;
  static constexpr int kEmbed = 32;

  ParameterSet params;
};

SyncExpert make_sync_expert(uint64_t seed);

// [N, 80] windows -> [N, 32] unit-norm embeddings.
Tensor embed_windows(const SyncExpert& expert, Modality modality, const Tensor& windows);
// Single 5x16 window -> [32]; throws on wrong shape.
Tensor embed_window(const SyncExpert& expert, Modality modality, const Tensor& window);

// P = (1 + v.a) / 2, clamped to [1e-6, 1 - 1e-6].
double sync_probability(const double* v, const double* a, int dim = SyncExpert::kEmbed);

// Evenly spaced window starts covering [0, T - window], at most num_windows.
std::vector<int> sync_window_starts(int total_frames, int num_windows,
                                    int window = SyncExpert::kWindow);

// Flattened 5-frame windows of a track at the given starts: [N, 80].
Tensor stack_track_windows(const Tensor& track, const std::vector<int>& starts,
                           int window = SyncExpert::kWindow);

// Negative mean log sync probability over num_windows windows. Differentiable
// in the audio track (expert weights enter as constants).
ad::Var sync_loss_graph(ad::Tape& tape, const SyncExpert& expert, ad::Var audio_track,
                        const Tensor& lip_track, int num_windows);
double sync_loss(const SyncExpert& expert, const Tensor& lip_track, const Tensor& audio_track,
                 int num_windows);

struct SyncTrainConfig {
  int steps = 3000;
  int batch = 32;
  double lr = 1e-3;
  int offset_min = 5;   // negative-pair temporal offset range (frames)
  int offset_max = 15;
};

struct SyncTrainResult {
  SyncExpert expert;
  std::vector<double> loss_curve;  // one entry per step
};

SyncTrainResult train_sync_expert(const Corpus& corpus, const LanguagePair& pair,
                                  const SyncTrainConfig& config, uint64_t seed,
                                  TrackCache* cache = nullptr);

// mean P(aligned) - mean P(offset by +/-probe_offset) over held-out samples.
struct SyncSeparation {
  double mean_aligned = 0.0;
  double mean_offset = 0.0;
  double gap() const { return mean_aligned - mean_offset; }
};
SyncSeparation sync_separation(const SyncExpert& expert, const Corpus& corpus,
                               TrackCache& cache, int probe_offset = 8,
                               int max_samples = 100);

}  // namespace avs2s
