#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "avs2s/corpus.hpp"
#include "avs2s/graph.hpp"
#include "avs2s/nn.hpp"
#include "avs2s/sync_expert.hpp"
#include "avs2s/translator.hpp"

namespace avs2s {

// Per-unit log-duration regressor. Position i is scored from
// [embedding(u_i); T_src/100; i/L], so predictions are conditioned on the
// source clip length the generated speech must fit.
struct DurationPredictor {
  static constexpr int kEmbed = 32;
  static constexpr int kHidden = 64;

  int vocab_size = 0;
  ParameterSet params;
};

DurationPredictor make_duration_predictor(int vocab_size, uint64_t seed);

std::vector<double> predict_log_durations(const DurationPredictor& model,
                                          const std::vector<int>& units, int source_frames);

// Graph variant; returns [L,1] log durations with gradients into the binder.
ad::Var predict_log_durations_graph(ad::Tape& tape, const ad::ParamBinder& binder,
                                    const std::vector<int>& units, int source_frames);

// Integer allocation that sums exactly to total: scale, largest-remainder
// round (ties to the lower index), then lift zeros to 1 by taking frames
// from the largest entries.
std::vector<int> allocate_integer_durations(std::span<const double> weights, int total);

// Ground-truth target durations rescaled to the source length T_s; sums to
// T_s exactly with every entry >= 1.
std::vector<int> reference_durations(const UnitSequence& target, int source_frames);

// mean_i (pred_log_d_i - log ref_d_i)^2
double duration_loss(std::span<const double> pred_log_d, std::span<const int> ref_d);

// l_sync + lambda * l_dur
double total_loss(double l_sync, double l_dur, double lambda);

enum class LossMix { SyncPlusDur, SyncOnly, DurOnly };
enum class InitMode { Pretrained, Scratch };
enum class DurationTargets { SourceScaled, TargetNatural };
// What the soft expansion places per unit: raw acoustic table rows, or the
// unit feature signatures living in the expert's input domain.
enum class ExpandEmbeddings { AcousticRows, FeatureSignatures };

const char* loss_mix_name(LossMix m);
LossMix loss_mix_from_name(const std::string& s);

struct FinetuneConfig {
  double lambda = 10.0;
  double lr = 2e-4;
  int accumulation = 32;  // samples per optimizer step
  int steps = 5000;       // optimizer steps
  InitMode init = InitMode::Pretrained;
  LossMix losses = LossMix::SyncPlusDur;
  DurationTargets dur_targets = DurationTargets::SourceScaled;
  ExpandEmbeddings expand = ExpandEmbeddings::AcousticRows;
  double sigma = 1.0;      // soft-expansion width, frames
  int sync_windows = 32;   // windows per sample in the sync loss
  bool translator_units = false;  // train on translator output instead of references
  uint64_t seed = 0;
};

struct DurationTrainResult {
  DurationPredictor model;
  std::vector<double> total_curve;
  std::vector<double> dur_curve;
  std::vector<double> sync_curve;
};

struct PretrainConfig {
  int steps = 1500;
  int accumulation = 32;
  double lr = 2e-4;
  DurationTargets dur_targets = DurationTargets::SourceScaled;
};

// Duration-loss-only training from scratch; doubles as the baseline system
// and the init for fine-tuning.
DurationTrainResult pretrain_duration(const Corpus& corpus, const LanguagePair& pair,
                                      const PretrainConfig& config, uint64_t seed);

// Eq.-style combined fine-tuning: per sample, predict log durations, take the
// duration loss against references, soft-expand unit feature signatures to
// the source frame count, score sync against the source lip track, and
// combine. Gradients accumulate over `accumulation` samples per step. The
// sync expert and translator stay frozen.
DurationTrainResult finetune_duration(const DurationPredictor& init, const SyncExpert& expert,
                                      const Seq2SeqModel* translator, const Corpus& corpus,
                                      const LanguagePair& pair, const FinetuneConfig& config,
                                      TrackCache* cache = nullptr);

enum class ExpandMode { Free, LengthLocked };

// free: round(exp(log d)) clamped >= 1; length_locked: rescale to sum to
// source_frames via allocate_integer_durations.
std::vector<int> expand_durations(const DurationPredictor& model, const std::vector<int>& units,
                                  int source_frames, ExpandMode mode);

// Held-out mean duration loss; test/diagnostic helper.
double mean_duration_loss(const DurationPredictor& model, const Corpus& corpus,
                          DurationTargets targets = DurationTargets::SourceScaled);

}  // namespace avs2s
