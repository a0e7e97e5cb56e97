#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "avs2s/corpus.hpp"
#include "avs2s/duration.hpp"
#include "avs2s/sync_expert.hpp"
#include "avs2s/translator.hpp"
#include "avs2s/vocoder.hpp"

namespace avs2s {

struct LseResult {
  double lse_d = 0.0;  // min over offsets of mean embedding distance
  double lse_c = 0.0;  // median minus min of the same curve
  int best_offset = 0;
  std::vector<double> curve;  // D(o) for o in [-max_offset, +max_offset]
};

// Offset search over unit-norm window embeddings: D(o) is the mean distance
// between lip windows at t and audio windows at t+o.
LseResult lse_metrics(const SyncExpert& expert, const Tensor& lip, const Tensor& audio,
                      int window = 5, int max_offset = 15);

// Frame 25 ms / hop 10 ms magnitude-spectrum distance in dB; the shorter
// waveform is zero-padded.
double log_spectral_distance(const Waveform& a, const Waveform& b);

struct BleuResult {
  double score = 0.0;
  bool empty_hyp = false;
};

// BLEU with add-1 smoothing on orders >= 2 and brevity penalty against the
// closest reference length.
BleuResult unit_bleu(const std::vector<int>& hyp, const std::vector<std::vector<int>>& refs,
                     int max_n = 4);

struct SampleRecord {
  std::string id;
  double lse_d = 0.0;
  double lse_c = 0.0;
  double lsd = 0.0;
  std::optional<double> unit_bleu;
  int total_frames_src = 0;
  int total_frames_gen = 0;
  std::vector<double> offset_curve;  // kept for the first few samples only
  std::vector<int> gen_units;        // in-memory only; digested for no-harm checks
  std::vector<int> gen_durations;    // in-memory only; lets callers re-synthesize
};

struct MetricReport {
  std::string system;
  uint64_t seed = 0;
  std::vector<SampleRecord> samples;
  std::vector<std::pair<std::string, std::string>> failures;  // (id, reason)

  struct Stat {
    double mean = 0.0;
    double stddev = 0.0;
  };
  Stat aggregate(const std::string& metric) const;
  // Convenience: mean |sum(durations) - T_s| / T_s over samples.
  double mean_length_drift() const;
};

struct EvalOptions {
  enum class UnitSource { Translator, GroundTruth, SourceSelf, OriginalTranslation };
  UnitSource unit_source = UnitSource::Translator;
  ExpandMode duration_mode = ExpandMode::Free;
  int window = 5;
  int max_offset = 15;
  int keep_curves = 0;  // attach D(o) curves for the first K samples
  std::string system_label = "system";
  uint64_t seed = 0;
};

// Per test sample: pick target units, predict and expand durations,
// synthesize, extract features, score LSE against the source lip track, LSD
// against the ground-truth-duration target rendering, and unit BLEU against
// the canonical target. Failures are recorded and excluded.
MetricReport evaluate_system(const Corpus& test, const LanguagePair& pair,
                             const Seq2SeqModel* translator, const DurationPredictor* duration,
                             const SyncExpert& expert, const EvalOptions& options,
                             TrackCache& cache);

nlohmann::json report_to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);
std::string report_markdown(const std::vector<MetricReport>& reports);

}  // namespace avs2s
