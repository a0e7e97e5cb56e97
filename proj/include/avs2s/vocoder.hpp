#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "avs2s/corpus.hpp"
#include "avs2s/tensor.hpp"

namespace avs2s {

// Mono 16 kHz audio; 640 samples per 25 fps frame.
struct Waveform {
  static constexpr int kRate = 16000;
  static constexpr int kSamplesPerFrame = 640;

  std::vector<double> samples;  // in [-1, 1]

  int frames() const { return static_cast<int>(samples.size()) / kSamplesPerFrame; }
};

// Deterministic sinusoidal synthesis: each unit contributes durations[i]
// frames of its band mixture under a per-segment Hann envelope.
Waveform synthesize_waveform(const UnitSequence& seq, const LanguagePair& pair);

// Per-frame log band amplitudes, log(1 + E_k), with E_k the single-bin
// Fourier amplitude estimate at band frequency k. T x 16.
Tensor extract_audio_features(const Waveform& wav, const LanguagePair& pair);

// Gaussian soft duration expansion (inference-path variant of the graph op):
// frame t blends embedding rows with softmax weights centered at the running
// duration midpoints. Differentiable counterpart lives in Tape::soft_expand.
Tensor soft_expand(const Tensor& embeddings, std::span<const double> log_durations,
                   int total_frames, double sigma = 1.0);

// Row i of `table` repeated durations[i] times.
Tensor hard_expand(const std::vector<int>& units, const std::vector<int>& durations,
                   const Tensor& table);

// Feature-domain signature per unit: the mean interior feature frame of that
// unit synthesized at duration 4. Rows live in the same space the sync
// expert's audio encoder consumes, so soft-expanded tracks match the domain
// of extracted features.
Tensor unit_feature_table(const LanguagePair& pair, Lang lang);

// RIFF/WAVE PCM16 mono 16 kHz; samples rounded to nearest.
void write_wav(const std::filesystem::path& path, const Waveform& wav);

// Raw dump: two 4-byte little-endian dims, then row-major little-endian f64.
void write_feature_dump(const std::filesystem::path& path, const Tensor& t);

}  // namespace avs2s
