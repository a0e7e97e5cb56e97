#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "avs2s/tensor.hpp"

namespace avs2s {

enum class Lang { Src, Tgt };
const char* lang_token(Lang lang);        // "src" / "tgt"
Lang lang_from_token(const std::string&);

// Language-tagged discrete unit sequence with per-unit frame durations
// (25 fps; one unit spans durations[i] frames).
struct UnitSequence {
  Lang lang = Lang::Src;
  std::vector<int> units;
  std::vector<int> durations;

  int total_frames() const;
  void validate(int vocab_size) const;
};

struct PairConfig {
  int vocab_size = 40;  // per language; >= 8, even
  // Probability that a unit's duration is re-drawn uniformly instead of
  // taking the unit's characteristic value. Keeps the marginal uniform on
  // [1,4] while leaving durations mostly unit-predictable, as in speech.
  double duration_noise = 0.25;
  static constexpr int kBands = 16;
  static constexpr int kFps = 25;
};

// Two toy languages related by a unit permutation. Viseme rows are shared
// across the pair (viseme_tgt[perm[u]] == viseme_src[u]), so lip appearance
// is preserved under translation while acoustics change; that identity is
// what makes cross-language lip-sync well defined here.
struct LanguagePair {
  int vocab_size = 0;
  std::vector<int> perm;      // source unit -> target unit
  std::vector<int> inv_perm;  // target unit -> source unit
  std::vector<int> base_duration;            // per source unit, in [1,4], quartered
  double duration_noise = 0.25;
  std::vector<double> duration_scale;        // per source unit, in [0.6, 1.6]
  Tensor viseme_src, viseme_tgt;             // U x 16, unit-norm rows
  Tensor acoustic_src, acoustic_tgt;         // U x 16, L1-normalized rows
  std::vector<double> band_freqs;            // 16 strictly increasing Hz values
  std::vector<std::vector<int>> synonym_classes;  // partition of target vocab
  std::vector<int> synonym_class_of;         // target unit -> class index
  uint64_t pair_seed = 0;

  const Tensor& viseme(Lang l) const { return l == Lang::Src ? viseme_src : viseme_tgt; }
  const Tensor& acoustic(Lang l) const { return l == Lang::Src ? acoustic_src : acoustic_tgt; }
};

LanguagePair build_language_pair(const PairConfig& config, uint64_t seed);

// Parallel sample: source, canonical target (unit-wise translation of the
// source), and exactly three rule-based paraphrases of the target.
struct Sample {
  std::string id;
  uint64_t sample_seed = 0;
  UnitSequence source;
  UnitSequence target;
  std::array<UnitSequence, 3> paraphrases;
};

struct Corpus {
  std::vector<Sample> samples;
};

Sample generate_sample(const LanguagePair& pair, std::string id, uint64_t seed);
std::array<UnitSequence, 3> generate_paraphrases(const UnitSequence& canonical,
                                                 const LanguagePair& pair, uint64_t seed);

// Viseme rows hard-expanded by duration, smoothed with a centered width-3
// moving average, plus Gaussian noise keyed by seed. T x 16.
Tensor render_lip_track(const UnitSequence& seq, const LanguagePair& pair, uint64_t seed,
                        double noise_sigma = 0.05);

// Noise seed convention used for a sample's lip tracks throughout the repo.
uint64_t lip_track_seed(const Sample& sample, Lang lang);

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);
void save_language_pair(const LanguagePair& pair, const std::filesystem::path& path);
LanguagePair load_language_pair(const std::filesystem::path& path);

}  // namespace avs2s
