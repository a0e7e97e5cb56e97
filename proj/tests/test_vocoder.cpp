#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "avs2s/corpus.hpp"
#include "avs2s/sync_expert.hpp"
#include "avs2s/vocoder.hpp"

using namespace avs2s;
namespace fs = std::filesystem;

namespace {

LanguagePair test_pair(uint64_t seed = 202) {
  PairConfig cfg;
  return build_language_pair(cfg, seed);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("synthesis emits 640 samples per frame within amplitude bounds") {
  LanguagePair pair = test_pair();
  UnitSequence seq;
  seq.lang = Lang::Src;
  seq.units = {1, 5, 9};
  seq.durations = {2, 1, 4};
  Waveform wav = synthesize_waveform(seq, pair);
  CHECK(static_cast<int>(wav.samples.size()) == seq.total_frames() * Waveform::kSamplesPerFrame);
  double peak = 0.0;
  for (double s : wav.samples) peak = std::max(peak, std::abs(s));
  CHECK(peak <= 0.3 + 1e-12);  // 0.3 * L1-normalized mixture * Hann <= 0.3
}

TEST_CASE("synthesis rejects out-of-vocab units") {
  LanguagePair pair = test_pair();
  UnitSequence seq;
  seq.lang = Lang::Src;
  seq.units = {pair.vocab_size};
  seq.durations = {1};
  CHECK_THROWS_AS(synthesize_waveform(seq, pair), std::invalid_argument);
}

TEST_CASE("a one-hot acoustic row concentrates spectrum energy in its band") {
  LanguagePair pair = test_pair();
  const int band = 5;
  for (int k = 0; k < PairConfig::kBands; ++k) pair.acoustic_src.at(0, k) = k == band ? 1.0 : 0.0;
  UnitSequence seq;
  seq.lang = Lang::Src;
  seq.units = {0};
  seq.durations = {4};
  Waveform wav = synthesize_waveform(seq, pair);

  // independent DFT projection oracle over the whole segment
  const int n = static_cast<int>(wav.samples.size());
  double total = 0.0, at_band = 0.0;
  for (int k = 0; k < PairConfig::kBands; ++k) {
    double c = 0.0, s = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = 2.0 * M_PI * pair.band_freqs[static_cast<size_t>(k)] * i / Waveform::kRate;
      c += wav.samples[static_cast<size_t>(i)] * std::cos(w);
      s += wav.samples[static_cast<size_t>(i)] * std::sin(w);
    }
    const double energy = c * c + s * s;
    total += energy;
    if (k == band) at_band = energy;
  }
  CHECK(at_band / total >= 0.9);
}

TEST_CASE("silence maps to zero features") {
  LanguagePair pair = test_pair();
  Waveform silence;
  silence.samples.assign(3 * Waveform::kSamplesPerFrame, 0.0);
  Tensor feats = extract_audio_features(silence, pair);
  REQUIRE(feats.rows() == 3);
  for (int64_t i = 0; i < feats.numel(); ++i) CHECK(feats[i] == 0.0);
}

TEST_CASE("features recover the dominant band of each unit") {
  LanguagePair pair = test_pair();
  for (int u : {0, 7, 23}) {
    UnitSequence seq;
    seq.lang = Lang::Tgt;
    seq.units = {u};
    seq.durations = {4};
    Tensor feats = extract_audio_features(synthesize_waveform(seq, pair), pair);
    REQUIRE(feats.rows() == 4);
    int want = 0;
    for (int k = 1; k < PairConfig::kBands; ++k) {
      if (pair.acoustic_tgt.at(u, k) > pair.acoustic_tgt.at(u, want)) want = k;
    }
    for (int64_t f = 1; f <= 2; ++f) {  // interior frames
      int got = 0;
      for (int k = 1; k < PairConfig::kBands; ++k) {
        if (feats.at(f, k) > feats.at(f, got)) got = k;
      }
      CHECK(got == want);
    }
  }
}

TEST_CASE("interior features track log(1 + beta * acoustic row) almost exactly") {
  LanguagePair pair = test_pair();
  double worst = 1.0;
  for (int u = 0; u < pair.vocab_size; ++u) {
    UnitSequence seq;
    seq.lang = Lang::Src;
    seq.units = {u};
    seq.durations = {4};
    Tensor feats = extract_audio_features(synthesize_waveform(seq, pair), pair);
    std::vector<double> mean_feat(PairConfig::kBands);
    for (int k = 0; k < PairConfig::kBands; ++k) {
      mean_feat[static_cast<size_t>(k)] = 0.5 * (feats.at(1, k) + feats.at(2, k));
    }
    double best = 0.0;
    for (double beta = 0.05; beta <= 1.2; beta += 0.01) {
      double dot = 0.0, aa = 0.0, bb = 0.0;
      for (int k = 0; k < PairConfig::kBands; ++k) {
        const double model = std::log1p(beta * pair.acoustic_src.at(u, k));
        dot += model * mean_feat[static_cast<size_t>(k)];
        aa += model * model;
        bb += mean_feat[static_cast<size_t>(k)] * mean_feat[static_cast<size_t>(k)];
      }
      best = std::max(best, dot / std::sqrt(aa * bb));
    }
    worst = std::min(worst, best);
  }
  CHECK(worst > 0.99);
}

TEST_CASE("hard expand repeats rows in order") {
  Tensor table({3, 2});
  for (int64_t r = 0; r < 3; ++r) {
    table.at(r, 0) = r;
    table.at(r, 1) = 10 + r;
  }
  Tensor out = hard_expand({2, 0, 1}, {1, 1, 1}, table);
  REQUIRE(out.rows() == 3);
  CHECK(out.at(0, 0) == 2);
  CHECK(out.at(1, 0) == 0);
  CHECK(out.at(2, 0) == 1);
  CHECK(hard_expand({0, 1}, {3, 4}, table).rows() == 7);
  CHECK_THROWS_AS(hard_expand({0}, {0}, table), std::invalid_argument);
}

TEST_CASE("soft expansion at small sigma matches hard expansion away from boundaries") {
  Tensor table({2, PairConfig::kBands});
  for (int k = 0; k < PairConfig::kBands; ++k) {
    table.at(0, k) = 0.1 * k;
    table.at(1, k) = 1.0 - 0.05 * k;
  }
  const std::vector<int> units = {0, 1};
  const std::vector<int> durations = {3, 3};
  Tensor hard = hard_expand(units, durations, table);
  std::vector<double> log_d = {std::log(3.0), std::log(3.0)};
  Tensor soft = soft_expand(table, log_d, 6, 0.05);
  REQUIRE(hard.same_shape(soft));
  for (int64_t t = 0; t < 6; ++t) {
    if (t == 2 || t == 3) continue;  // boundary frames
    for (int k = 0; k < PairConfig::kBands; ++k) {
      CHECK(soft.at(t, k) == doctest::Approx(hard.at(t, k)).epsilon(1e-3));
    }
  }
}

TEST_CASE("track cache assembly is bit-exact against the direct pipeline") {
  LanguagePair pair = test_pair();
  TrackCache cache(pair);
  Sample s = generate_sample(pair, "cache", 4711);
  const Tensor direct = extract_audio_features(synthesize_waveform(s.target, pair), pair);
  const Tensor assembled = cache.features_for_sequence(s.target);
  REQUIRE(direct.same_shape(assembled));
  for (int64_t i = 0; i < direct.numel(); ++i) CHECK(direct[i] == assembled[i]);

  const Waveform direct_wav = synthesize_waveform(s.source, pair);
  const Waveform assembled_wav = cache.waveform_for_sequence(s.source);
  REQUIRE(direct_wav.samples.size() == assembled_wav.samples.size());
  for (size_t i = 0; i < direct_wav.samples.size(); ++i) {
    CHECK(direct_wav.samples[i] == assembled_wav.samples[i]);
  }
}

TEST_CASE("unit feature table rows match interior frames of synthesized units") {
  LanguagePair pair = test_pair();
  Tensor sig = unit_feature_table(pair, Lang::Tgt);
  REQUIRE(sig.rows() == pair.vocab_size);
  UnitSequence seq;
  seq.lang = Lang::Tgt;
  seq.units = {11};
  seq.durations = {4};
  Tensor feats = extract_audio_features(synthesize_waveform(seq, pair), pair);
  for (int k = 0; k < PairConfig::kBands; ++k) {
    CHECK(sig.at(11, k) == doctest::Approx(0.5 * (feats.at(1, k) + feats.at(2, k))).epsilon(1e-12));
  }
}

TEST_CASE("wav files carry a correct RIFF header and deterministic payload") {
  LanguagePair pair = test_pair();
  UnitSequence seq;
  seq.lang = Lang::Src;
  seq.units = {4, 2};
  seq.durations = {1, 2};
  Waveform wav = synthesize_waveform(seq, pair);
  const auto path = fs::temp_directory_path() / "avs2s_test.wav";
  write_wav(path, wav);
  const std::string bytes = slurp(path);
  REQUIRE(bytes.size() == 44 + wav.samples.size() * 2);
  CHECK(bytes.substr(0, 4) == "RIFF");
  CHECK(bytes.substr(8, 4) == "WAVE");
  CHECK(bytes.substr(12, 4) == "fmt ");
  CHECK(static_cast<unsigned char>(bytes[22]) == 1);  // mono
  const uint32_t rate = static_cast<uint8_t>(bytes[24]) | (static_cast<uint8_t>(bytes[25]) << 8) |
                        (static_cast<uint8_t>(bytes[26]) << 16) |
                        (static_cast<uint8_t>(bytes[27]) << 24);
  CHECK(rate == 16000);
  write_wav(path, wav);
  CHECK(slurp(path) == bytes);
  fs::remove(path);
}

TEST_CASE("feature dumps carry dims then row-major doubles") {
  LanguagePair pair = test_pair();
  Waveform silence;
  silence.samples.assign(2 * Waveform::kSamplesPerFrame, 0.0);
  Tensor feats = extract_audio_features(silence, pair);
  const auto path = fs::temp_directory_path() / "avs2s_test.f64";
  write_feature_dump(path, feats);
  const std::string bytes = slurp(path);
  REQUIRE(bytes.size() == 8 + static_cast<size_t>(feats.numel()) * 8);
  CHECK(static_cast<unsigned char>(bytes[0]) == 2);   // rows LE
  CHECK(static_cast<unsigned char>(bytes[4]) == 16);  // cols LE
  fs::remove(path);
}
