#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "avs2s/corpus.hpp"
#include "avs2s/rng.hpp"

using namespace avs2s;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

LanguagePair test_pair(uint64_t seed = 101) {
  PairConfig cfg;
  return build_language_pair(cfg, seed);
}

}  // namespace

TEST_CASE("language pair construction is deterministic") {
  const auto dir = fs::temp_directory_path();
  LanguagePair a = test_pair(7);
  LanguagePair b = test_pair(7);
  save_language_pair(a, dir / "pair_a.json");
  save_language_pair(b, dir / "pair_b.json");
  CHECK(slurp(dir / "pair_a.json") == slurp(dir / "pair_b.json"));
  fs::remove(dir / "pair_a.json");
  fs::remove(dir / "pair_b.json");
}

TEST_CASE("permutation is a bijection") {
  LanguagePair pair = test_pair();
  std::set<int> targets;
  for (int u = 0; u < pair.vocab_size; ++u) {
    targets.insert(pair.perm[static_cast<size_t>(u)]);
    CHECK(pair.inv_perm[static_cast<size_t>(pair.perm[static_cast<size_t>(u)])] == u);
  }
  CHECK(static_cast<int>(targets.size()) == pair.vocab_size);
}

TEST_CASE("acoustic rows are L1-normalized and band freqs valid") {
  LanguagePair pair = test_pair();
  for (int u = 0; u < pair.vocab_size; ++u) {
    double s_src = 0.0, s_tgt = 0.0;
    for (int k = 0; k < PairConfig::kBands; ++k) {
      CHECK(pair.acoustic_src.at(u, k) >= 0.0);
      s_src += pair.acoustic_src.at(u, k);
      s_tgt += pair.acoustic_tgt.at(u, k);
    }
    CHECK(std::abs(s_src - 1.0) < 1e-9);
    CHECK(std::abs(s_tgt - 1.0) < 1e-9);
  }
  for (size_t k = 0; k < pair.band_freqs.size(); ++k) {
    CHECK(pair.band_freqs[k] < 8000.0);
    if (k > 0) CHECK(pair.band_freqs[k] > pair.band_freqs[k - 1]);
  }
}

TEST_CASE("viseme tables are shared across the permutation") {
  LanguagePair pair = test_pair();
  for (int u = 0; u < pair.vocab_size; ++u) {
    for (int k = 0; k < PairConfig::kBands; ++k) {
      CHECK(pair.viseme_tgt.at(pair.perm[static_cast<size_t>(u)], k) == pair.viseme_src.at(u, k));
    }
  }
}

TEST_CASE("synonym classes partition the target vocab into groups sharing visemes") {
  LanguagePair pair = test_pair();
  std::set<int> seen;
  for (const auto& group : pair.synonym_classes) {
    CHECK(group.size() >= 2);
    CHECK(group.size() <= 4);
    for (int v : group) {
      CHECK(seen.insert(v).second);
      for (int k = 0; k < PairConfig::kBands; ++k) {
        CHECK(pair.viseme_tgt.at(v, k) == pair.viseme_tgt.at(group[0], k));
      }
    }
  }
  CHECK(static_cast<int>(seen.size()) == pair.vocab_size);
}

TEST_CASE("small or odd vocab sizes are rejected") {
  PairConfig cfg;
  cfg.vocab_size = 6;
  CHECK_THROWS_AS(build_language_pair(cfg, 1), std::invalid_argument);
  cfg.vocab_size = 9;
  CHECK_THROWS_AS(build_language_pair(cfg, 1), std::invalid_argument);
}

TEST_CASE("generated samples have valid durations and units") {
  LanguagePair pair = test_pair();
  for (int i = 0; i < 20; ++i) {
    Sample s = generate_sample(pair, "s" + std::to_string(i), derive_seed(55, std::to_string(i)));
    s.source.validate(pair.vocab_size);
    s.target.validate(pair.vocab_size);
    REQUIRE(s.source.units.size() == s.target.units.size());
    for (size_t j = 0; j < s.source.units.size(); ++j) {
      CHECK(s.target.units[j] == pair.perm[static_cast<size_t>(s.source.units[j])]);
      CHECK(s.target.durations[j] >= 1);
    }
    for (const auto& p : s.paraphrases) p.validate(pair.vocab_size);
  }
}

TEST_CASE("unit duration scale of one keeps target durations equal to source") {
  LanguagePair pair = test_pair();
  for (auto& s : pair.duration_scale) s = 1.0;
  Sample s = generate_sample(pair, "x", 99);
  CHECK(s.source.durations == s.target.durations);
}

TEST_CASE("durations keep a uniform marginal but concentrate per unit") {
  LanguagePair pair = test_pair();
  std::vector<int64_t> marginal(5, 0);
  std::vector<int64_t> hits(2, 0);  // [matches base, total]
  for (int i = 0; i < 400; ++i) {
    Sample s = generate_sample(pair, "d", derive_seed(4040, std::to_string(i)));
    for (size_t j = 0; j < s.source.units.size(); ++j) {
      const int d = s.source.durations[j];
      REQUIRE(d >= 1);
      REQUIRE(d <= 4);
      marginal[static_cast<size_t>(d)] += 1;
      hits[1] += 1;
      if (d == pair.base_duration[static_cast<size_t>(s.source.units[j])]) hits[0] += 1;
    }
  }
  const double total = static_cast<double>(hits[1]);
  for (int d = 1; d <= 4; ++d) {
    CHECK(marginal[static_cast<size_t>(d)] / total == doctest::Approx(0.25).epsilon(0.08));
  }
  // with re-draw probability rho, P(d == base) = (1 - rho) + rho/4
  const double expected = (1.0 - pair.duration_noise) + pair.duration_noise / 4.0;
  CHECK(hits[0] / total == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("mean source length sits in the expected frame band") {
  // measured once over 1000 samples; the distribution puts the mean near
  // 50 units * 2.5 frames = 125
  LanguagePair pair = test_pair();
  double total = 0.0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    total += generate_sample(pair, "m", derive_seed(1234, std::to_string(i))).source.total_frames();
  }
  const double mean = total / n;
  CHECK(mean >= 80.0);
  CHECK(mean <= 140.0);
}

TEST_CASE("paraphrases stay in vocab and bracket the canonical length") {
  LanguagePair pair = test_pair();
  int bracketed = 0;
  const int n = 500;
  for (int i = 0; i < n; ++i) {
    Sample s = generate_sample(pair, "p", derive_seed(777, std::to_string(i)));
    const size_t canon = s.target.units.size();
    const auto& shorter = s.paraphrases[0];
    const auto& neutral = s.paraphrases[1];
    const auto& longer = s.paraphrases[2];
    CHECK(neutral.units.size() == canon);  // substitution + jitter only
    for (const auto& p : s.paraphrases) {
      for (int u : p.units) {
        CHECK(u >= 0);
        CHECK(u < pair.vocab_size);
      }
      const double ratio = static_cast<double>(p.units.size()) / static_cast<double>(canon);
      CHECK(ratio >= 0.8);
      CHECK(ratio <= 1.2);
    }
    if (shorter.units.size() <= canon && canon <= longer.units.size()) ++bracketed;
  }
  CHECK(bracketed >= n * 9 / 10);
}

TEST_CASE("synonym substitutions never change the viseme row") {
  LanguagePair pair = test_pair();
  Sample s = generate_sample(pair, "v", 4242);
  const auto& neutral = s.paraphrases[1];  // no insertions or deletions
  REQUIRE(neutral.units.size() == s.target.units.size());
  for (size_t i = 0; i < neutral.units.size(); ++i) {
    for (int k = 0; k < PairConfig::kBands; ++k) {
      CHECK(pair.viseme_tgt.at(neutral.units[i], k) == pair.viseme_tgt.at(s.target.units[i], k));
    }
  }
}

TEST_CASE("lip track expansion, plateau, and noise behave as specified") {
  LanguagePair pair = test_pair();
  UnitSequence seq;
  seq.lang = Lang::Tgt;
  seq.units = {3};
  seq.durations = {5};
  Tensor track = render_lip_track(seq, pair, 1, 0.0);
  REQUIRE(track.rows() == 5);
  for (int64_t f = 1; f <= 3; ++f) {  // interior plateau of the moving average
    for (int k = 0; k < PairConfig::kBands; ++k) {
      CHECK(track.at(f, k) == doctest::Approx(pair.viseme_tgt.at(3, k)).epsilon(1e-12));
    }
  }

  Sample s = generate_sample(pair, "n", 31337);
  Tensor noisy = render_lip_track(s.source, pair, 5);
  Tensor clean = render_lip_track(s.source, pair, 5, 0.0);
  REQUIRE(noisy.rows() == s.source.total_frames());
  double dot = 0.0, nn = 0.0, cc = 0.0;
  for (int64_t i = 0; i < noisy.numel(); ++i) {
    dot += noisy[i] * clean[i];
    nn += noisy[i] * noisy[i];
    cc += clean[i] * clean[i];
  }
  CHECK(dot / std::sqrt(nn * cc) > 0.95);
}

TEST_CASE("canonical target rendered with source durations matches the source lip track") {
  // the cross-language viseme identity that makes sync learnable
  LanguagePair pair = test_pair();
  Sample s = generate_sample(pair, "xl", 777);
  UnitSequence target_with_src_durations;
  target_with_src_durations.lang = Lang::Tgt;
  target_with_src_durations.units = s.target.units;
  target_with_src_durations.durations = s.source.durations;
  Tensor src_track = render_lip_track(s.source, pair, 9, 0.0);
  Tensor tgt_track = render_lip_track(target_with_src_durations, pair, 9, 0.0);
  REQUIRE(src_track.same_shape(tgt_track));
  for (int64_t i = 0; i < src_track.numel(); ++i) CHECK(src_track[i] == tgt_track[i]);
}

TEST_CASE("corpus JSONL round-trips and stays byte-stable") {
  LanguagePair pair = test_pair();
  Corpus corpus;
  for (int i = 0; i < 100; ++i) {
    corpus.samples.push_back(
        generate_sample(pair, "rt-" + std::to_string(i), derive_seed(9, std::to_string(i))));
  }
  const auto path = fs::temp_directory_path() / "avs2s_corpus_rt.jsonl";
  save_corpus(corpus, path);
  const std::string bytes = slurp(path);
  Corpus loaded = load_corpus(path);
  REQUIRE(loaded.samples.size() == corpus.samples.size());
  for (size_t i = 0; i < corpus.samples.size(); ++i) {
    CHECK(loaded.samples[i].id == corpus.samples[i].id);
    CHECK(loaded.samples[i].sample_seed == corpus.samples[i].sample_seed);
    CHECK(loaded.samples[i].source.units == corpus.samples[i].source.units);
    CHECK(loaded.samples[i].source.durations == corpus.samples[i].source.durations);
    CHECK(loaded.samples[i].target.units == corpus.samples[i].target.units);
    for (size_t p = 0; p < 3; ++p) {
      CHECK(loaded.samples[i].paraphrases[p].units == corpus.samples[i].paraphrases[p].units);
    }
  }
  save_corpus(corpus, path);
  CHECK(slurp(path) == bytes);
  fs::remove(path);
}

TEST_CASE("corpus loader reports the offending line") {
  const auto path = fs::temp_directory_path() / "avs2s_corpus_bad.jsonl";
  LanguagePair pair = test_pair();
  Corpus corpus;
  corpus.samples.push_back(generate_sample(pair, "ok", 1));
  save_corpus(corpus, path);
  {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    f << R"({"id":"trunc","seed":1,"src":{"lang":"src","units":[1])";
  }
  CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("line 2"), std::runtime_error);

  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << R"({"id":"x","seed":1,"src":{"lang":"src","units":[],"durations":[]},"tgt":{"lang":"tgt","units":[],"durations":[]},"paraphrases":[{"lang":"tgt","units":[],"durations":[]},{"lang":"tgt","units":[],"durations":[]},{"lang":"tgt","units":[],"durations":[]}],"schema":"avs2s-corpus-v9"})"
      << "\n";
  }
  CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("schema"), std::runtime_error);
  fs::remove(path);
}

TEST_CASE("language pair persists through JSON with exact tables") {
  LanguagePair pair = test_pair(404);
  const auto path = fs::temp_directory_path() / "avs2s_pair_rt.json";
  save_language_pair(pair, path);
  LanguagePair loaded = load_language_pair(path);
  CHECK(loaded.pair_seed == pair.pair_seed);
  CHECK(loaded.perm == pair.perm);
  CHECK(loaded.inv_perm == pair.inv_perm);
  CHECK(loaded.base_duration == pair.base_duration);
  CHECK(loaded.duration_noise == pair.duration_noise);
  CHECK(loaded.duration_scale == pair.duration_scale);
  CHECK(loaded.synonym_classes == pair.synonym_classes);
  for (int64_t i = 0; i < pair.viseme_src.numel(); ++i) {
    CHECK(loaded.viseme_src[i] == pair.viseme_src[i]);
    CHECK(loaded.acoustic_tgt[i] == pair.acoustic_tgt[i]);
  }
  fs::remove(path);
}
