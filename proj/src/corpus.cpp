#include "avs2s/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "avs2s/rng.hpp"

namespace avs2s {

using nlohmann::json;

const char* lang_token(Lang lang) { return lang == Lang::Src ? "src" : "tgt"; }

Lang lang_from_token(const std::string& s) {
  if (s == "src") return Lang::Src;
  if (s == "tgt") return Lang::Tgt;
  throw std::invalid_argument("unknown language token: " + s);
}

int UnitSequence::total_frames() const {
  return std::accumulate(durations.begin(), durations.end(), 0);
}

void UnitSequence::validate(int vocab_size) const {
  if (units.size() != durations.size()) {
    throw std::invalid_argument("unit/duration length mismatch");
  }
  for (int u : units) {
    if (u < 0 || u >= vocab_size) throw std::invalid_argument("unit id out of vocab");
  }
  for (int d : durations) {
    if (d < 1) throw std::invalid_argument("duration must be >= 1");
  }
}

LanguagePair build_language_pair(const PairConfig& config, uint64_t seed) {
  const int U = config.vocab_size;
  if (U < 8 || U % 2 != 0) {
    throw std::invalid_argument("vocab_size must be even and >= 8");
  }
  constexpr int B = PairConfig::kBands;

  LanguagePair pair;
  pair.vocab_size = U;
  pair.pair_seed = seed;

  pair.perm.resize(static_cast<size_t>(U));
  std::iota(pair.perm.begin(), pair.perm.end(), 0);
  RngStream perm_rng(seed, "pair/perm");
  perm_rng.shuffle(pair.perm);
  pair.inv_perm.assign(static_cast<size_t>(U), 0);
  for (int u = 0; u < U; ++u) pair.inv_perm[static_cast<size_t>(pair.perm[u])] = u;

  RngStream scale_rng(seed, "pair/duration_scale");
  pair.duration_scale.resize(static_cast<size_t>(U));
  for (auto& s : pair.duration_scale) s = scale_rng.uniform(0.6, 1.6);

  // Characteristic durations: a quarter of the vocab per value of [1,4], so
  // uniformly drawn units keep a uniform duration marginal.
  pair.duration_noise = config.duration_noise;
  {
    RngStream dur_rng(seed, "pair/base_duration");
    std::vector<int> ids(static_cast<size_t>(U));
    std::iota(ids.begin(), ids.end(), 0);
    dur_rng.shuffle(ids);
    pair.base_duration.assign(static_cast<size_t>(U), 1);
    for (int i = 0; i < U; ++i) {
      pair.base_duration[static_cast<size_t>(ids[static_cast<size_t>(i)])] = 1 + (i * 4) / U;
    }
  }

  // Synonym classes partition the *target* vocab into groups of 2-4; all
  // members of a group share one viseme row (look alike, sound different).
  RngStream class_rng(seed, "pair/synonym_classes");
  std::vector<int> tgt_ids(static_cast<size_t>(U));
  std::iota(tgt_ids.begin(), tgt_ids.end(), 0);
  class_rng.shuffle(tgt_ids);
  size_t pos = 0;
  while (pos < tgt_ids.size()) {
    size_t remaining = tgt_ids.size() - pos;
    size_t take;
    if (remaining <= 4) {
      take = remaining;  // U even and >= 8 keeps this in [2,4]
    } else {
      take = static_cast<size_t>(class_rng.uniform_int(2, std::min<int64_t>(4, static_cast<int64_t>(remaining) - 2)));
    }
    std::vector<int> group(tgt_ids.begin() + static_cast<long>(pos),
                           tgt_ids.begin() + static_cast<long>(pos + take));
    std::sort(group.begin(), group.end());
    pair.synonym_classes.push_back(std::move(group));
    pos += take;
  }
  pair.synonym_class_of.assign(static_cast<size_t>(U), -1);
  for (size_t c = 0; c < pair.synonym_classes.size(); ++c) {
    for (int v : pair.synonym_classes[c]) pair.synonym_class_of[static_cast<size_t>(v)] = static_cast<int>(c);
  }

  // One unit-norm Gaussian viseme row per synonym class; source rows follow
  // through the permutation so viseme_tgt[perm[u]] == viseme_src[u] exactly.
  RngStream vis_rng(seed, "pair/viseme");
  pair.viseme_tgt = Tensor({U, B});
  for (const auto& group : pair.synonym_classes) {
    std::vector<double> row(B);
    double norm = 0.0;
    for (auto& x : row) {
      x = vis_rng.gaussian();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : row) x /= norm;
    for (int v : group) {
      std::copy(row.begin(), row.end(), pair.viseme_tgt.row_ptr(v));
    }
  }
  pair.viseme_src = Tensor({U, B});
  for (int u = 0; u < U; ++u) {
    std::copy_n(pair.viseme_tgt.row_ptr(pair.perm[u]), B, pair.viseme_src.row_ptr(u));
  }

  auto draw_acoustic = [&](const char* label) {
    RngStream rng(seed, label);
    Tensor table({U, B});
    for (int u = 0; u < U; ++u) {
      auto row = rng.dirichlet(0.3, B);  // spiky band signatures
      std::copy(row.begin(), row.end(), table.row_ptr(u));
    }
    return table;
  };
  pair.acoustic_src = draw_acoustic("pair/acoustic_src");
  pair.acoustic_tgt = draw_acoustic("pair/acoustic_tgt");

  pair.band_freqs.resize(B);
  for (int k = 0; k < B; ++k) pair.band_freqs[static_cast<size_t>(k)] = 200.0 + 150.0 * k;

  return pair;
}

Sample generate_sample(const LanguagePair& pair, std::string id, uint64_t seed) {
  Sample s;
  s.id = std::move(id);
  s.sample_seed = seed;

  RngStream rng(seed, "sample/body");
  const int units = static_cast<int>(rng.uniform_int(20, 80));
  s.source.lang = Lang::Src;
  s.target.lang = Lang::Tgt;
  s.source.units.reserve(static_cast<size_t>(units));
  s.source.durations.reserve(static_cast<size_t>(units));
  for (int i = 0; i < units; ++i) {
    const int u = static_cast<int>(rng.uniform_int(0, pair.vocab_size - 1));
    const int d = rng.uniform() < pair.duration_noise
                      ? static_cast<int>(rng.uniform_int(1, 4))
                      : pair.base_duration[static_cast<size_t>(u)];
    s.source.units.push_back(u);
    s.source.durations.push_back(d);
    s.target.units.push_back(pair.perm[static_cast<size_t>(u)]);
    const double scaled = d * pair.duration_scale[static_cast<size_t>(u)];
    s.target.durations.push_back(std::max(1, static_cast<int>(std::lround(scaled))));
  }
  s.paraphrases = generate_paraphrases(s.target, pair, derive_seed(seed, "sample/paraphrases"));
  return s;
}

namespace {

UnitSequence make_paraphrase(const UnitSequence& canonical, const LanguagePair& pair,
                             uint64_t seed, int length_bias) {
  UnitSequence out = canonical;
  RngStream rng(seed, "paraphrase");

  // (a) Synonym substitution on ~20% of positions; keeps length and visemes.
  for (size_t i = 0; i < out.units.size(); ++i) {
    if (rng.uniform() >= 0.2) continue;
    const int cls = pair.synonym_class_of[static_cast<size_t>(out.units[i])];
    const auto& group = pair.synonym_classes[static_cast<size_t>(cls)];
    if (group.size() < 2) continue;
    int pick;
    do {
      pick = group[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(group.size()) - 1))];
    } while (pick == out.units[i]);
    out.units[i] = pick;
  }

  // (b) Length change via filler unit 0 only: short deletes existing
  // fillers, long inserts new ones, each capped at 10% of length.
  const int cap = static_cast<int>(out.units.size() / 10);
  if (length_bias < 0 && cap > 0) {
    std::vector<size_t> filler_pos;
    for (size_t i = 0; i < out.units.size(); ++i) {
      if (out.units[i] == 0) filler_pos.push_back(i);
    }
    rng.shuffle(filler_pos);
    const size_t drop = std::min<size_t>(filler_pos.size(), static_cast<size_t>(cap));
    filler_pos.resize(drop);
    std::sort(filler_pos.rbegin(), filler_pos.rend());
    for (size_t p : filler_pos) {
      out.units.erase(out.units.begin() + static_cast<long>(p));
      out.durations.erase(out.durations.begin() + static_cast<long>(p));
    }
  } else if (length_bias > 0) {
    const int inserts = static_cast<int>(rng.uniform_int(1, std::max(1, cap)));
    for (int k = 0; k < inserts; ++k) {
      const size_t at = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(out.units.size())));
      out.units.insert(out.units.begin() + static_cast<long>(at), 0);
      out.durations.insert(out.durations.begin() + static_cast<long>(at),
                           static_cast<int>(rng.uniform_int(1, 2)));
    }
  }

  // (c) Duration jitter of +/-1 frame, clamped to >= 1.
  for (auto& d : out.durations) {
    d = std::max(1, d + static_cast<int>(rng.uniform_int(-1, 1)));
  }
  return out;
}

}  // namespace

std::array<UnitSequence, 3> generate_paraphrases(const UnitSequence& canonical,
                                                 const LanguagePair& pair, uint64_t seed) {
  return {make_paraphrase(canonical, pair, derive_seed(seed, "short"), -1),
          make_paraphrase(canonical, pair, derive_seed(seed, "neutral"), 0),
          make_paraphrase(canonical, pair, derive_seed(seed, "long"), +1)};
}

Tensor render_lip_track(const UnitSequence& seq, const LanguagePair& pair, uint64_t seed,
                        double noise_sigma) {
  seq.validate(pair.vocab_size);
  constexpr int B = PairConfig::kBands;
  const Tensor& table = pair.viseme(seq.lang);
  const int T = seq.total_frames();

  Tensor expanded({T, B});
  int t = 0;
  for (size_t i = 0; i < seq.units.size(); ++i) {
    for (int d = 0; d < seq.durations[i]; ++d, ++t) {
      std::copy_n(table.row_ptr(seq.units[i]), B, expanded.row_ptr(t));
    }
  }

  // Centered width-3 moving average; edge frames average what is in range.
  Tensor out({T, B});
  for (int f = 0; f < T; ++f) {
    const int lo = std::max(0, f - 1);
    const int hi = std::min(T - 1, f + 1);
    double* o = out.row_ptr(f);
    for (int r = lo; r <= hi; ++r) {
      const double* e = expanded.row_ptr(r);
      for (int b = 0; b < B; ++b) o[b] += e[b];
    }
    const double inv = 1.0 / static_cast<double>(hi - lo + 1);
    for (int b = 0; b < B; ++b) o[b] *= inv;
  }

  if (noise_sigma > 0.0) {
    RngStream noise(seed, "lip/noise");
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += noise_sigma * noise.gaussian();
  }
  return out;
}

uint64_t lip_track_seed(const Sample& sample, Lang lang) {
  return derive_seed(sample.sample_seed, lang == Lang::Src ? "lip/src" : "lip/tgt");
}

namespace {

constexpr const char* kCorpusSchema = "avs2s-corpus-v1";
constexpr const char* kPairSchema = "avs2s-pair-v1";

json seq_to_json(const UnitSequence& s) {
  return {{"lang", lang_token(s.lang)}, {"units", s.units}, {"durations", s.durations}};
}

UnitSequence seq_from_json(const json& j) {
  UnitSequence s;
  s.lang = lang_from_token(j.at("lang").get<std::string>());
  s.units = j.at("units").get<std::vector<int>>();
  s.durations = j.at("durations").get<std::vector<int>>();
  if (s.units.size() != s.durations.size()) {
    throw std::invalid_argument("unit/duration length mismatch");
  }
  return s;
}

const char kB64Alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const unsigned char* data, size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (size_t i = 0; i < len; i += 3) {
    uint32_t v = static_cast<uint32_t>(data[i]) << 16;
    if (i + 1 < len) v |= static_cast<uint32_t>(data[i + 1]) << 8;
    if (i + 2 < len) v |= static_cast<uint32_t>(data[i + 2]);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(i + 1 < len ? kB64Alphabet[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < len ? kB64Alphabet[v & 63] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& s) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    if (c == '=') return -1;
    throw std::invalid_argument("bad base64 character");
  };
  std::vector<unsigned char> out;
  out.reserve(s.size() / 4 * 3);
  for (size_t i = 0; i + 3 < s.size(); i += 4) {
    const int a = val(s[i]), b = val(s[i + 1]), c = val(s[i + 2]), d = val(s[i + 3]);
    if (a < 0 || b < 0) throw std::invalid_argument("bad base64 padding");
    out.push_back(static_cast<unsigned char>((a << 2) | (b >> 4)));
    if (c >= 0) out.push_back(static_cast<unsigned char>(((b & 15) << 4) | (c >> 2)));
    if (c >= 0 && d >= 0) out.push_back(static_cast<unsigned char>(((c & 3) << 6) | d));
  }
  return out;
}

std::string doubles_to_b64(const double* p, size_t n) {
  return base64_encode(reinterpret_cast<const unsigned char*>(p), n * sizeof(double));
}

std::vector<double> b64_to_doubles(const std::string& s, size_t expect) {
  auto bytes = base64_decode(s);
  if (bytes.size() != expect * sizeof(double)) {
    throw std::invalid_argument("embedded table has wrong size");
  }
  std::vector<double> out(expect);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

json tensor_to_b64(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", doubles_to_b64(t.data(), static_cast<size_t>(t.numel()))}};
}

Tensor tensor_from_b64(const json& j) {
  Tensor t(j.at("shape").get<std::vector<int64_t>>());
  auto vals = b64_to_doubles(j.at("data").get<std::string>(), static_cast<size_t>(t.numel()));
  std::copy(vals.begin(), vals.end(), t.data());
  return t;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const auto& s : corpus.samples) {
    json line = {{"id", s.id},
                 {"seed", s.sample_seed},
                 {"src", seq_to_json(s.source)},
                 {"tgt", seq_to_json(s.target)},
                 {"paraphrases",
                  {seq_to_json(s.paraphrases[0]), seq_to_json(s.paraphrases[1]),
                   seq_to_json(s.paraphrases[2])}},
                 {"schema", kCorpusSchema}};
    f << line.dump() << '\n';
  }
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open corpus: " + path.string());
  Corpus corpus;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      const auto schema = j.at("schema").get<std::string>();
      if (schema != kCorpusSchema) {
        throw std::runtime_error("schema mismatch: expected " + std::string(kCorpusSchema) +
                                 ", got " + schema);
      }
      Sample s;
      s.id = j.at("id").get<std::string>();
      s.sample_seed = j.at("seed").get<uint64_t>();
      s.source = seq_from_json(j.at("src"));
      s.target = seq_from_json(j.at("tgt"));
      const auto& paras = j.at("paraphrases");
      if (paras.size() != 3) throw std::runtime_error("expected exactly 3 paraphrases");
      for (size_t i = 0; i < 3; ++i) s.paraphrases[i] = seq_from_json(paras[i]);
      corpus.samples.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ": line " + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
  return corpus;
}

void save_language_pair(const LanguagePair& pair, const std::filesystem::path& path) {
  json j = {{"schema", kPairSchema},
            {"pair_seed", pair.pair_seed},
            {"vocab_size", pair.vocab_size},
            {"perm", pair.perm},
            {"base_duration", pair.base_duration},
            {"duration_noise", pair.duration_noise},
            {"duration_scale",
             doubles_to_b64(pair.duration_scale.data(), pair.duration_scale.size())},
            {"viseme_src", tensor_to_b64(pair.viseme_src)},
            {"viseme_tgt", tensor_to_b64(pair.viseme_tgt)},
            {"acoustic_src", tensor_to_b64(pair.acoustic_src)},
            {"acoustic_tgt", tensor_to_b64(pair.acoustic_tgt)},
            {"band_freqs", pair.band_freqs},
            {"synonym_classes", pair.synonym_classes}};
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f << j.dump(2) << '\n';
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

LanguagePair load_language_pair(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open language pair: " + path.string());
  json j = json::parse(f);
  if (j.at("schema").get<std::string>() != kPairSchema) {
    throw std::runtime_error("language pair schema mismatch in " + path.string());
  }
  LanguagePair pair;
  pair.pair_seed = j.at("pair_seed").get<uint64_t>();
  pair.vocab_size = j.at("vocab_size").get<int>();
  pair.perm = j.at("perm").get<std::vector<int>>();
  pair.inv_perm.assign(pair.perm.size(), 0);
  for (size_t u = 0; u < pair.perm.size(); ++u) {
    pair.inv_perm[static_cast<size_t>(pair.perm[u])] = static_cast<int>(u);
  }
  pair.base_duration = j.at("base_duration").get<std::vector<int>>();
  pair.duration_noise = j.at("duration_noise").get<double>();
  pair.duration_scale =
      b64_to_doubles(j.at("duration_scale").get<std::string>(), static_cast<size_t>(pair.vocab_size));
  pair.viseme_src = tensor_from_b64(j.at("viseme_src"));
  pair.viseme_tgt = tensor_from_b64(j.at("viseme_tgt"));
  pair.acoustic_src = tensor_from_b64(j.at("acoustic_src"));
  pair.acoustic_tgt = tensor_from_b64(j.at("acoustic_tgt"));
  pair.band_freqs = j.at("band_freqs").get<std::vector<double>>();
  pair.synonym_classes = j.at("synonym_classes").get<std::vector<std::vector<int>>>();
  pair.synonym_class_of.assign(static_cast<size_t>(pair.vocab_size), -1);
  for (size_t c = 0; c < pair.synonym_classes.size(); ++c) {
    for (int v : pair.synonym_classes[c]) {
      pair.synonym_class_of[static_cast<size_t>(v)] = static_cast<int>(c);
    }
  }
  return pair;
}

}  // namespace avs2s
