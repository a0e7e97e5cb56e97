#include "avs2s/vocoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "avs2s/graph.hpp"

namespace avs2s {

namespace {
constexpr int B = PairConfig::kBands;
constexpr double kAmp = 0.3;

// One unit segment: d frames of the unit's band mixture under a Hann window
// spanning the whole segment. Phase restarts at zero per segment; band
// frequencies are integer cycles per frame, so frame boundaries stay
// phase-aligned anyway.
void synth_segment(const LanguagePair& pair, Lang lang, int unit, int frames, double* out) {
  const double* amps = pair.acoustic(lang).row_ptr(unit);
  const int n = frames * Waveform::kSamplesPerFrame;
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / Waveform::kRate;
    double x = 0.0;
    for (int k = 0; k < B; ++k) {
      x += amps[k] * std::sin(2.0 * M_PI * pair.band_freqs[static_cast<size_t>(k)] * t);
    }
    const double hann =
        n > 1 ? 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (n - 1)) : 1.0;
    out[i] = kAmp * x * hann;
  }
}
}  // namespace

Waveform synthesize_waveform(const UnitSequence& seq, const LanguagePair& pair) {
  seq.validate(pair.vocab_size);
  Waveform wav;
  wav.samples.assign(static_cast<size_t>(seq.total_frames()) * Waveform::kSamplesPerFrame, 0.0);
  size_t offset = 0;
  for (size_t i = 0; i < seq.units.size(); ++i) {
    synth_segment(pair, seq.lang, seq.units[i], seq.durations[i], wav.samples.data() + offset);
    offset += static_cast<size_t>(seq.durations[i]) * Waveform::kSamplesPerFrame;
  }
  return wav;
}

Tensor extract_audio_features(const Waveform& wav, const LanguagePair& pair) {
  if (wav.samples.size() % Waveform::kSamplesPerFrame != 0) {
    throw std::invalid_argument("waveform length is not a whole number of frames");
  }
  const int T = wav.frames();
  const int n = Waveform::kSamplesPerFrame;
  Tensor out({T, B});

  // Per-band projection basis, shared across frames (band phase is frame
  // periodic by construction).
  static thread_local std::vector<double> basis;  // [B][2][n]
  static thread_local std::vector<double> freqs_cached;
  std::vector<double> freqs(pair.band_freqs);
  if (freqs_cached != freqs) {
    basis.assign(static_cast<size_t>(B) * 2 * n, 0.0);
    for (int k = 0; k < B; ++k) {
      double* cosr = basis.data() + (static_cast<size_t>(k) * 2) * n;
      double* sinr = cosr + n;
      for (int i = 0; i < n; ++i) {
        const double w = 2.0 * M_PI * freqs[static_cast<size_t>(k)] * i / Waveform::kRate;
        cosr[i] = std::cos(w);
        sinr[i] = std::sin(w);
      }
    }
    freqs_cached = freqs;
  }

  for (int f = 0; f < T; ++f) {
    const double* x = wav.samples.data() + static_cast<size_t>(f) * n;
    double* o = out.row_ptr(f);
    for (int k = 0; k < B; ++k) {
      const double* cosr = basis.data() + (static_cast<size_t>(k) * 2) * n;
      const double* sinr = cosr + n;
      double c = 0.0, s = 0.0;
      for (int i = 0; i < n; ++i) {
        c += x[i] * cosr[i];
        s += x[i] * sinr[i];
      }
      const double amplitude = 2.0 / n * std::sqrt(c * c + s * s);
      o[k] = std::log1p(amplitude);
    }
  }
  return out;
}

Tensor soft_expand(const Tensor& embeddings, std::span<const double> log_durations,
                   int total_frames, double sigma) {
  ad::Tape tape;
  Tensor ld({static_cast<int64_t>(log_durations.size())});
  for (size_t i = 0; i < log_durations.size(); ++i) ld[static_cast<int64_t>(i)] = log_durations[i];
  ad::Var out = tape.soft_expand(tape.constant(embeddings), tape.constant(std::move(ld)),
                                 total_frames, sigma);
  return out->value;
}

Tensor hard_expand(const std::vector<int>& units, const std::vector<int>& durations,
                   const Tensor& table) {
  if (units.size() != durations.size()) {
    throw std::invalid_argument("hard_expand: unit/duration length mismatch");
  }
  int total = 0;
  for (int d : durations) {
    if (d < 1) throw std::invalid_argument("hard_expand: durations must be >= 1");
    total += d;
  }
  const int64_t cols = table.cols();
  Tensor out({total, cols});
  int t = 0;
  for (size_t i = 0; i < units.size(); ++i) {
    for (int d = 0; d < durations[i]; ++d, ++t) {
      std::copy_n(table.row_ptr(units[i]), cols, out.row_ptr(t));
    }
  }
  return out;
}

Tensor unit_feature_table(const LanguagePair& pair, Lang lang) {
  constexpr int kProbeDur = 4;
  Tensor table({pair.vocab_size, B});
  UnitSequence probe;
  probe.lang = lang;
  probe.units = {0};
  probe.durations = {kProbeDur};
  for (int u = 0; u < pair.vocab_size; ++u) {
    probe.units[0] = u;
    const Tensor feats = extract_audio_features(synthesize_waveform(probe, pair), pair);
    double* row = table.row_ptr(u);
    for (int k = 0; k < B; ++k) {
      row[k] = 0.5 * (feats.at(1, k) + feats.at(2, k));  // interior frames
    }
  }
  return table;
}

void write_wav(const std::filesystem::path& path, const Waveform& wav) {
  const uint32_t n = static_cast<uint32_t>(wav.samples.size());
  const uint32_t data_bytes = n * 2;
  std::string out;
  auto u32 = [&out](uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  auto u16 = [&out](uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
  };
  out += "RIFF";
  u32(36 + data_bytes);
  out += "WAVEfmt ";
  u32(16);
  u16(1);  // PCM
  u16(1);  // mono
  u32(Waveform::kRate);
  u32(Waveform::kRate * 2);  // byte rate
  u16(2);                    // block align
  u16(16);                   // bits per sample
  out += "data";
  u32(data_bytes);
  for (double s : wav.samples) {
    const double clipped = std::clamp(s, -1.0, 1.0);
    const int16_t q = static_cast<int16_t>(std::lround(clipped * 32767.0));
    u16(static_cast<uint16_t>(q));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

void write_feature_dump(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  const uint32_t dims[2] = {static_cast<uint32_t>(t.rows()), static_cast<uint32_t>(t.cols())};
  char hdr[8];
  std::memcpy(hdr, dims, 8);
  f.write(hdr, 8);
  f.write(reinterpret_cast<const char*>(t.data()), t.numel() * 8);
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace avs2s
