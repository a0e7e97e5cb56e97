#include "avs2s/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace avs2s {

LseResult lse_metrics(const SyncExpert& expert, const Tensor& lip, const Tensor& audio,
                      int window, int max_offset) {
  const int T = static_cast<int>(lip.rows());
  const int Ta = static_cast<int>(audio.rows());
  const int required = window + max_offset;
  if (T < required || Ta < required) {
    throw std::invalid_argument("lse_metrics: tracks too short, need at least " +
                                std::to_string(required) + " frames (got " + std::to_string(T) +
                                " lip, " + std::to_string(Ta) + " audio)");
  }

  std::vector<int> all_v(static_cast<size_t>(T - window + 1));
  std::iota(all_v.begin(), all_v.end(), 0);
  std::vector<int> all_a(static_cast<size_t>(Ta - window + 1));
  std::iota(all_a.begin(), all_a.end(), 0);
  const Tensor ev = embed_windows(expert, Modality::Video, stack_track_windows(lip, all_v, window));
  const Tensor ea = embed_windows(expert, Modality::Audio, stack_track_windows(audio, all_a, window));
  const int nv = static_cast<int>(ev.rows());
  const int na = static_cast<int>(ea.rows());
  const int dim = static_cast<int>(ev.cols());

  LseResult result;
  result.curve.reserve(static_cast<size_t>(2 * max_offset + 1));
  for (int o = -max_offset; o <= max_offset; ++o) {
    const int lo = std::max(0, -o);
    const int hi = std::min(nv - 1, na - 1 - o);
    if (hi < lo) {
      throw std::logic_error("lse_metrics: empty window range at offset " + std::to_string(o));
    }
    double acc = 0.0;
    for (int t = lo; t <= hi; ++t) {
      const double* v = ev.row_ptr(t);
      const double* a = ea.row_ptr(t + o);
      double d2 = 0.0;
      for (int i = 0; i < dim; ++i) d2 += (v[i] - a[i]) * (v[i] - a[i]);
      acc += std::sqrt(d2);
    }
    result.curve.push_back(acc / (hi - lo + 1));
  }

  const auto min_it = std::min_element(result.curve.begin(), result.curve.end());
  result.lse_d = *min_it;
  result.best_offset = static_cast<int>(min_it - result.curve.begin()) - max_offset;
  std::vector<double> sorted(result.curve);
  std::sort(sorted.begin(), sorted.end());
  result.lse_c = sorted[sorted.size() / 2] - result.lse_d;
  return result;
}

namespace {

// Iterative radix-2 FFT, in place.
void fft(std::vector<std::complex<double>>& x) {
  const size_t n = x.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const auto u = x[i + j];
        const auto v = x[i + j + len / 2] * w;
        x[i + j] = u + v;
        x[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

constexpr int kLsdFrame = 400;  // 25 ms at 16 kHz
constexpr int kLsdHop = 160;    // 10 ms
constexpr int kLsdFft = 512;
constexpr double kLsdEps = 1e-8;

std::vector<double> frame_magnitudes(const std::vector<double>& samples, size_t start) {
  std::vector<std::complex<double>> buf(kLsdFft, 0.0);
  for (int i = 0; i < kLsdFrame; ++i) {
    buf[static_cast<size_t>(i)] = samples[start + static_cast<size_t>(i)];
  }
  fft(buf);
  std::vector<double> mags(kLsdFft / 2 + 1);
  for (size_t k = 0; k < mags.size(); ++k) mags[k] = std::abs(buf[k]);
  return mags;
}

}  // namespace

double log_spectral_distance(const Waveform& a, const Waveform& b) {
  if (a.samples.empty() || b.samples.empty()) {
    throw std::invalid_argument("log_spectral_distance: empty audio");
  }
  const size_t n = std::max(a.samples.size(), b.samples.size());
  std::vector<double> xa(a.samples), xb(b.samples);
  xa.resize(n, 0.0);
  xb.resize(n, 0.0);
  if (n < kLsdFrame) {
    xa.resize(kLsdFrame, 0.0);
    xb.resize(kLsdFrame, 0.0);
  }

  double acc = 0.0;
  int frames = 0;
  for (size_t start = 0; start + kLsdFrame <= xa.size(); start += kLsdHop) {
    const auto ma = frame_magnitudes(xa, start);
    const auto mb = frame_magnitudes(xb, start);
    double frame_acc = 0.0;
    for (size_t k = 0; k < ma.size(); ++k) {
      const double diff = 20.0 * std::log10(ma[k] + kLsdEps) - 20.0 * std::log10(mb[k] + kLsdEps);
      frame_acc += diff * diff;
    }
    acc += std::sqrt(frame_acc / static_cast<double>(ma.size()));
    ++frames;
  }
  return acc / frames;
}

BleuResult unit_bleu(const std::vector<int>& hyp, const std::vector<std::vector<int>>& refs,
                     int max_n) {
  if (refs.empty()) throw std::invalid_argument("unit_bleu: no references");
  BleuResult result;
  if (hyp.empty()) {
    result.empty_hyp = true;
    return result;
  }

  const auto hyp_len = static_cast<long>(hyp.size());
  long ref_len = static_cast<long>(refs[0].size());
  for (const auto& r : refs) {
    const auto rl = static_cast<long>(r.size());
    if (std::abs(rl - hyp_len) < std::abs(ref_len - hyp_len) ||
        (std::abs(rl - hyp_len) == std::abs(ref_len - hyp_len) && rl < ref_len)) {
      ref_len = rl;
    }
  }

  double log_prec = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    std::map<std::vector<int>, int> hyp_counts;
    const long total = hyp_len - n + 1;
    for (long i = 0; i + n <= hyp_len; ++i) {
      hyp_counts[std::vector<int>(hyp.begin() + i, hyp.begin() + i + n)] += 1;
    }
    std::map<std::vector<int>, int> max_ref_counts;
    for (const auto& r : refs) {
      std::map<std::vector<int>, int> counts;
      for (long i = 0; i + n <= static_cast<long>(r.size()); ++i) {
        counts[std::vector<int>(r.begin() + i, r.begin() + i + n)] += 1;
      }
      for (const auto& [gram, c] : counts) {
        max_ref_counts[gram] = std::max(max_ref_counts[gram], c);
      }
    }
    long matched = 0;
    for (const auto& [gram, c] : hyp_counts) {
      auto it = max_ref_counts.find(gram);
      if (it != max_ref_counts.end()) matched += std::min<long>(c, it->second);
    }
    const double smooth = n >= 2 ? 1.0 : 0.0;
    const double num = static_cast<double>(matched) + smooth;
    const double den = static_cast<double>(std::max<long>(total, 0)) + smooth;
    if (num <= 0.0) {
      return result;  // unsmoothed unigram precision of zero: score 0
    }
    log_prec += std::log(num / den);
  }

  const double bp = hyp_len >= ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) / hyp_len);
  result.score = bp * std::exp(log_prec / max_n);
  return result;
}

MetricReport::Stat MetricReport::aggregate(const std::string& metric) const {
  std::vector<double> values;
  values.reserve(samples.size());
  for (const auto& s : samples) {
    if (metric == "lse_d") {
      values.push_back(s.lse_d);
    } else if (metric == "lse_c") {
      values.push_back(s.lse_c);
    } else if (metric == "lsd") {
      values.push_back(s.lsd);
    } else if (metric == "unit_bleu") {
      if (s.unit_bleu) values.push_back(*s.unit_bleu);
    } else {
      throw std::invalid_argument("unknown metric: " + metric);
    }
  }
  Stat st;
  if (values.empty()) return st;
  for (double v : values) st.mean += v;
  st.mean /= static_cast<double>(values.size());
  for (double v : values) st.stddev += (v - st.mean) * (v - st.mean);
  st.stddev = std::sqrt(st.stddev / static_cast<double>(values.size()));
  return st;
}

double MetricReport::mean_length_drift() const {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& s : samples) {
    acc += std::abs(s.total_frames_gen - s.total_frames_src) /
           static_cast<double>(s.total_frames_src);
  }
  return acc / static_cast<double>(samples.size());
}

MetricReport evaluate_system(const Corpus& test, const LanguagePair& pair,
                             const Seq2SeqModel* translator, const DurationPredictor* duration,
                             const SyncExpert& expert, const EvalOptions& options,
                             TrackCache& cache) {
  using UnitSource = EvalOptions::UnitSource;
  MetricReport report;
  report.system = options.system_label;
  report.seed = options.seed;

  for (const auto& sample : test.samples) {
    try {
      const int T_s = sample.source.total_frames();

      UnitSequence gen;
      std::optional<double> bleu;
      if (options.unit_source == UnitSource::SourceSelf) {
        gen = sample.source;
      } else if (options.unit_source == UnitSource::OriginalTranslation) {
        gen = sample.target;  // canonical target with its ground-truth durations
        bleu = unit_bleu(gen.units, {sample.target.units}).score;
      } else {
        gen.lang = Lang::Tgt;
        if (options.unit_source == UnitSource::Translator) {
          if (translator == nullptr) {
            throw std::runtime_error("translator required for this unit source");
          }
          gen.units = translate(*translator, sample.source, Lang::Tgt).units;
          if (gen.units.empty()) throw std::runtime_error("translator produced no units");
        } else {
          gen.units = sample.target.units;
        }
        bleu = unit_bleu(gen.units, {sample.target.units}).score;
        if (duration == nullptr) {
          throw std::runtime_error("duration model required for this unit source");
        }
        gen.durations = expand_durations(*duration, gen.units, T_s, options.duration_mode);
      }

      const Tensor feats = cache.features_for_sequence(gen);
      const Tensor& lip = cache.lip(sample, Lang::Src);
      LseResult lse = lse_metrics(expert, lip, feats, options.window, options.max_offset);

      double lsd = 0.0;
      if (options.unit_source != UnitSource::SourceSelf) {
        const Waveform gen_wav = cache.waveform_for_sequence(gen);
        const Waveform ref_wav = cache.waveform_for_sequence(sample.target);
        lsd = log_spectral_distance(gen_wav, ref_wav);
      }

      SampleRecord rec;
      rec.id = sample.id;
      rec.lse_d = lse.lse_d;
      rec.lse_c = lse.lse_c;
      rec.lsd = lsd;
      rec.unit_bleu = bleu;
      rec.total_frames_src = T_s;
      rec.total_frames_gen = gen.total_frames();
      rec.gen_units = gen.units;
      rec.gen_durations = gen.durations;
      if (static_cast<int>(report.samples.size()) < options.keep_curves) {
        rec.offset_curve = std::move(lse.curve);
      }
      report.samples.push_back(std::move(rec));
    } catch (const std::exception& e) {
      report.failures.emplace_back(sample.id, e.what());
    }
  }
  return report;
}

nlohmann::json report_to_json(const MetricReport& report) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : report.samples) {
    nlohmann::json rec = {{"id", s.id},
                          {"lse_d", s.lse_d},
                          {"lse_c", s.lse_c},
                          {"lsd", s.lsd},
                          {"unit_bleu", nullptr},
                          {"total_frames_src", s.total_frames_src},
                          {"total_frames_gen", s.total_frames_gen}};
    if (s.unit_bleu) rec["unit_bleu"] = *s.unit_bleu;
    samples.push_back(std::move(rec));
  }
  nlohmann::json aggregate;
  for (const char* m : {"lse_d", "lse_c", "lsd", "unit_bleu"}) {
    const auto st = report.aggregate(m);
    aggregate[m] = {{"mean", st.mean}, {"std", st.stddev}};
  }
  aggregate["length_drift"] = {{"mean", report.mean_length_drift()}};
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& [id, reason] : report.failures) {
    failures.push_back({{"id", id}, {"reason", reason}});
  }
  return {{"system", report.system}, {"seed", report.seed},      {"samples", samples},
          {"aggregate", aggregate},  {"failures", failures},     {"schema", "avs2s-report-v1"}};
}

MetricReport report_from_json(const nlohmann::json& j) {
  if (j.at("schema").get<std::string>() != "avs2s-report-v1") {
    throw std::invalid_argument("report schema mismatch");
  }
  MetricReport report;
  report.system = j.at("system").get<std::string>();
  report.seed = j.at("seed").get<uint64_t>();
  for (const auto& rec : j.at("samples")) {
    SampleRecord s;
    s.id = rec.at("id").get<std::string>();
    s.lse_d = rec.at("lse_d").get<double>();
    s.lse_c = rec.at("lse_c").get<double>();
    s.lsd = rec.at("lsd").get<double>();
    if (!rec.at("unit_bleu").is_null()) s.unit_bleu = rec.at("unit_bleu").get<double>();
    s.total_frames_src = rec.at("total_frames_src").get<int>();
    s.total_frames_gen = rec.at("total_frames_gen").get<int>();
    report.samples.push_back(std::move(s));
  }
  for (const auto& f : j.at("failures")) {
    report.failures.emplace_back(f.at("id").get<std::string>(), f.at("reason").get<std::string>());
  }
  return report;
}

std::string report_markdown(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os << "| System | Seed | LSE-C ^ | LSE-D v | LSD (dB) v | Unit BLEU ^ | Length drift |\n";
  os << "|---|---|---|---|---|---|---|\n";
  os.precision(4);
  os << std::fixed;
  for (const auto& r : reports) {
    const auto lse_c = r.aggregate("lse_c");
    const auto lse_d = r.aggregate("lse_d");
    const auto lsd = r.aggregate("lsd");
    const auto bleu = r.aggregate("unit_bleu");
    os << "| " << r.system << " | " << r.seed << " | " << lse_c.mean << " | " << lse_d.mean
       << " | " << lsd.mean << " | " << bleu.mean << " | " << r.mean_length_drift() << " |\n";
  }
  return os.str();
}

}  // namespace avs2s
