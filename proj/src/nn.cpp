#include "avs2s/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "avs2s/rng.hpp"

namespace avs2s {

void ParameterSet::add(const std::string& name, Tensor t) {
  if (has(name)) throw std::invalid_argument("duplicate parameter: " + name);
  entries_.emplace_back(name, std::move(t));
}

bool ParameterSet::has(const std::string& name) const {
  for (const auto& [n, _] : entries_) {
    if (n == name) return true;
  }
  return false;
}

Tensor& ParameterSet::at(const std::string& name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named " + name);
}

const Tensor& ParameterSet::at(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named " + name);
}

int64_t ParameterSet::total_values() const {
  int64_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& [name, t] : entries_) out.add(name, Tensor::zeros(t.shape()));
  return out;
}

void ParameterSet::fill(double v) {
  for (auto& [_, t] : entries_) t.fill(v);
}

void ParameterSet::check_finite(const std::string& context) const {
  for (const auto& [name, t] : entries_) {
    if (!t.all_finite()) {
      throw std::runtime_error(context + ": non-finite values in parameter " + name);
    }
  }
}

ParameterSet init_parameters(
    const std::vector<std::pair<std::string, std::vector<int64_t>>>& layout,
    uint64_t seed) {
  ParameterSet out;
  for (const auto& [name, shape] : layout) {
    if (shape.empty()) throw std::invalid_argument("init_parameters: empty shape for " + name);
    Tensor t(shape);
    const double bound = 1.0 / std::sqrt(static_cast<double>(shape.back()));
    RngStream rng(seed, "init/" + name);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    out.add(name, std::move(t));  // throws "duplicate parameter" on repeats
  }
  return out;
}

OptimizerState make_optimizer_state(const ParameterSet& params, AdamWConfig config) {
  OptimizerState st;
  st.step = 0;
  st.m = params.zeros_like();
  st.v = params.zeros_like();
  st.config = config;
  return st;
}

void optimizer_step(ParameterSet& params, const ParameterSet& grads, OptimizerState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("optimizer_step: parameter/gradient count mismatch");
  }
  state.step += 1;
  const AdamWConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));

  for (size_t idx = 0; idx < params.size(); ++idx) {
    auto& [name, p] = params.entries()[idx];
    const auto& [gname, g] = grads.entries()[idx];
    if (gname != name || !p.same_shape(g)) {
      throw std::invalid_argument("optimizer_step: gradient mismatch for " + name);
    }
    if (!g.all_finite()) {
      throw std::runtime_error("optimizer_step: non-finite gradient for " + name);
    }
    Tensor& m = state.m.entries()[idx].second;
    Tensor& v = state.v.entries()[idx].second;
    double* pp = p.data();
    const double* pg = g.data();
    double* pm = m.data();
    double* pv = v.data();
    const int64_t n = p.numel();
    for (int64_t i = 0; i < n; ++i) {
      pm[i] = c.beta1 * pm[i] + (1.0 - c.beta1) * pg[i];
      pv[i] = c.beta2 * pv[i] + (1.0 - c.beta2) * pg[i] * pg[i];
      const double mhat = pm[i] / bc1;
      const double vhat = pv[i] / bc2;
      pp[i] -= c.lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * pp[i]);
    }
  }
  params.check_finite("optimizer_step");
}

double finite_difference_check(const LossFn& loss_fn, const GradFn& grad_fn,
                               const ParameterSet& params, const FdCheckOptions& opts) {
  ParameterSet work = params;
  ParameterSet analytic = grad_fn(params);
  if (analytic.size() != params.size()) {
    throw std::invalid_argument("finite_difference_check: gradient layout mismatch");
  }

  // Flat coordinate index -> (tensor index, element index).
  std::vector<std::pair<size_t, int64_t>> coords;
  for (size_t ti = 0; ti < params.size(); ++ti) {
    for (int64_t ei = 0; ei < params.entries()[ti].second.numel(); ++ei) {
      coords.emplace_back(ti, ei);
    }
  }
  if (static_cast<int>(coords.size()) > opts.max_coords) {
    RngStream rng(opts.seed, "fdcheck");
    rng.shuffle(coords);
    coords.resize(static_cast<size_t>(opts.max_coords));
  }

  const double eps = opts.epsilon;
  double max_rel = 0.0;
  for (const auto& [ti, ei] : coords) {
    Tensor& t = work.entries()[ti].second;
    const double orig = t[ei];
    t[ei] = orig + eps;
    const double lp = loss_fn(work);
    t[ei] = orig - eps;
    const double lm = loss_fn(work);
    t[ei] = orig;
    if (!std::isfinite(lp) || !std::isfinite(lm)) {
      throw std::runtime_error("finite_difference_check: loss returned non-finite value");
    }
    const double g_fd = (lp - lm) / (2.0 * eps);
    const double g_an = analytic.entries()[ti].second[ei];
    const double rel = std::abs(g_an - g_fd) / std::max(1e-12, std::abs(g_an) + std::abs(g_fd));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

namespace {

constexpr char kMagic[] = "AVSC1\n";
constexpr size_t kMagicLen = 6;

void put_u32_le(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

static_assert(sizeof(double) == 8);

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const nlohmann::json& meta) {
  nlohmann::json manifest;
  manifest["meta"] = meta;
  auto& tensors = manifest["tensors"] = nlohmann::json::array();
  int64_t offset = 0;  // byte offset into the payload
  for (const auto& [name, t] : params.entries()) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel() * 8;
  }
  const std::string mjson = manifest.dump();

  std::string out;
  out.append(kMagic, kMagicLen);
  put_u32_le(out, static_cast<uint32_t>(mjson.size()));
  out += mjson;
  for (const auto& [_, t] : params.entries()) {
    const size_t pos = out.size();
    out.resize(pos + static_cast<size_t>(t.numel()) * 8);
    std::memcpy(out.data() + pos, t.data(), static_cast<size_t>(t.numel()) * 8);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::pair<ParameterSet, nlohmann::json> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (bytes.size() < kMagicLen + 4 || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  const unsigned char* lp = reinterpret_cast<const unsigned char*>(bytes.data() + kMagicLen);
  const uint32_t mlen = static_cast<uint32_t>(lp[0]) | (static_cast<uint32_t>(lp[1]) << 8) |
                        (static_cast<uint32_t>(lp[2]) << 16) | (static_cast<uint32_t>(lp[3]) << 24);
  const size_t header = kMagicLen + 4;
  if (bytes.size() < header + mlen) {
    throw std::runtime_error("truncated checkpoint manifest: " + path.string());
  }
  nlohmann::json manifest = nlohmann::json::parse(bytes.substr(header, mlen));
  const char* payload = bytes.data() + header + mlen;
  const size_t payload_size = bytes.size() - header - mlen;

  ParameterSet params;
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::vector<int64_t> shape = entry.at("shape").get<std::vector<int64_t>>();
    const int64_t offset = entry.at("offset").get<int64_t>();
    Tensor t(shape);
    const size_t nbytes = static_cast<size_t>(t.numel()) * 8;
    if (offset < 0 || static_cast<size_t>(offset) + nbytes > payload_size) {
      throw std::runtime_error("checkpoint tensor out of bounds: " + name);
    }
    std::memcpy(t.data(), payload + offset, nbytes);
    params.add(name, std::move(t));
  }
  return {std::move(params), manifest.at("meta")};
}

}  // namespace avs2s
