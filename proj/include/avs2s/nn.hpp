#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "avs2s/tensor.hpp"

namespace avs2s {

// Ordered collection of named tensors. Iteration follows insertion order,
// which the checkpoint format and optimizer rely on.
class ParameterSet {
 public:
  void add(const std::string& name, Tensor t);
  bool has(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }
  size_t size() const { return entries_.size(); }
  int64_t total_values() const;

  // Zero-filled copy with the same names and shapes.
  ParameterSet zeros_like() const;
  void fill(double v);
  void check_finite(const std::string& context) const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Values drawn uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] with fan_in the
// last dimension, from a stream keyed by (seed, name); adding a tensor to the
// layout never changes the values of the others.
ParameterSet init_parameters(
    const std::vector<std::pair<std::string, std::vector<int64_t>>>& layout,
    uint64_t seed);

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct OptimizerState {
  int64_t step = 0;
  ParameterSet m;
  ParameterSet v;
  AdamWConfig config;
};

OptimizerState make_optimizer_state(const ParameterSet& params, AdamWConfig config);

// Decoupled-weight-decay Adam with bias correction. Throws on shape mismatch
// or non-finite gradients (naming the parameter); guarantees finite params
// after the update.
void optimizer_step(ParameterSet& params, const ParameterSet& grads, OptimizerState& state);

struct FdCheckOptions {
  double epsilon = 1e-5;
  int max_coords = 500;  // sub-sample above this many coordinates
  uint64_t seed = 0;     // sub-sampling seed
};

using LossFn = std::function<double(const ParameterSet&)>;
using GradFn = std::function<ParameterSet(const ParameterSet&)>;

// Central-difference check of grad_fn against loss_fn. Returns the max over
// checked coordinates of |g_an - g_fd| / max(1e-12, |g_an| + |g_fd|).
double finite_difference_check(const LossFn& loss_fn, const GradFn& grad_fn,
                               const ParameterSet& params,
                               const FdCheckOptions& opts = {});

// Checkpoint container format: magic "AVSC1\n", 4-byte LE manifest length,
// UTF-8 JSON manifest, then contiguous little-endian float64 payload.
void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const nlohmann::json& meta);
std::pair<ParameterSet, nlohmann::json> load_checkpoint(const std::filesystem::path& path);

}  // namespace avs2s
