#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace avs2s {

// Derives a child seed from (seed, label). Same inputs always give the same
// output, and distinct labels give independent streams.
uint64_t derive_seed(uint64_t seed, std::string_view label);

// Counter-based deterministic random stream keyed by (seed, label).
// Consuming from one stream never affects values produced by another,
// so adding a new labelled consumer does not perturb existing ones.
class RngStream {
 public:
  RngStream(uint64_t seed, std::string_view label);

  uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
  int64_t uniform_int(int64_t lo, int64_t hi);
  // Standard normal (Box-Muller, cached spare).
  double gaussian();
  // Gamma(alpha, 1), alpha > 0 (Marsaglia-Tsang).
  double gamma(double alpha);
  // Symmetric Dirichlet(alpha) of dimension n; entries sum to 1.
  std::vector<double> dirichlet(double alpha, int n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace avs2s
