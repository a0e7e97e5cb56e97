#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "avs2s/nn.hpp"
#include "avs2s/rng.hpp"

using namespace avs2s;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

fs::path temp_file(const char* name) {
  return fs::temp_directory_path() / (std::string("avs2s_nn_") + name);
}

}  // namespace

TEST_CASE("init_parameters is deterministic and bounded") {
  const std::vector<std::pair<std::string, std::vector<int64_t>>> layout = {
      {"w", {2, 2}}, {"b", {4}}};
  ParameterSet a = init_parameters(layout, 7);
  ParameterSet b = init_parameters(layout, 7);
  REQUIRE(a.size() == 2);
  for (size_t i = 0; i < a.size(); ++i) {
    const Tensor& ta = a.entries()[i].second;
    const Tensor& tb = b.entries()[i].second;
    for (int64_t k = 0; k < ta.numel(); ++k) CHECK(ta[k] == tb[k]);
  }
  // fan_in = 4 (last dimension) forces every value into [-0.5, 0.5]
  ParameterSet c = init_parameters({{"w", {8, 4}}}, 3);
  for (int64_t k = 0; k < c.at("w").numel(); ++k) {
    CHECK(std::abs(c.at("w")[k]) <= 0.5);
  }
  CHECK(init_parameters({{"w", {3, 4}}}, 1).at("w")[0] !=
        init_parameters({{"w", {3, 4}}}, 2).at("w")[0]);
}

TEST_CASE("init_parameters rejects duplicate names") {
  CHECK_THROWS_WITH_AS(init_parameters({{"w", {2, 2}}, {"w", {2, 2}}}, 1),
                       "duplicate parameter: w", std::invalid_argument);
}

TEST_CASE("adding a parameter does not perturb existing inits") {
  ParameterSet small = init_parameters({{"w", {3, 3}}}, 11);
  ParameterSet big = init_parameters({{"w", {3, 3}}, {"v", {5, 5}}}, 11);
  for (int64_t k = 0; k < small.at("w").numel(); ++k) {
    CHECK(small.at("w")[k] == big.at("w")[k]);
  }
}

TEST_CASE("optimizer zero-gradient fixed point with zero weight decay") {
  ParameterSet p = init_parameters({{"w", {4}}}, 5);
  ParameterSet before = p;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  OptimizerState st = make_optimizer_state(p, cfg);
  ParameterSet g = p.zeros_like();
  optimizer_step(p, g, st);
  for (int64_t k = 0; k < p.at("w").numel(); ++k) {
    CHECK(p.at("w")[k] == doctest::Approx(before.at("w")[k]).epsilon(1e-15));
  }
  CHECK(st.step == 1);
}

TEST_CASE("adamw first step matches hand-computed update") {
  // independent hand evaluation of bias-corrected AdamW step 1:
  // m_hat = g, v_hat = g^2, delta = lr * g / (|g| + eps)
  const double lr = 2e-4, eps = 1e-8;
  ParameterSet p;
  p.add("w", Tensor::full({1}, 1.0));
  AdamWConfig cfg;
  cfg.lr = lr;
  cfg.eps = eps;
  cfg.weight_decay = 0.0;
  OptimizerState st = make_optimizer_state(p, cfg);
  ParameterSet g;
  g.add("w", Tensor::full({1}, 1.0));
  optimizer_step(p, g, st);
  const double expected = 1.0 - lr * (1.0 / (1.0 + eps));
  CHECK(p.at("w")[0] == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("two adam steps on a convex quadratic shrink the parameter") {
  // oracle: f(p) = p^2 / 2, gradient p
  ParameterSet p;
  p.add("w", Tensor::full({1}, 1.0));
  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  OptimizerState st = make_optimizer_state(p, cfg);
  double prev = std::abs(p.at("w")[0]);
  for (int i = 0; i < 2; ++i) {
    ParameterSet g;
    g.add("w", Tensor::full({1}, p.at("w")[0]));
    optimizer_step(p, g, st);
    const double cur = std::abs(p.at("w")[0]);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("optimizer errors: shape mismatch and non-finite gradient") {
  ParameterSet p = init_parameters({{"w", {2, 2}}}, 1);
  OptimizerState st = make_optimizer_state(p, {});
  ParameterSet bad_shape;
  bad_shape.add("w", Tensor::zeros({3}));
  CHECK_THROWS_AS(optimizer_step(p, bad_shape, st), std::invalid_argument);

  ParameterSet bad_grad = p.zeros_like();
  bad_grad.at("w")[1] = std::numeric_limits<double>::quiet_NaN();
  OptimizerState st2 = make_optimizer_state(p, {});
  CHECK_THROWS_WITH_AS(optimizer_step(p, bad_grad, st2),
                       "optimizer_step: non-finite gradient for w", std::runtime_error);
}

TEST_CASE("optimizer reaches the quadratic minimum") {
  // 200 steps on f(p) = (p-3)^2 from p=0 at lr 0.05
  ParameterSet p;
  p.add("w", Tensor::zeros({1}));
  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  OptimizerState st = make_optimizer_state(p, cfg);
  for (int i = 0; i < 200; ++i) {
    ParameterSet g;
    g.add("w", Tensor::full({1}, 2.0 * (p.at("w")[0] - 3.0)));
    optimizer_step(p, g, st);
  }
  CHECK(std::abs(p.at("w")[0] - 3.0) < 0.1);
}

TEST_CASE("finite differences agree with the analytic gradient of sum(p^2)") {
  ParameterSet p;
  p.add("w", Tensor::row({1.0, 2.0}));
  auto loss = [](const ParameterSet& q) {
    double s = 0.0;
    for (int64_t i = 0; i < q.at("w").numel(); ++i) s += q.at("w")[i] * q.at("w")[i];
    return s;
  };
  auto grad = [](const ParameterSet& q) {
    ParameterSet g = q.zeros_like();
    for (int64_t i = 0; i < q.at("w").numel(); ++i) g.at("w")[i] = 2.0 * q.at("w")[i];
    return g;
  };
  CHECK(finite_difference_check(loss, grad, p) < 1e-8);
}

TEST_CASE("finite difference check rejects non-finite losses") {
  ParameterSet p;
  p.add("w", Tensor::row({1.0}));
  auto loss = [](const ParameterSet&) { return std::numeric_limits<double>::infinity(); };
  auto grad = [](const ParameterSet& q) { return q.zeros_like(); };
  CHECK_THROWS_AS(finite_difference_check(loss, grad, p), std::runtime_error);
}

TEST_CASE("finite difference sub-sampling stays deterministic") {
  ParameterSet p = init_parameters({{"w", {40, 40}}}, 9);  // 1600 coords > 500
  auto loss = [](const ParameterSet& q) {
    double s = 0.0;
    for (int64_t i = 0; i < q.at("w").numel(); ++i) s += std::sin(q.at("w")[i]);
    return s;
  };
  auto grad = [](const ParameterSet& q) {
    ParameterSet g = q.zeros_like();
    for (int64_t i = 0; i < q.at("w").numel(); ++i) g.at("w")[i] = std::cos(q.at("w")[i]);
    return g;
  };
  const double a = finite_difference_check(loss, grad, p);
  const double b = finite_difference_check(loss, grad, p);
  CHECK(a == b);
  CHECK(a < 1e-7);
}

TEST_CASE("checkpoint round-trips bit-exactly and deterministically") {
  ParameterSet p = init_parameters({{"layer.w", {7, 3}}, {"layer.b", {3}}}, 42);
  const auto path = temp_file("roundtrip.ckpt");
  save_checkpoint(path, p, {{"kind", "test"}, {"note", 1}});
  auto [loaded, meta] = load_checkpoint(path);
  CHECK(meta.at("kind") == "test");
  REQUIRE(loaded.size() == p.size());
  for (size_t i = 0; i < p.size(); ++i) {
    CHECK(loaded.entries()[i].first == p.entries()[i].first);
    const Tensor& ta = p.entries()[i].second;
    const Tensor& tb = loaded.entries()[i].second;
    REQUIRE(ta.same_shape(tb));
    for (int64_t k = 0; k < ta.numel(); ++k) CHECK(ta[k] == tb[k]);
  }
  const std::string bytes1 = slurp(path);
  save_checkpoint(path, p, {{"kind", "test"}, {"note", 1}});
  CHECK(bytes1 == slurp(path));
  CHECK(bytes1.substr(0, 6) == "AVSC1\n");
  fs::remove(path);
}

TEST_CASE("checkpoint loader rejects garbage and truncation") {
  const auto path = temp_file("bad.ckpt");
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);

  ParameterSet p = init_parameters({{"w", {4, 4}}}, 1);
  save_checkpoint(path, p, {{"kind", "test"}});
  const std::string bytes = slurp(path);
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << bytes.substr(0, bytes.size() - 8);  // drop one tensor row's bytes
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  fs::remove(path);
}

TEST_CASE("rng streams are independent and reproducible") {
  RngStream a(1, "alpha"), a2(1, "alpha"), b(1, "beta");
  std::vector<uint64_t> va, va2, vb;
  for (int i = 0; i < 16; ++i) {
    va.push_back(a.next_u64());
    va2.push_back(a2.next_u64());
    vb.push_back(b.next_u64());
  }
  CHECK(va == va2);
  CHECK(va != vb);

  RngStream g(3, "gamma_probe");
  double mean = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) mean += g.gamma(0.3);
  mean /= n;
  CHECK(mean == doctest::Approx(0.3).epsilon(0.05));

  RngStream d(4, "dirichlet_probe");
  auto row = d.dirichlet(0.3, 16);
  double sum = 0.0;
  for (double x : row) {
    CHECK(x >= 0.0);
    sum += x;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

  RngStream u(5, "uniform_probe");
  for (int i = 0; i < 1000; ++i) {
    const auto v = u.uniform_int(-3, 3);
    CHECK(v >= -3);
    CHECK(v <= 3);
  }
}
