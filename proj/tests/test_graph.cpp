#include <doctest.h>

#include <cmath>
#include <functional>

#include "avs2s/graph.hpp"
#include "avs2s/nn.hpp"
#include "avs2s/rng.hpp"

using namespace avs2s;

namespace {

// Wraps a graph-building function into the finite-difference harness.
// builder(tape, binder) must return the scalar loss node.
double fd_for(const ParameterSet& params,
              const std::function<ad::Var(ad::Tape&, const ad::ParamBinder&)>& builder,
              double epsilon = 1e-6) {
  auto loss = [&](const ParameterSet& p) {
    ad::Tape tape;
    ad::ParamBinder binder(tape, p);
    return builder(tape, binder)->value[0];
  };
  auto grad = [&](const ParameterSet& p) {
    ad::Tape tape;
    ad::ParamBinder binder(tape, p);
    ad::Var l = builder(tape, binder);
    tape.backward(l);
    ParameterSet g = p.zeros_like();
    binder.accumulate_grads(g);
    return g;
  };
  FdCheckOptions opts;
  opts.epsilon = epsilon;
  return finite_difference_check(loss, grad, params, opts);
}

ParameterSet random_params(const std::vector<std::pair<std::string, std::vector<int64_t>>>& layout,
                           uint64_t seed) {
  return init_parameters(layout, seed);
}

}  // namespace

TEST_CASE("elementwise and reduction ops pass gradient checks") {
  ParameterSet p = random_params({{"a", {3, 4}}, {"b", {3, 4}}}, 1);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          return t.mean(t.mul(t.add(b["a"], b["b"]), t.sub(b["a"], b["b"])));
        }) < 1e-8);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          return t.sum(t.relu(t.affine(b["a"], 2.0, -0.1)));
        }) < 1e-6);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          return t.mean(t.exp(t.affine(b["a"], 0.5, 0.0)));
        }) < 1e-8);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          return t.mean(t.log(t.affine(t.mul(b["a"], b["a"]), 1.0, 0.5)));
        }) < 1e-7);
}

TEST_CASE("matmul gradients cover all transpose combinations") {
  ParameterSet p = random_params({{"a", {3, 5}}, {"b", {5, 4}}, {"c", {4, 5}}, {"d", {5, 3}}}, 2);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          return t.mean(t.matmul(b["a"], b["b"]));
        }) < 1e-8);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          return t.mean(t.matmul(b["a"], b["c"], false, true));
        }) < 1e-8);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          return t.mean(t.matmul(b["d"], b["b"], true, false));
        }) < 1e-8);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          return t.mean(t.matmul(b["d"], b["c"], true, true));
        }) < 1e-8);
}

TEST_CASE("structured ops pass gradient checks") {
  ParameterSet p = random_params(
      {{"table", {6, 4}}, {"x", {5, 4}}, {"bias", {4}}, {"g", {4}}, {"track", {12, 3}}}, 3);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          return t.mean(t.gather_rows(b["table"], {0, 2, 2, 5}));
        }) < 1e-8);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          return t.mean(t.add_row(b["x"], b["bias"]));
        }) < 1e-8);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          return t.mean(t.concat_cols(b["x"], t.slice_cols(b["x"], 1, 3)));
        }) < 1e-8);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          return t.mean(t.rowwise_dot(b["x"], b["x"]));
        }) < 1e-8);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          return t.mean(t.stack_windows(b["track"], {0, 3, 7}, 5));
        }) < 1e-8);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          return t.mean(t.layer_norm(b["x"], b["g"], b["bias"]));
        }, 1e-7) < 1e-5);
}

TEST_CASE("softmax, normalize and cross entropy pass gradient checks") {
  ParameterSet p = random_params({{"x", {4, 6}}}, 4);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          Tensor mask({4, 6});
          mask.at(0, 5) = -1e30;
          ad::Var sm = t.row_softmax(b["x"], &mask);
          return t.mean(t.mul(sm, sm));
        }) < 1e-7);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          ad::Var y = t.l2_normalize_rows(b["x"]);
          return t.mean(t.mul(y, t.exp(y)));
        }) < 1e-7);
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          return t.cross_entropy(b["x"], {1, 0, 5, 3});
        }) < 1e-7);
}

TEST_CASE("row softmax rows sum to one") {
  ad::Tape tape;
  ParameterSet p = random_params({{"x", {7, 9}}}, 5);
  ad::Var sm = tape.row_softmax(tape.leaf(p.at("x")));
  for (int64_t r = 0; r < 7; ++r) {
    double s = 0.0;
    for (int64_t c = 0; c < 9; ++c) s += sm->value.at(r, c);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("clamp blocks gradients outside the active range") {
  ParameterSet p;
  p.add("x", Tensor::row({-2.0, 0.5, 2.0}));
  ad::Tape tape;
  ad::ParamBinder binder(tape, p);
  ad::Var loss = tape.sum(tape.clamp(binder["x"], 0.0, 1.0));
  tape.backward(loss);
  ParameterSet g = p.zeros_like();
  binder.accumulate_grads(g);
  CHECK(g.at("x")[0] == 0.0);
  CHECK(g.at("x")[1] == 1.0);
  CHECK(g.at("x")[2] == 0.0);
}

TEST_CASE("soft_expand single row broadcasts to every frame") {
  ad::Tape tape;
  Tensor emb({1, 3});
  emb.at(0, 0) = 0.3;
  emb.at(0, 1) = -1.0;
  emb.at(0, 2) = 2.0;
  Tensor ld({1});
  ld[0] = std::log(4.0);
  ad::Var out = tape.soft_expand(tape.constant(emb), tape.constant(ld), 6, 1.0);
  REQUIRE(out->value.rows() == 6);
  for (int64_t t = 0; t < 6; ++t) {
    for (int64_t c = 0; c < 3; ++c) {
      CHECK(out->value.at(t, c) == doctest::Approx(emb.at(0, c)).epsilon(1e-12));
    }
  }
}

TEST_CASE("soft_expand centers follow the cumulative-duration formula") {
  // durations [2,4]: centers at 1.0 and 4.0 (hand-evaluated)
  ad::Tape tape;
  Tensor emb({2, 1});
  emb.at(0, 0) = 0.0;
  emb.at(1, 0) = 1.0;
  Tensor ld({2});
  ld[0] = std::log(2.0);
  ld[1] = std::log(4.0);
  ad::Var out = tape.soft_expand(tape.constant(emb), tape.constant(ld), 6, 0.25);
  // with a sharp kernel, frame 1 (t+0.5 = 1.5) is dominated by center 1.0,
  // frame 4 (t+0.5 = 4.5) by center 4.0
  CHECK(out->value.at(1, 0) < 0.05);
  CHECK(out->value.at(4, 0) > 0.95);
  // weight rows sum to 1: a constant embedding column would be preserved
  Tensor ones({2, 1});
  ones.fill(1.0);
  ad::Tape tape2;
  ad::Var out2 = tape2.soft_expand(tape2.constant(ones), tape2.constant(ld), 6, 1.0);
  for (int64_t t = 0; t < 6; ++t) {
    CHECK(out2->value.at(t, 0) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("soft_expand gradients pass the finite-difference harness") {
  ParameterSet p = random_params({{"emb", {4, 3}}, {"ld", {4}}}, 6);
  for (int64_t i = 0; i < 4; ++i) p.at("ld")[i] += std::log(3.0);  // keep durations ~3 frames
  CHECK(fd_for(p, [](ad::Tape& t, const ad::ParamBinder& b) {
          ad::Var x = t.soft_expand(b["emb"], b["ld"], 12, 1.0);
          return t.mean(t.mul(x, x));
        }) < 1e-7);
}

TEST_CASE("soft_expand rejects non-finite durations") {
  ad::Tape tape;
  Tensor emb({2, 3});
  Tensor ld({2});
  ld[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(tape.soft_expand(tape.constant(emb), tape.constant(ld), 5, 1.0),
                  std::runtime_error);
}

TEST_CASE("backward accumulates into shared sub-expressions") {
  // f(x) = sum(x * x) via the same node twice: df/dx = 2x
  ParameterSet p;
  p.add("x", Tensor::row({1.5, -2.0}));
  ad::Tape tape;
  ad::ParamBinder binder(tape, p);
  ad::Var x = binder["x"];
  ad::Var loss = tape.sum(tape.mul(x, x));
  tape.backward(loss);
  ParameterSet g = p.zeros_like();
  binder.accumulate_grads(g);
  CHECK(g.at("x")[0] == doctest::Approx(3.0));
  CHECK(g.at("x")[1] == doctest::Approx(-4.0));
}
