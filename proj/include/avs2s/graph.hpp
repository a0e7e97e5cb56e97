#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "avs2s/nn.hpp"
#include "avs2s/tensor.hpp"

namespace avs2s::ad {

// Reverse-mode tape over Tensor values. Nodes are created in topological
// order, so backward() is a single reverse sweep. The tape owns all nodes;
// reset() drops the graph but keeps leaf bindings out of scope.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::function<void(Node&)> backprop;  // pushes grad into parents

  Tensor& grad_ref() {
    if (grad.empty()) grad.ensure_zeros(value.shape());
    return grad;
  }
};

using Var = Node*;

class Tape {
 public:
  Var constant(Tensor v);
  Var leaf(const Tensor& v);  // trainable input; grad is tracked

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);                 // elementwise
  Var affine(Var a, double k, double c); // k*a + c
  Var mul_const(Var a, Tensor weights);  // elementwise with a constant
  Var add_const(Var a, const Tensor& c);
  Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
  Var add_row(Var a, Var bias);          // broadcast bias over rows
  Var relu(Var a);
  Var log(Var a);
  Var exp(Var a);
  Var clamp(Var a, double lo, double hi);
  Var sum(Var a);
  Var mean(Var a);
  Var row_softmax(Var a, const Tensor* additive_mask = nullptr);
  Var l2_normalize_rows(Var a, double eps = 1e-12);
  Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-5);
  Var gather_rows(Var table, std::vector<int> indices);
  Var concat_cols(Var a, Var b);
  Var slice_cols(Var a, int64_t c0, int64_t c1);
  Var rowwise_dot(Var a, Var b);  // [m,n],[m,n] -> [m]
  // Mean cross-entropy of row-wise logits against integer targets.
  Var cross_entropy(Var logits, std::vector<int> targets);
  // Gaussian soft duration expansion: rows of `embeddings` placed at centers
  // derived from exp(log_durations), blended over `total_frames` output rows.
  Var soft_expand(Var embeddings, Var log_durations, int total_frames, double sigma);
  // Sliding windows of `width` consecutive rows, flattened: [N, width*cols].
  Var stack_windows(Var track, std::vector<int> starts, int width);

  void backward(Var loss);
  void reset();
  size_t size() const { return nodes_.size(); }

 private:
  Var make(Tensor value, bool requires_grad, std::function<void(Node&)> backprop);
  std::deque<Node> nodes_;
};

// Binds a ParameterSet to tape leaves so models can build graphs uniformly
// and pull accumulated gradients back out by name.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, const ParameterSet& params);
  Var operator[](const std::string& name) const;
  // grads_out += d(loss)/d(param) * scale for every bound parameter.
  void accumulate_grads(ParameterSet& grads_out, double scale = 1.0) const;

 private:
  std::vector<std::pair<std::string, Var>> vars_;
};

}  // namespace avs2s::ad
