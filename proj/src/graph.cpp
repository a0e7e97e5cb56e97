#include "avs2s/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace avs2s::ad {

namespace {
void check_same_shape(const Var a, const Var b, const char* op) {
  if (!a->value.same_shape(b->value)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a->value.shape_str() + " vs " + b->value.shape_str());
  }
}
}  // namespace

Var Tape::make(Tensor value, bool requires_grad, std::function<void(Node&)> backprop) {
  nodes_.emplace_back();
  Node& n = nodes_.back();
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(backprop);
  return &n;
}

Var Tape::constant(Tensor v) { return make(std::move(v), false, nullptr); }

Var Tape::leaf(const Tensor& v) { return make(v, true, nullptr); }

Var Tape::add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  add_inplace(out, b->value);
  return make(std::move(out), a->requires_grad || b->requires_grad, [a, b](Node& n) {
    if (a->requires_grad) add_inplace(a->grad_ref(), n.grad);
    if (b->requires_grad) add_inplace(b->grad_ref(), n.grad);
  });
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  add_inplace(out, b->value, -1.0);
  return make(std::move(out), a->requires_grad || b->requires_grad, [a, b](Node& n) {
    if (a->requires_grad) add_inplace(a->grad_ref(), n.grad);
    if (b->requires_grad) add_inplace(b->grad_ref(), n.grad, -1.0);
  });
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return make(std::move(out), a->requires_grad || b->requires_grad, [a, b](Node& n) {
    const int64_t m = n.value.numel();
    if (a->requires_grad) {
      Tensor& ga = a->grad_ref();
      for (int64_t i = 0; i < m; ++i) ga[i] += n.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      Tensor& gb = b->grad_ref();
      for (int64_t i = 0; i < m; ++i) gb[i] += n.grad[i] * a->value[i];
    }
  });
}

Var Tape::affine(Var a, double k, double c) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = k * out[i] + c;
  return make(std::move(out), a->requires_grad, [a, k](Node& n) {
    if (a->requires_grad) add_inplace(a->grad_ref(), n.grad, k);
  });
}

Var Tape::mul_const(Var a, Tensor weights) {
  if (!a->value.same_shape(weights)) throw std::invalid_argument("mul_const: shape mismatch");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= weights[i];
  return make(std::move(out), a->requires_grad, [a, w = std::move(weights)](Node& n) {
    if (!a->requires_grad) return;
    Tensor& ga = a->grad_ref();
    for (int64_t i = 0; i < n.value.numel(); ++i) ga[i] += n.grad[i] * w[i];
  });
}

Var Tape::add_const(Var a, const Tensor& c) {
  if (!a->value.same_shape(c)) throw std::invalid_argument("add_const: shape mismatch");
  Tensor out = a->value;
  add_inplace(out, c);
  return make(std::move(out), a->requires_grad, [a](Node& n) {
    if (a->requires_grad) add_inplace(a->grad_ref(), n.grad);
  });
}

Var Tape::matmul(Var a, Var b, bool trans_a, bool trans_b) {
  Tensor out;
  avs2s::matmul(a->value, b->value, out, trans_a, trans_b);
  return make(std::move(out), a->requires_grad || b->requires_grad,
              [a, b, trans_a, trans_b](Node& n) {
                // C = op(A)op(B); propagate through each transpose case.
                if (a->requires_grad) {
                  if (!trans_a) {
                    avs2s::matmul(n.grad, b->value, a->grad_ref(), false, !trans_b, true);
                  } else {
                    avs2s::matmul(b->value, n.grad, a->grad_ref(), trans_b, true, true);
                  }
                }
                if (b->requires_grad) {
                  if (!trans_b) {
                    avs2s::matmul(a->value, n.grad, b->grad_ref(), !trans_a, false, true);
                  } else {
                    avs2s::matmul(n.grad, a->value, b->grad_ref(), true, trans_a, true);
                  }
                }
              });
}

Var Tape::add_row(Var a, Var bias) {
  const int64_t rows = a->value.rows(), cols = a->value.cols();
  if (bias->value.numel() != cols) throw std::invalid_argument("add_row: bias size mismatch");
  Tensor out = a->value;
  for (int64_t r = 0; r < rows; ++r) {
    double* p = out.row_ptr(r);
    for (int64_t c = 0; c < cols; ++c) p[c] += bias->value[c];
  }
  return make(std::move(out), a->requires_grad || bias->requires_grad, [a, bias](Node& n) {
    if (a->requires_grad) add_inplace(a->grad_ref(), n.grad);
    if (bias->requires_grad) {
      Tensor& gb = bias->grad_ref();
      const int64_t rows = n.value.rows(), cols = n.value.cols();
      for (int64_t r = 0; r < rows; ++r) {
        const double* g = n.grad.row_ptr(r);
        for (int64_t c = 0; c < cols; ++c) gb[c] += g[c];
      }
    }
  });
}

Var Tape::relu(Var a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, out[i]);
  return make(std::move(out), a->requires_grad, [a](Node& n) {
    if (!a->requires_grad) return;
    Tensor& ga = a->grad_ref();
    for (int64_t i = 0; i < n.value.numel(); ++i) {
      if (a->value[i] > 0.0) ga[i] += n.grad[i];
    }
  });
}

Var Tape::log(Var a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
  return make(std::move(out), a->requires_grad, [a](Node& n) {
    if (!a->requires_grad) return;
    Tensor& ga = a->grad_ref();
    for (int64_t i = 0; i < n.value.numel(); ++i) ga[i] += n.grad[i] / a->value[i];
  });
}

Var Tape::exp(Var a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  return make(std::move(out), a->requires_grad, [a](Node& n) {
    if (!a->requires_grad) return;
    Tensor& ga = a->grad_ref();
    for (int64_t i = 0; i < n.value.numel(); ++i) ga[i] += n.grad[i] * n.value[i];
  });
}

Var Tape::clamp(Var a, double lo, double hi) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(out[i], lo, hi);
  return make(std::move(out), a->requires_grad, [a, lo, hi](Node& n) {
    if (!a->requires_grad) return;
    Tensor& ga = a->grad_ref();
    for (int64_t i = 0; i < n.value.numel(); ++i) {
      if (a->value[i] > lo && a->value[i] < hi) ga[i] += n.grad[i];
    }
  });
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  Tensor out({1});
  out[0] = s;
  return make(std::move(out), a->requires_grad, [a](Node& n) {
    if (a->requires_grad) {
      Tensor& ga = a->grad_ref();
      const double g = n.grad[0];
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    }
  });
}

Var Tape::mean(Var a) {
  const double inv = 1.0 / static_cast<double>(a->value.numel());
  double s = 0.0;
  for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  Tensor out({1});
  out[0] = s * inv;
  return make(std::move(out), a->requires_grad, [a, inv](Node& n) {
    if (a->requires_grad) {
      Tensor& ga = a->grad_ref();
      const double g = n.grad[0] * inv;
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    }
  });
}

Var Tape::row_softmax(Var a, const Tensor* additive_mask) {
  const int64_t rows = a->value.rows(), cols = a->value.cols();
  Tensor out = a->value;
  if (additive_mask) {
    if (!out.same_shape(*additive_mask)) {
      throw std::invalid_argument("row_softmax: mask shape mismatch");
    }
    add_inplace(out, *additive_mask);
  }
  for (int64_t r = 0; r < rows; ++r) {
    double* p = out.row_ptr(r);
    double mx = p[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, p[c]);
    double z = 0.0;
    for (int64_t c = 0; c < cols; ++c) {
      p[c] = std::exp(p[c] - mx);
      z += p[c];
    }
    for (int64_t c = 0; c < cols; ++c) p[c] /= z;
  }
  return make(std::move(out), a->requires_grad, [a](Node& n) {
    if (!a->requires_grad) return;
    Tensor& ga = a->grad_ref();
    const int64_t rows = n.value.rows(), cols = n.value.cols();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = n.value.row_ptr(r);
      const double* g = n.grad.row_ptr(r);
      double dot = 0.0;
      for (int64_t c = 0; c < cols; ++c) dot += y[c] * g[c];
      double* out_g = ga.row_ptr(r);
      for (int64_t c = 0; c < cols; ++c) out_g[c] += y[c] * (g[c] - dot);
    }
  });
}

Var Tape::l2_normalize_rows(Var a, double eps) {
  const int64_t rows = a->value.rows(), cols = a->value.cols();
  Tensor out = a->value;
  Tensor norms({rows});
  for (int64_t r = 0; r < rows; ++r) {
    double* p = out.row_ptr(r);
    double s = 0.0;
    for (int64_t c = 0; c < cols; ++c) s += p[c] * p[c];
    const double nrm = std::sqrt(s) + eps;
    norms[r] = nrm;
    for (int64_t c = 0; c < cols; ++c) p[c] /= nrm;
  }
  return make(std::move(out), a->requires_grad, [a, norms](Node& n) {
    if (!a->requires_grad) return;
    Tensor& ga = a->grad_ref();
    const int64_t rows = n.value.rows(), cols = n.value.cols();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = n.value.row_ptr(r);
      const double* g = n.grad.row_ptr(r);
      double dot = 0.0;
      for (int64_t c = 0; c < cols; ++c) dot += y[c] * g[c];
      double* out_g = ga.row_ptr(r);
      for (int64_t c = 0; c < cols; ++c) out_g[c] += (g[c] - y[c] * dot) / norms[r];
    }
  });
}

Var Tape::layer_norm(Var a, Var gain, Var bias, double eps) {
  const int64_t rows = a->value.rows(), cols = a->value.cols();
  if (gain->value.numel() != cols || bias->value.numel() != cols) {
    throw std::invalid_argument("layer_norm: gain/bias size mismatch");
  }
  Tensor xhat({rows, cols});
  Tensor inv_sigma({rows});
  Tensor out({rows, cols});
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a->value.row_ptr(r);
    double mu = 0.0;
    for (int64_t c = 0; c < cols; ++c) mu += x[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t c = 0; c < cols; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = is;
    double* xh = xhat.row_ptr(r);
    double* o = out.row_ptr(r);
    for (int64_t c = 0; c < cols; ++c) {
      xh[c] = (x[c] - mu) * is;
      o[c] = xh[c] * gain->value[c] + bias->value[c];
    }
  }
  const bool rg = a->requires_grad || gain->requires_grad || bias->requires_grad;
  return make(std::move(out), rg, [a, gain, bias, xhat, inv_sigma](Node& n) {
    const int64_t rows = n.value.rows(), cols = n.value.cols();
    const double inv_cols = 1.0 / static_cast<double>(cols);
    for (int64_t r = 0; r < rows; ++r) {
      const double* g = n.grad.row_ptr(r);
      const double* xh = xhat.row_ptr(r);
      if (gain->requires_grad) {
        Tensor& gg = gain->grad_ref();
        for (int64_t c = 0; c < cols; ++c) gg[c] += g[c] * xh[c];
      }
      if (bias->requires_grad) {
        Tensor& gb = bias->grad_ref();
        for (int64_t c = 0; c < cols; ++c) gb[c] += g[c];
      }
      if (a->requires_grad) {
        double mean_gx = 0.0, mean_gxx = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
          const double gx = g[c] * gain->value[c];
          mean_gx += gx;
          mean_gxx += gx * xh[c];
        }
        mean_gx *= inv_cols;
        mean_gxx *= inv_cols;
        double* out_g = a->grad_ref().row_ptr(r);
        for (int64_t c = 0; c < cols; ++c) {
          const double gx = g[c] * gain->value[c];
          out_g[c] += inv_sigma[r] * (gx - mean_gx - xh[c] * mean_gxx);
        }
      }
    }
  });
}

Var Tape::gather_rows(Var table, std::vector<int> indices) {
  const int64_t cols = table->value.cols();
  const int64_t rows = table->value.rows();
  Tensor out({static_cast<int64_t>(indices.size()), cols});
  for (size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= rows) throw std::out_of_range("gather_rows: index out of range");
    std::copy_n(table->value.row_ptr(idx), cols, out.row_ptr(static_cast<int64_t>(i)));
  }
  return make(std::move(out), table->requires_grad,
              [table, indices = std::move(indices)](Node& n) {
                if (!table->requires_grad) return;
                Tensor& gt = table->grad_ref();
                const int64_t cols = n.value.cols();
                for (size_t i = 0; i < indices.size(); ++i) {
                  const double* g = n.grad.row_ptr(static_cast<int64_t>(i));
                  double* t = gt.row_ptr(indices[i]);
                  for (int64_t c = 0; c < cols; ++c) t[c] += g[c];
                }
              });
}

Var Tape::concat_cols(Var a, Var b) {
  const int64_t rows = a->value.rows();
  if (b->value.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
  const int64_t ca = a->value.cols(), cb = b->value.cols();
  Tensor out({rows, ca + cb});
  for (int64_t r = 0; r < rows; ++r) {
    std::copy_n(a->value.row_ptr(r), ca, out.row_ptr(r));
    std::copy_n(b->value.row_ptr(r), cb, out.row_ptr(r) + ca);
  }
  return make(std::move(out), a->requires_grad || b->requires_grad, [a, b, ca, cb](Node& n) {
    const int64_t rows = n.value.rows();
    for (int64_t r = 0; r < rows; ++r) {
      const double* g = n.grad.row_ptr(r);
      if (a->requires_grad) {
        double* ga = a->grad_ref().row_ptr(r);
        for (int64_t c = 0; c < ca; ++c) ga[c] += g[c];
      }
      if (b->requires_grad) {
        double* gb = b->grad_ref().row_ptr(r);
        for (int64_t c = 0; c < cb; ++c) gb[c] += g[ca + c];
      }
    }
  });
}

Var Tape::slice_cols(Var a, int64_t c0, int64_t c1) {
  const int64_t rows = a->value.rows(), cols = a->value.cols();
  if (c0 < 0 || c1 > cols || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
  Tensor out({rows, c1 - c0});
  for (int64_t r = 0; r < rows; ++r) {
    std::copy_n(a->value.row_ptr(r) + c0, c1 - c0, out.row_ptr(r));
  }
  return make(std::move(out), a->requires_grad, [a, c0](Node& n) {
    if (!a->requires_grad) return;
    Tensor& ga = a->grad_ref();
    const int64_t rows = n.value.rows(), w = n.value.cols();
    for (int64_t r = 0; r < rows; ++r) {
      const double* g = n.grad.row_ptr(r);
      double* t = ga.row_ptr(r) + c0;
      for (int64_t c = 0; c < w; ++c) t[c] += g[c];
    }
  });
}

Var Tape::rowwise_dot(Var a, Var b) {
  check_same_shape(a, b, "rowwise_dot");
  const int64_t rows = a->value.rows(), cols = a->value.cols();
  Tensor out({rows});
  for (int64_t r = 0; r < rows; ++r) {
    const double* pa = a->value.row_ptr(r);
    const double* pb = b->value.row_ptr(r);
    double s = 0.0;
    for (int64_t c = 0; c < cols; ++c) s += pa[c] * pb[c];
    out[r] = s;
  }
  return make(std::move(out), a->requires_grad || b->requires_grad, [a, b](Node& n) {
    const int64_t rows = a->value.rows(), cols = a->value.cols();
    for (int64_t r = 0; r < rows; ++r) {
      const double g = n.grad[r];
      if (a->requires_grad) {
        double* ga = a->grad_ref().row_ptr(r);
        const double* pb = b->value.row_ptr(r);
        for (int64_t c = 0; c < cols; ++c) ga[c] += g * pb[c];
      }
      if (b->requires_grad) {
        double* gb = b->grad_ref().row_ptr(r);
        const double* pa = a->value.row_ptr(r);
        for (int64_t c = 0; c < cols; ++c) gb[c] += g * pa[c];
      }
    }
  });
}

Var Tape::cross_entropy(Var logits, std::vector<int> targets) {
  const int64_t rows = logits->value.rows(), cols = logits->value.cols();
  if (static_cast<int64_t>(targets.size()) != rows) {
    throw std::invalid_argument("cross_entropy: target count mismatch");
  }
  Tensor probs({rows, cols});
  double loss = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = logits->value.row_ptr(r);
    double mx = x[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double z = 0.0;
    double* p = probs.row_ptr(r);
    for (int64_t c = 0; c < cols; ++c) {
      p[c] = std::exp(x[c] - mx);
      z += p[c];
    }
    for (int64_t c = 0; c < cols; ++c) p[c] /= z;
    const int t = targets[static_cast<size_t>(r)];
    if (t < 0 || t >= cols) throw std::out_of_range("cross_entropy: target out of range");
    loss -= std::log(std::max(p[t], 1e-300));
  }
  Tensor out({1});
  out[0] = loss / static_cast<double>(rows);
  return make(std::move(out), logits->requires_grad,
              [logits, probs, targets = std::move(targets)](Node& n) {
                if (!logits->requires_grad) return;
                Tensor& gl = logits->grad_ref();
                const int64_t rows = probs.rows(), cols = probs.cols();
                const double g = n.grad[0] / static_cast<double>(rows);
                for (int64_t r = 0; r < rows; ++r) {
                  const double* p = probs.row_ptr(r);
                  double* out_g = gl.row_ptr(r);
                  for (int64_t c = 0; c < cols; ++c) out_g[c] += g * p[c];
                  out_g[targets[static_cast<size_t>(r)]] -= g;
                }
              });
}

Var Tape::soft_expand(Var embeddings, Var log_durations, int total_frames, double sigma) {
  const int64_t L = embeddings->value.rows();
  const int64_t D = embeddings->value.cols();
  if (log_durations->value.numel() != L) {
    throw std::invalid_argument("soft_expand: log_durations length mismatch");
  }
  if (total_frames < 1 || L < 1 || sigma <= 0.0) {
    throw std::invalid_argument("soft_expand: invalid arguments");
  }
  if (!log_durations->value.all_finite()) {
    throw std::runtime_error("soft_expand: non-finite durations");
  }
  const int64_t T = total_frames;

  Tensor dur({L});
  Tensor centers({L});
  double cum = 0.0;
  for (int64_t i = 0; i < L; ++i) {
    dur[i] = std::exp(log_durations->value[i]);
    cum += dur[i];
    centers[i] = cum - dur[i] / 2.0;
  }

  // weights[t,i] = softmax_i( -(t + 0.5 - c_i)^2 / (2 sigma^2) )
  Tensor weights({T, L});
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (int64_t t = 0; t < T; ++t) {
    double* w = weights.row_ptr(t);
    double mx = -1e300;
    for (int64_t i = 0; i < L; ++i) {
      const double d = (static_cast<double>(t) + 0.5) - centers[i];
      w[i] = -d * d * inv2s2;
      mx = std::max(mx, w[i]);
    }
    double z = 0.0;
    for (int64_t i = 0; i < L; ++i) {
      w[i] = std::exp(w[i] - mx);
      z += w[i];
    }
    for (int64_t i = 0; i < L; ++i) w[i] /= z;
  }

  Tensor out;
  avs2s::matmul(weights, embeddings->value, out);

  return make(std::move(out), embeddings->requires_grad || log_durations->requires_grad,
              [embeddings, log_durations, weights, dur, centers, inv2s2](Node& n) {
                const int64_t T = weights.rows(), L = weights.cols();
                if (embeddings->requires_grad) {
                  avs2s::matmul(weights, n.grad, embeddings->grad_ref(), true, false, true);
                }
                if (!log_durations->requires_grad) return;
                // dL/ds_ti through the softmax, then to centers, durations, logs.
                Tensor gdot;  // [T,L]: upstream grad dotted with embedding rows
                avs2s::matmul(n.grad, embeddings->value, gdot, false, true);
                Tensor dc({L});
                for (int64_t t = 0; t < T; ++t) {
                  const double* w = weights.row_ptr(t);
                  const double* gd = gdot.row_ptr(t);
                  double wg = 0.0;
                  for (int64_t i = 0; i < L; ++i) wg += w[i] * gd[i];
                  for (int64_t i = 0; i < L; ++i) {
                    const double ds = w[i] * (gd[i] - wg);
                    const double diff = (static_cast<double>(t) + 0.5) - centers[i];
                    dc[i] += ds * diff * 2.0 * inv2s2;  // d s/d c = 2*(t+0.5-c)/(2 sigma^2)
                  }
                }
                // c_i = sum_{j<=i} d_j - d_i/2  =>  dd_j = sum_{i>j} dc_i + dc_j/2
                Tensor& gld = log_durations->grad_ref();
                double suffix = 0.0;
                for (int64_t j = L - 1; j >= 0; --j) {
                  const double dd = suffix + 0.5 * dc[j];
                  gld[j] += dd * dur[j];
                  suffix += dc[j];
                }
              });
}

Var Tape::stack_windows(Var track, std::vector<int> starts, int width) {
  const int64_t T = track->value.rows(), C = track->value.cols();
  Tensor out({static_cast<int64_t>(starts.size()), static_cast<int64_t>(width) * C});
  for (size_t i = 0; i < starts.size(); ++i) {
    const int s = starts[i];
    if (s < 0 || s + width > T) throw std::out_of_range("stack_windows: window out of range");
    std::copy_n(track->value.row_ptr(s), static_cast<size_t>(width) * C,
                out.row_ptr(static_cast<int64_t>(i)));
  }
  return make(std::move(out), track->requires_grad,
              [track, starts = std::move(starts), width](Node& n) {
                if (!track->requires_grad) return;
                Tensor& gt = track->grad_ref();
                const int64_t C = track->value.cols();
                const int64_t w = static_cast<int64_t>(width) * C;
                for (size_t i = 0; i < starts.size(); ++i) {
                  const double* g = n.grad.row_ptr(static_cast<int64_t>(i));
                  double* t = gt.row_ptr(starts[i]);
                  for (int64_t c = 0; c < w; ++c) t[c] += g[c];
                }
              });
}

void Tape::backward(Var loss) {
  if (loss->value.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar");
  }
  loss->grad_ref()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = *it;
    if (n.requires_grad && n.backprop && !n.grad.empty()) n.backprop(n);
  }
}

void Tape::reset() { nodes_.clear(); }

ParamBinder::ParamBinder(Tape& tape, const ParameterSet& params) {
  for (const auto& [name, t] : params.entries()) {
    vars_.emplace_back(name, tape.leaf(t));
  }
}

Var ParamBinder::operator[](const std::string& name) const {
  for (const auto& [n, v] : vars_) {
    if (n == name) return v;
  }
  throw std::out_of_range("no bound parameter named " + name);
}

void ParamBinder::accumulate_grads(ParameterSet& grads_out, double scale) const {
  for (const auto& [name, v] : vars_) {
    if (!v->grad.empty()) add_inplace(grads_out.at(name), v->grad, scale);
  }
}

}  // namespace avs2s::ad
