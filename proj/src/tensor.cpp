#include "avs2s/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace avs2s {

namespace {
int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
    n *= d;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::initializer_list<int64_t> shape)
    : Tensor(std::vector<int64_t>(shape)) {}

Tensor Tensor::full(std::vector<int64_t> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::row(const std::vector<double>& values) {
  Tensor t({static_cast<int64_t>(values.size())});
  for (size_t i = 0; i < values.size(); ++i) t[static_cast<int64_t>(i)] = values[i];
  return t;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
  os << "]";
  return os.str();
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double v) {
  for (auto& x : data_) x = v;
}

void Tensor::ensure_zeros(const std::vector<int64_t>& shape) {
  if (shape_ == shape && !data_.empty()) {
    fill(0.0);
  } else {
    shape_ = shape;
    data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
  }
}

void matmul(const Tensor& a, const Tensor& b, Tensor& c, bool trans_a,
            bool trans_b, bool accumulate) {
  const int64_t m = trans_a ? a.cols() : a.rows();
  const int64_t k = trans_a ? a.rows() : a.cols();
  const int64_t kb = trans_b ? b.cols() : b.rows();
  const int64_t n = trans_b ? b.rows() : b.cols();
  if (k != kb) {
    throw std::invalid_argument("matmul: inner dimensions " + a.shape_str() +
                                " x " + b.shape_str() + " do not match");
  }
  if (!accumulate) {
    c.ensure_zeros({m, n});
  } else if (c.rows() != m || c.cols() != n) {
    throw std::invalid_argument("matmul: accumulate target shape mismatch");
  }

  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  const int64_t lda = a.cols();
  const int64_t ldb = b.cols();

  if (!trans_a && !trans_b) {
    for (int64_t i = 0; i < m; ++i) {
      const double* ai = A + i * lda;
      double* ci = C + i * n;
      for (int64_t l = 0; l < k; ++l) {
        const double av = ai[l];
        const double* bl = B + l * ldb;
        for (int64_t j = 0; j < n; ++j) ci[j] += av * bl[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (int64_t i = 0; i < m; ++i) {
      const double* ai = A + i * lda;
      double* ci = C + i * n;
      for (int64_t j = 0; j < n; ++j) {
        const double* bj = B + j * ldb;
        double acc = 0.0;
        for (int64_t l = 0; l < k; ++l) acc += ai[l] * bj[l];
        ci[j] += acc;
      }
    }
  } else if (trans_a && !trans_b) {
    for (int64_t l = 0; l < k; ++l) {
      const double* al = A + l * lda;
      const double* bl = B + l * ldb;
      for (int64_t i = 0; i < m; ++i) {
        const double av = al[i];
        double* ci = C + i * n;
        for (int64_t j = 0; j < n; ++j) ci[j] += av * bl[j];
      }
    }
  } else {
    for (int64_t i = 0; i < m; ++i) {
      double* ci = C + i * n;
      for (int64_t j = 0; j < n; ++j) {
        const double* bj = B + j * ldb;
        double acc = 0.0;
        for (int64_t l = 0; l < k; ++l) acc += A[l * lda + i] * bj[l];
        ci[j] += acc;
      }
    }
  }
}

void add_inplace(Tensor& a, const Tensor& b, double scale) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("add_inplace: shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  }
  double* pa = a.data();
  const double* pb = b.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) pa[i] += scale * pb[i];
}

}  // namespace avs2s
