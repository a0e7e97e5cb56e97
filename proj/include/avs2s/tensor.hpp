#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace avs2s {

// Dense row-major tensor of 64-bit floats. Rank 1 or 2 is all this project
// needs; shape is kept as a vector for serialization friendliness.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);
  Tensor(std::initializer_list<int64_t> shape);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double value);
  static Tensor row(const std::vector<double>& values);  // [n]

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  // Rows/cols of a rank-2 tensor; a rank-1 tensor is treated as [1, n].
  int64_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  int64_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  double& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols() + c)]; }
  double* row_ptr(int64_t r) { return data_.data() + r * cols(); }
  const double* row_ptr(int64_t r) const { return data_.data() + r * cols(); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_str() const;
  bool all_finite() const;

  void fill(double v);
  void ensure_zeros(const std::vector<int64_t>& shape);  // allocate-or-zero to shape

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

// C (+)= op(A) * op(B). Shapes are checked; throws on mismatch.
void matmul(const Tensor& a, const Tensor& b, Tensor& c, bool trans_a = false,
            bool trans_b = false, bool accumulate = false);

void add_inplace(Tensor& a, const Tensor& b, double scale = 1.0);  // a += scale*b

}  // namespace avs2s
