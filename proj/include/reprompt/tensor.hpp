#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace reprompt {

/// Dense 64-bit tensor, row-major. Rank 1 are vectors, rank 2 matrices
/// (rows x cols), rank 3 feature maps (channels x H x W), rank 4 conv
/// kernels (out x in x kh x kw). A tensor marked learnable carries a
/// same-shape gradient accumulator.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_[axis]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-2 element access.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double item() const;  // requires size() == 1

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool enabled);

  /// Gradient accumulator; valid only when requires_grad() is true.
  std::vector<double>& grad() { return grad_; }
  const std::vector<double>& grad() const { return grad_; }
  void zero_grad();

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  void ensure_finite(const char* what) const;  // throws on NaN/Inf

  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
};

}  // namespace reprompt
