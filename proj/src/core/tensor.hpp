#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "core/rng.hpp"

namespace avloc {

// Dense row-major tensor of doubles. Everything in the toolkit runs at 64-bit
// precision so analytic gradients can be checked against central differences.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> data);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor random_normal(std::vector<int> shape, Rng& rng, double stddev = 1.0);
  static Tensor random_uniform(std::vector<int> shape, Rng& rng, double lo, double hi);

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major offsets for the ranks used throughout.
  std::size_t off(int i, int j) const {
    return static_cast<std::size_t>(i) * shape_[1] + j;
  }
  std::size_t off(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t off(int i, int j, int k, int l) const {
    return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }

  double& at(int i, int j) { return data_[off(i, j)]; }
  double at(int i, int j) const { return data_[off(i, j)]; }
  double& at(int i, int j, int k) { return data_[off(i, j, k)]; }
  double at(int i, int j, int k) const { return data_[off(i, j, k)]; }
  double& at(int i, int j, int k, int l) { return data_[off(i, j, k, l)]; }
  double at(int i, int j, int k, int l) const { return data_[off(i, j, k, l)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  double max_abs() const;
  Tensor reshaped(std::vector<int> shape) const;
  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

std::size_t shape_numel(const std::vector<int>& shape);

}  // namespace avloc
