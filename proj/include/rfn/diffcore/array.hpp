#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rfn/error.hpp"

namespace rfn::diff {

// Dense row-major array of doubles. Every primitive works on rank-2 arrays;
// a rank-1 shape {n} is viewed as a 1 x n row and a rank-0 shape as 1 x 1.
class RealArray {
 public:
  RealArray() = default;

  RealArray(std::size_t rows, std::size_t cols, double fill = 0.0)
      : shape_{rows, cols}, values_(rows * cols, fill) {}

  RealArray(std::vector<std::size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    const std::size_t expected = std::accumulate(
        shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
    if (expected != values_.size()) {
      throw DataError("RealArray: shape product " + std::to_string(expected) +
                      " does not match " + std::to_string(values_.size()) +
                      " values");
    }
    if (shape_.size() > 2) {
      throw DataError("RealArray: rank " + std::to_string(shape_.size()) +
                      " is not supported");
    }
  }

  static RealArray scalar(double v) { return RealArray(1, 1, v); }

  static RealArray row(std::vector<double> values) {
    const std::size_t n = values.size();
    return RealArray({1, n}, std::move(values));
  }

  static RealArray column(std::vector<double> values) {
    const std::size_t n = values.size();
    return RealArray({n, 1}, std::move(values));
  }

  static RealArray identity(std::size_t n) {
    RealArray a(n, n);
    for (std::size_t i = 0; i < n; ++i) a(i, i) = 1.0;
    return a;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }

  std::size_t rows() const {
    return shape_.size() == 2 ? shape_[0] : std::size_t{1};
  }
  std::size_t cols() const {
    if (shape_.size() == 2) return shape_[1];
    if (shape_.size() == 1) return shape_[0];
    return 1;
  }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    return values_[r * cols() + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return values_[r * cols() + c];
  }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }
  const std::vector<double>& storage() const { return values_; }

  bool same_shape(const RealArray& o) const {
    return rows() == o.rows() && cols() == o.cols();
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  double sum() const {
    return std::accumulate(values_.begin(), values_.end(), 0.0);
  }

  friend bool operator==(const RealArray& a, const RealArray& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           a.values_ == b.values_;
  }

 private:
  std::vector<std::size_t> shape_{0, 0};
  std::vector<double> values_;
};

}  // namespace rfn::diff
