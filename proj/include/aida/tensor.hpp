#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "aida/error.hpp"

namespace aida {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (const std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major tensor of doubles, rank 0..2. Immutable by convention once
// handed to a tape; mutation happens only through the optimizer between steps.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}  // rank-0 zero

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ContractError("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  static Tensor zeros(Shape shape) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor full(Shape shape, double v) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }

  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor({rows, cols}, std::move(v));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows_init) {
    std::vector<double> v;
    std::size_t rows = 0, cols = 0;
    for (const auto& r : rows_init) {
      if (rows == 0) cols = r.size();
      if (r.size() != cols) throw ContractError("ragged matrix initializer");
      v.insert(v.end(), r.begin(), r.end());
      ++rows;
    }
    return Tensor({rows, cols}, std::move(v));
  }

  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::size_t rows() const {
    if (rank() != 2) throw ContractError("rows() on tensor of shape " + shape_str(shape_));
    return shape_[0];
  }
  std::size_t cols() const {
    if (rank() != 2) throw ContractError("cols() on tensor of shape " + shape_str(shape_));
    return shape_[1];
  }

  double item() const {
    if (data_.size() != 1) {
      throw ContractError("item() on non-scalar tensor of shape " + shape_str(shape_));
    }
    return data_[0];
  }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  std::span<const double> data() const { return data_; }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  bool all_finite() const {
    for (const double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // Copy of row r as a flat vector (rank-2 only).
  std::vector<double> row(std::size_t r) const {
    const std::size_t c = cols();
    return std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(r * c),
                               data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Squared L2 distance between two equal-length ranges.
inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ContractError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace aida
