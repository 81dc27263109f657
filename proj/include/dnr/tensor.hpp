// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dnr/error.hpp"

namespace dnr {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles. Rank 1 and rank 2 are the working
/// ranks; a scalar is shape {1}. A rank-1 tensor of width k behaves as a
/// 1 x k row wherever a matrix view is needed.
class Tensor {
 public:
  Tensor() : shape_{1}, data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    require(data_.size() == numel(shape_),
            "Tensor: data length " + std::to_string(data_.size()) +
                " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    require(r > 0, "Tensor::matrix: no rows");
    const std::size_t c = rows.begin()->size();
    std::vector<double> d;
    d.reserve(r * c);
    for (const auto& row : rows) {
      require(row.size() == c, "Tensor::matrix: ragged rows");
      d.insert(d.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(d));
  }

  static std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  // Matrix view: rank 1 {k} reads as 1 x k.
  std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.size() == 2 ? shape_[1] : shape_[0]; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double item() const {
    require(data_.size() == 1, "Tensor::item on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  /// Copy of row r as a rank-1 tensor.
  Tensor row(std::size_t r) const {
    const std::size_t c = cols();
    return Tensor({c}, std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(r * c),
                                           data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)));
  }

  /// Rows selected by index, in the given order.
  Tensor gather_rows(std::span<const std::size_t> idx) const {
    const std::size_t c = cols();
    std::vector<double> d;
    d.reserve(idx.size() * c);
    for (std::size_t r : idx) {
      require(r < rows(), "Tensor::gather_rows: index out of range");
      d.insert(d.end(), data_.begin() + static_cast<std::ptrdiff_t>(r * c),
               data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
    }
    return Tensor({idx.size(), c}, std::move(d));
  }

  /// Columns [begin, end) of the matrix view, as a rank-2 tensor.
  Tensor col_range(std::size_t begin, std::size_t end) const {
    require(begin <= end && end <= cols(), "Tensor::col_range: bad range");
    Tensor out({rows(), end - begin});
    for (std::size_t r = 0; r < rows(); ++r)
      for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = (*this)(r, c);
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_shape() const {
    require(!shape_.empty(), "Tensor: empty shape (use {1} for a scalar)");
    for (std::size_t d : shape_) require(d > 0, "Tensor: zero-sized dimension in " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace dnr
