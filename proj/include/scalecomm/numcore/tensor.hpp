// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>

#include "scalecomm/errors.hpp"

namespace scalecomm::num {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Dense row-major float64 matrix with value semantics. Vectors are 1×n rows,
/// scalars are 1×1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Index rows, Index cols) : data_(Matrix::Zero(rows, cols)) {}
  explicit Tensor(Matrix m) : data_(std::move(m)) {}

  static Tensor scalar(double v) {
    Tensor t(1, 1);
    t.data_(0, 0) = v;
    return t;
  }

  static Tensor row(std::initializer_list<double> v) {
    Tensor t(1, static_cast<Index>(v.size()));
    Index j = 0;
    for (double x : v) t.data_(0, j++) = x;
    return t;
  }

  static Tensor row(std::span<const double> v) {
    Tensor t(1, static_cast<Index>(v.size()));
    for (std::size_t j = 0; j < v.size(); ++j) t.data_(0, static_cast<Index>(j)) = v[j];
    return t;
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const Index r = static_cast<Index>(rows.size());
    const Index c = r == 0 ? 0 : static_cast<Index>(rows.begin()->size());
    Tensor t(r, c);
    Index i = 0;
    for (const auto& row : rows) {
      if (static_cast<Index>(row.size()) != c) throw StructuralError("from_rows: ragged rows");
      Index j = 0;
      for (double x : row) t.data_(i, j++) = x;
      ++i;
    }
    return t;
  }

  std::array<std::size_t, 2> shape() const {
    return {static_cast<std::size_t>(data_.rows()), static_cast<std::size_t>(data_.cols())};
  }
  Index rows() const { return data_.rows(); }
  Index cols() const { return data_.cols(); }
  Index size() const { return data_.size(); }

  double operator()(Index i, Index j) const { return data_(i, j); }
  double& operator()(Index i, Index j) { return data_(i, j); }

  double item() const {
    if (data_.size() != 1) throw StructuralError("item() on non-scalar tensor");
    return data_(0, 0);
  }

  std::span<const double> values() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }
  std::span<double> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }

  std::span<const double> row_span(Index i) const {
    return {data_.data() + i * data_.cols(), static_cast<std::size_t>(data_.cols())};
  }

  const Matrix& mat() const { return data_; }
  Matrix& mat() { return data_; }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.data_.rows() == b.data_.rows() && a.data_.cols() == b.data_.cols() &&
           a.data_ == b.data_;
  }

 private:
  Matrix data_;
};

inline std::string shape_str(Index r, Index c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw StructuralError(std::string(what) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                          " vs " + shape_str(b.rows(), b.cols()));
  }
}

}  // namespace scalecomm::num
