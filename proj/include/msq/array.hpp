// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace msq {

/// Dense row-major array of doubles with explicit shape.
///
/// Rank-1 arrays are vectors; rank-2 arrays are [rows, cols] matrices. Every
/// extent is positive except for the default-constructed empty array.
class Array {
 public:
  Array() = default;
  explicit Array(std::vector<std::size_t> shape, double fill = 0.0);
  Array(std::vector<std::size_t> shape, std::vector<double> data);

  static Array vector(std::initializer_list<double> values);
  static Array matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Array zeros_like(const Array& other) { return Array(other.shape_); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t dim(std::size_t axis) const;

  // Matrix view: a rank-1 array is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;
  Array row_copy(std::size_t r) const;
  void set_row(std::size_t r, std::span<const double> v);

  Array reshaped(std::vector<std::size_t> shape) const;
  void fill(double v);
  void set_zero() { fill(0.0); }
  bool all_finite() const;

  Array& operator+=(const Array& other);
  Array& operator-=(const Array& other);
  Array& operator*=(double s);

  bool operator==(const Array& other) const = default;

  std::string shape_string() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

Array operator+(Array a, const Array& b);
Array operator-(Array a, const Array& b);

/// Throws DimensionError unless `a` and `b` have identical shapes.
void require_same_shape(const Array& a, const Array& b, const char* what);
/// Throws NumericError naming `what` if any entry is NaN or Inf.
void require_finite(const Array& a, const std::string& what);

/// Concatenate rank-1 arrays.
Array concat(std::initializer_list<const Array*> parts);
/// Copy `len` entries of a rank-1 array starting at `offset`.
Array slice(const Array& v, std::size_t offset, std::size_t len);

double max_abs_diff(const Array& a, const Array& b);

/// Matrix products on the matrix view of each operand (rank-1 = one row).
Array matmul(const Array& a, const Array& b);     // a b
Array matmul_nt(const Array& a, const Array& b);  // a b^T
void add_matmul_tn(Array& out, const Array& a, const Array& b);  // out += a^T b

}  // namespace msq
