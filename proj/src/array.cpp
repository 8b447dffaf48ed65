// SPDX-License-Identifier: Apache-2.0

#include "msq/array.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "msq/error.hpp"

namespace msq {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

void check_extents(const std::vector<std::size_t>& shape) {
  if (shape.empty()) throw DimensionError("array shape must have rank >= 1");
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("array extents must be positive");
  }
}

ConstMatMap view(const Array& a) {
  return ConstMatMap(a.data(), static_cast<Eigen::Index>(a.rows()),
                     static_cast<Eigen::Index>(a.cols()));
}

MatMap view(Array& a) {
  return MatMap(a.data(), static_cast<Eigen::Index>(a.rows()),
                static_cast<Eigen::Index>(a.cols()));
}

}  // namespace

Array::Array(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(product(shape_), fill);
}

Array::Array(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (product(shape_) != data_.size()) {
    throw DimensionError("array data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
  }
}

Array Array::vector(std::initializer_list<double> values) {
  return Array({values.size()}, std::vector<double>(values));
}

Array Array::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw DimensionError("matrix needs at least one row");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Array({rows.size(), cols}, std::move(data));
}

std::size_t Array::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw DimensionError("axis out of range");
  return shape_[axis];
}

std::size_t Array::rows() const {
  if (shape_.size() == 1) return 1;
  if (shape_.size() == 2) return shape_[0];
  throw DimensionError("matrix view needs rank 1 or 2, got " + shape_string());
}

std::size_t Array::cols() const {
  if (shape_.size() == 1) return shape_[0];
  if (shape_.size() == 2) return shape_[1];
  throw DimensionError("matrix view needs rank 1 or 2, got " + shape_string());
}

std::span<double> Array::row(std::size_t r) {
  const std::size_t c = cols();
  return {data_.data() + r * c, c};
}

std::span<const double> Array::row(std::size_t r) const {
  const std::size_t c = cols();
  return {data_.data() + r * c, c};
}

Array Array::row_copy(std::size_t r) const {
  auto v = row(r);
  return Array({v.size()}, std::vector<double>(v.begin(), v.end()));
}

void Array::set_row(std::size_t r, std::span<const double> v) {
  auto dst = row(r);
  if (v.size() != dst.size()) throw DimensionError("set_row length mismatch");
  std::copy(v.begin(), v.end(), dst.begin());
}

Array Array::reshaped(std::vector<std::size_t> shape) const {
  return Array(std::move(shape), data_);
}

void Array::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Array::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

Array& Array::operator+=(const Array& other) {
  require_same_shape(*this, other, "+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Array& Array::operator-=(const Array& other) {
  require_same_shape(*this, other, "-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Array& Array::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

std::string Array::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ',';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

Array operator+(Array a, const Array& b) { return a += b; }
Array operator-(Array a, const Array& b) { return a -= b; }

void require_same_shape(const Array& a, const Array& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape " + a.shape_string() +
                         " vs " + b.shape_string());
  }
}

void require_finite(const Array& a, const std::string& what) {
  if (!a.all_finite()) throw NumericError("non-finite values in " + what);
}

Array concat(std::initializer_list<const Array*> parts) {
  std::vector<double> out;
  for (const Array* p : parts) {
    if (p->rank() != 1) throw DimensionError("concat expects rank-1 arrays");
    out.insert(out.end(), p->values().begin(), p->values().end());
  }
  const std::size_t n = out.size();
  return Array({n}, std::move(out));
}

Array slice(const Array& v, std::size_t offset, std::size_t len) {
  if (offset + len > v.size()) throw DimensionError("slice out of range");
  auto src = v.values().subspan(offset, len);
  return Array({len}, std::vector<double>(src.begin(), src.end()));
}

double max_abs_diff(const Array& a, const Array& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Array matmul(const Array& a, const Array& b) {
  if (b.rank() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.shape_string() + " x " + b.shape_string());
  }
  Array out = a.rank() == 1 ? Array({b.cols()}) : Array({a.rows(), b.cols()});
  view(out).noalias() = view(a) * view(b);
  return out;
}

Array matmul_nt(const Array& a, const Array& b) {
  if (b.rank() != 2 || a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + a.shape_string() + " x " +
                         b.shape_string() + "^T");
  }
  Array out = a.rank() == 1 ? Array({b.rows()}) : Array({a.rows(), b.rows()});
  view(out).noalias() = view(a) * view(b).transpose();
  return out;
}

void add_matmul_tn(Array& out, const Array& a, const Array& b) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
    throw DimensionError("add_matmul_tn: " + a.shape_string() + "^T x " +
                         b.shape_string() + " into " + out.shape_string());
  }
  view(out).noalias() += view(a).transpose() * view(b);
}

}  // namespace msq
