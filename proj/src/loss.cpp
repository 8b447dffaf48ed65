// SPDX-License-Identifier: Apache-2.0

#include "msq/loss.hpp"

#include <cmath>
#include <string>

#include "msq/error.hpp"

namespace msq {
namespace {

void check(const Array& pred, const Array& target, std::size_t valid_len) {
  if (pred.rank() != 2 || target.rank() != 2 || pred.cols() != target.cols()) {
    throw DimensionError("l1_loss: " + pred.shape_string() + " vs " + target.shape_string());
  }
  if (valid_len == 0 || valid_len > pred.rows() || valid_len > target.rows()) {
    throw DimensionError("l1_loss: valid_len " + std::to_string(valid_len) +
                         " out of range for " + pred.shape_string() + " / " +
                         target.shape_string());
  }
}

}  // namespace

double l1_loss(const Array& pred, const Array& target, std::size_t valid_len) {
  check(pred, target, valid_len);
  const std::size_t n = valid_len * pred.cols();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::abs(pred[i] - target[i]);
  return sum / static_cast<double>(n);
}

Array l1_loss_grad(const Array& pred, const Array& target, std::size_t valid_len) {
  check(pred, target, valid_len);
  const std::size_t n = valid_len * pred.cols();
  const double scale = 1.0 / static_cast<double>(n);
  Array g = Array::zeros_like(pred);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred[i] - target[i];
    g[i] = d > 0 ? scale : (d < 0 ? -scale : 0.0);
  }
  return g;
}

}  // namespace msq
