// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

#include "msq/array.hpp"

namespace msq {

/// Mean absolute error over rows [0, valid_len) of `pred` and `target`.
/// Rows past valid_len (padding) are ignored. Throws DimensionError if
/// valid_len exceeds either row count or is zero, or the widths differ.
double l1_loss(const Array& pred, const Array& target, std::size_t valid_len);

/// d l1_loss / d pred, shaped like `pred` (zero on padding rows; zero at
/// exact ties).
Array l1_loss_grad(const Array& pred, const Array& target, std::size_t valid_len);

}  // namespace msq
