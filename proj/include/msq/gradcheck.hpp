// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "msq/array.hpp"
#include "msq/param.hpp"

namespace msq {

/// One block of scalars to perturb, with the analytic gradient to compare.
struct GradTarget {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "<target>[<index>]" of the largest error
  std::size_t checked = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares analytic gradients with central differences of `loss`.
///
/// Relative error per scalar is |a - n| / max(|a|, |n|, 1e-8). Every perturbed
/// value is restored before returning. Throws NumericError if the loss or any
/// analytic entry is non-finite.
GradCheckResult grad_check(const std::function<double()>& loss,
                           std::span<const GradTarget> targets, double epsilon = 1e-5);

/// Targets for every parameter of `store` against `grads`.
std::vector<GradTarget> param_targets(ParamStore& store, const GradBuffer& grads);

/// Fixed random linear functional sum_i w_i y_i used to turn a layer output
/// into a scalar loss; dL/dy = w.
Array random_weights(const std::vector<std::size_t>& shape, std::uint64_t seed);
double dot(const Array& a, const Array& b);

}  // namespace msq
