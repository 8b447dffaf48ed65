// SPDX-License-Identifier: Apache-2.0

#include "msq/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "msq/error.hpp"
#include "msq/rng.hpp"

namespace msq {

GradCheckResult grad_check(const std::function<double()>& loss,
                           std::span<const GradTarget> targets, double epsilon) {
  GradCheckResult res;
  for (const GradTarget& t : targets) {
    if (t.values.size() != t.analytic.size()) {
      throw DimensionError("grad target " + t.name + ": analytic size mismatch");
    }
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      const double a = t.analytic[i];
      if (!std::isfinite(a)) throw NumericError("non-finite analytic gradient in " + t.name);
      const double orig = t.values[i];
      t.values[i] = orig + epsilon;
      const double up = loss();
      t.values[i] = orig - epsilon;
      const double down = loss();
      t.values[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("non-finite loss while perturbing " + t.name);
      }
      const double numeric = (up - down) / (2.0 * epsilon);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      ++res.checked;
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst = t.name + "[" + std::to_string(i) + "]";
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

std::vector<GradTarget> param_targets(ParamStore& store, const GradBuffer& grads) {
  std::vector<GradTarget> out;
  for (std::size_t i = 0; i < store.size(); ++i) {
    out.push_back({store[i].name, store[i].value.values(), grads.at(i).values()});
  }
  return out;
}

Array random_weights(const std::vector<std::size_t>& shape, std::uint64_t seed) {
  Rng rng(seed);
  Array w(shape);
  for (double& v : w.values()) v = rng.uniform(-1.0, 1.0);
  return w;
}

double dot(const Array& a, const Array& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace msq
