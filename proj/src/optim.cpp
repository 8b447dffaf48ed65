// SPDX-License-Identifier: Apache-2.0

#include "msq/optim.hpp"

#include <algorithm>
#include <cmath>

#include "msq/error.hpp"

namespace msq {

AdamState AdamState::for_params(const ParamStore& store, double beta1, double beta2,
                                double epsilon) {
  AdamState s;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  for (std::size_t i = 0; i < store.size(); ++i) {
    s.m.emplace_back(store[i].value.shape());
    s.v.emplace_back(store[i].value.shape());
  }
  return s;
}

void adam_step(ParamStore& store, AdamState& opt, double lr) {
  if (opt.m.size() != store.size() || opt.v.size() != store.size()) {
    throw DimensionError("optimizer state does not mirror the parameter store");
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!store[i].grad.all_finite()) {
      throw NumericError("non-finite gradient in parameter " + store[i].name);
    }
  }
  opt.step += 1;
  const double t = static_cast<double>(opt.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < store.size(); ++i) {
    Param& p = store[i];
    auto g = p.grad.values();
    if (std::all_of(g.begin(), g.end(), [](double x) { return x == 0.0; })) continue;
    auto w = p.value.values();
    auto m = opt.m[i].values();
    auto v = opt.v[i].values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
      v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + opt.epsilon);
    }
  }
  store.zero_grads();
}

double noam_lr(std::uint64_t step, const LrSchedule& sched) {
  if (step < 1) throw ConfigError("noam_lr: step must be >= 1");
  if (sched.warmup_steps < 1) throw ConfigError("noam_lr: warmup must be >= 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(sched.warmup_steps);
  // peak * w^0.5 * min(s * w^-1.5, s^-0.5), split by branch so the peak is exact.
  if (s <= w) return sched.peak_lr * (s / w);
  return sched.peak_lr * std::sqrt(w / s);
}

double grad_norm(const ParamStore& store) {
  double sq = 0.0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (double g : store[i].grad.values()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(ParamStore& store, double max_norm) {
  const double norm = grad_norm(store);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (std::size_t i = 0; i < store.size(); ++i) store[i].grad *= s;
  }
  return norm;
}

}  // namespace msq
