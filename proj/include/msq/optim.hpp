// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "msq/array.hpp"
#include "msq/param.hpp"

namespace msq {

struct AdamState {
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Array> m;  // first moments, one per param (index-aligned)
  std::vector<Array> v;  // second moments

  static AdamState for_params(const ParamStore& store, double beta1 = 0.9,
                              double beta2 = 0.999, double epsilon = 1e-8);
};

/// Bias-corrected Adam update on every param, then zero all grads.
///
/// A param whose gradient is identically zero this step is skipped entirely
/// (value and moments untouched), so a masked-out branch never drifts on
/// stale momentum. Throws NumericError naming the first param with a
/// non-finite gradient; nothing is updated in that case.
void adam_step(ParamStore& store, AdamState& opt, double lr);

struct LrSchedule {
  double peak_lr = 0.002;
  std::uint64_t warmup_steps = 4000;
};

/// Noam schedule: linear warmup to `peak_lr` at `warmup_steps`, then
/// inverse-square-root decay. Throws ConfigError for step < 1.
double noam_lr(std::uint64_t step, const LrSchedule& sched);

/// Global L2 norm of all param grads.
double grad_norm(const ParamStore& store);
/// Rescale grads so their global norm is at most `max_norm`; returns the
/// norm before clipping.
double clip_grad_norm(ParamStore& store, double max_norm);

}  // namespace msq
