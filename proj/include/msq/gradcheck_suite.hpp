// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference checks over every layer and the unrolled decoder, on tiny
// randomly initialized instances. Each check reads out the layer through a
// fixed random linear functional so no gradient is structurally zero.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace msq {

struct LayerCheck {
  std::string name;
  double max_rel_err = 0.0;
  std::string worst;
  std::size_t checked = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Runs all checks. `decoder_steps` controls the unrolled decode length.
std::vector<LayerCheck> run_gradcheck_suite(std::uint64_t seed,
                                            std::size_t decoder_steps = 3,
                                            double epsilon = 1e-5);

}  // namespace msq
