// SPDX-License-Identifier: Apache-2.0

#include <algorithm>

#include <gtest/gtest.h>

#include "msq/gradcheck_suite.hpp"

namespace msq {
namespace {

TEST(GradcheckSuite, SeedOneWithinTolerance) {
  const std::vector<LayerCheck> rows = run_gradcheck_suite(1);
  ASSERT_FALSE(rows.empty());
  bool unrolled = false;
  for (const LayerCheck& c : rows) {
    EXPECT_GT(c.checked, 0u) << c.name;
    EXPECT_LT(c.max_rel_err, 1e-4) << c.name << " " << c.worst;
    unrolled |= c.name == "decoder_unrolled_both";
  }
  EXPECT_TRUE(unrolled);
}

TEST(GradcheckSuite, CoversEveryLayer) {
  std::vector<std::string> names;
  for (const LayerCheck& c : run_gradcheck_suite(2)) names.push_back(c.name);
  for (const char* want : {"affine", "embedding", "gru", "bigru", "conv1d", "conv_bank",
                           "maxpool", "highway", "prenet", "text_encoder", "speech_encoder",
                           "attention", "decoder_unrolled_both", "decoder_unrolled_text",
                           "decoder_unrolled_speech"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), want), names.end()) << want;
  }
}

}  // namespace
}  // namespace msq
