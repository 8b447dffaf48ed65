// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "msq/error.hpp"
#include "msq/gradcheck.hpp"
#include "msq/layers.hpp"
#include "msq/optim.hpp"
#include "msq/rng.hpp"
#include "test_util.hpp"

namespace msq {
namespace {

using test::randomize;
using test::random_array;

// --- affine -------------------------------------------------------------------

TEST(Affine, IdentityPassesInput) {
  ParamStore ps;
  Affine a = make_affine(ps, "a", 2, 2);
  a.W->value = Array::matrix({{1, 0}, {0, 1}});
  Array y = affine_forward(a, Array::matrix({{1, 2}}));
  EXPECT_EQ(y, Array::matrix({{1, 2}}));
}

TEST(Affine, ZeroInputPassesBias) {
  ParamStore ps;
  Affine a = make_affine(ps, "a", 2, 2);
  randomize(ps, 3, 1.0);
  a.b->value = Array::vector({3, -1});
  Array y = affine_forward(a, Array::matrix({{0, 0}}));
  EXPECT_EQ(y, Array::matrix({{3, -1}}));
}

TEST(Affine, ShapeMismatchThrows) {
  ParamStore ps;
  Affine a = make_affine(ps, "a", 3, 2);
  EXPECT_THROW(affine_forward(a, Array::matrix({{1, 2}})), DimensionError);
}

double affine_gradcheck(std::uint64_t seed) {
  ParamStore ps;
  Affine a = make_affine(ps, "a", 4, 3);
  randomize(ps, seed, 0.5);
  Array x = random_array({5, 4}, seed + 100);
  Array w = random_weights({5, 3}, seed + 200);
  GradBuffer g(ps);
  Array dx = affine_backward(a, x, w, g);
  auto loss = [&] { return dot(affine_forward(a, x), w); };
  std::vector<GradTarget> targets = param_targets(ps, g);
  targets.push_back({"x", x.values(), dx.values()});
  return grad_check(loss, targets).max_rel_err;
}

TEST(Affine, GradcheckSeed7) { EXPECT_LT(affine_gradcheck(7), 1e-6); }
TEST(Affine, GradcheckSeed1) { EXPECT_LT(affine_gradcheck(1), 1e-6); }

// --- GRU ----------------------------------------------------------------------

TEST(Gru, ZeroParamsHalvesState) {
  ParamStore ps;
  Gru g = make_gru(ps, "g", 3, 2);
  GruCache c;
  Array h = gru_step(g, Array({3}), Array::vector({1, -2}), &c);
  EXPECT_EQ(h, Array::vector({0.5, -1.0}));
  EXPECT_EQ(c.z, Array::vector({0.5, 0.5}));
  EXPECT_EQ(c.r, Array::vector({0.5, 0.5}));
  EXPECT_EQ(c.n, Array::vector({0.0, 0.0}));
}

TEST(Gru, ZeroIsFixedPointWithZeroBias) {
  ParamStore ps;
  Gru g = make_gru(ps, "g", 3, 4);
  Rng rng(5);
  ps.initialize(rng);
  Array h = gru_step(g, Array({3}), Array({4}), nullptr);
  EXPECT_EQ(h, Array({4}));
}

TEST(Gru, ShapeMismatchThrows) {
  ParamStore ps;
  Gru g = make_gru(ps, "g", 3, 2);
  EXPECT_THROW(gru_step(g, Array({4}), Array({2}), nullptr), DimensionError);
  EXPECT_THROW(gru_step(g, Array({3}), Array({3}), nullptr), DimensionError);
}

double gru_gradcheck(std::uint64_t seed) {
  ParamStore ps;
  Gru g = make_gru(ps, "g", 4, 3);
  randomize(ps, seed, 0.5);
  Array x = random_array({4}, seed + 1);
  Array h = random_array({3}, seed + 2);
  Array w = random_weights({3}, seed + 3);
  GradBuffer gb(ps);
  GruCache c;
  gru_step(g, x, h, &c);
  GruGrads d = gru_step_backward(g, c, w, gb);
  auto loss = [&] { return dot(gru_step(g, x, h, nullptr), w); };
  std::vector<GradTarget> targets = param_targets(ps, gb);
  targets.push_back({"x", x.values(), d.dx.values()});
  targets.push_back({"h", h.values(), d.dh.values()});
  return grad_check(loss, targets).max_rel_err;
}

TEST(Gru, GradcheckSeed13) { EXPECT_LT(gru_gradcheck(13), 1e-5); }
TEST(Gru, GradcheckSeed2) { EXPECT_LT(gru_gradcheck(2), 1e-5); }

// --- BiGRU --------------------------------------------------------------------

TEST(BiGru, LengthOneRunsBothDirections) {
  ParamStore ps;
  BiGru b = make_bigru(ps, "b", 3, 4);
  randomize(ps, 1, 0.5);
  BiGruOutput o = bigru_forward(b, random_array({1, 3}, 9), nullptr);
  EXPECT_EQ(o.states.shape(), (std::vector<std::size_t>{1, 8}));
  EXPECT_EQ(o.final, o.states.row_copy(0));
}

TEST(BiGru, ZeroNetworkGivesZeroStates) {
  ParamStore ps;
  BiGru b = make_bigru(ps, "b", 3, 4);
  BiGruOutput o = bigru_forward(b, random_array({5, 3}, 2), nullptr);
  for (double v : o.states.values()) EXPECT_EQ(v, 0.0);
}

TEST(BiGru, PalindromeWithTiedParamsIsMirrored) {
  ParamStore ps;
  BiGru b = make_bigru(ps, "b", 2, 3);
  randomize(ps, 4, 0.5);
  b.bwd.W->value = b.fwd.W->value;
  b.bwd.U->value = b.fwd.U->value;
  b.bwd.b->value = b.fwd.b->value;
  Array x = Array::matrix({{0.3, -0.7}, {1.1, 0.2}, {0.3, -0.7}});
  BiGruOutput o = bigru_forward(b, x, nullptr);
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_DOUBLE_EQ(o.states(t, j), o.states(2 - t, 3 + j));
    }
  }
}

TEST(BiGru, Gradcheck) {
  ParamStore ps;
  BiGru b = make_bigru(ps, "b", 3, 2);
  randomize(ps, 21, 0.5);
  Array x = random_array({4, 3}, 22);
  Array ws = random_weights({4, 4}, 23);
  Array wf = random_weights({4}, 24);
  GradBuffer gb(ps);
  BiGruCache c;
  bigru_forward(b, x, &c);
  Array dx = bigru_backward(b, c, ws, wf, gb);
  auto loss = [&] {
    BiGruOutput o = bigru_forward(b, x, nullptr);
    return dot(o.states, ws) + dot(o.final, wf);
  };
  std::vector<GradTarget> targets = param_targets(ps, gb);
  targets.push_back({"x", x.values(), dx.values()});
  EXPECT_LT(grad_check(loss, targets).max_rel_err, 1e-5);
}

TEST(BiGru, EmptySequenceThrows) {
  ParamStore ps;
  BiGru b = make_bigru(ps, "b", 3, 2);
  EXPECT_THROW(bigru_forward(b, Array({3}), nullptr), DimensionError);
}

// --- conv bank / maxpool ---------------------------------------------------------

TEST(ConvBank, WidthOneIsPerFrameAffineRelu) {
  ParamStore ps;
  ConvBank bank = make_conv_bank(ps, "bank", 1, 1, 1);
  bank.convs[0].W->value = Array::matrix({{2.0}});
  Array x = Array::matrix({{1.0}, {-3.0}, {0.5}});
  Array y = conv_bank_forward(bank, x, nullptr);
  EXPECT_EQ(y, Array::matrix({{2.0}, {0.0}, {1.0}}));
}

TEST(ConvBank, ZeroFiltersGiveZeroOutput) {
  ParamStore ps;
  ConvBank bank = make_conv_bank(ps, "bank", 3, 2, 4);
  Array y = conv_bank_forward(bank, random_array({6, 2}, 1), nullptr);
  EXPECT_EQ(y.shape(), (std::vector<std::size_t>{6, 12}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(ConvBank, MatchesDirectSummationOracle) {
  const std::size_t K = 2, d = 3, C = 4, T = 7;
  ParamStore ps;
  ConvBank bank = make_conv_bank(ps, "bank", K, d, C);
  randomize(ps, 3, 0.5);
  Array x = random_array({T, d}, 3);
  Array y = conv_bank_forward(bank, x, nullptr);
  for (std::size_t k = 1; k <= K; ++k) {
    const Conv1d& conv = bank.convs[k - 1];
    const long pad = static_cast<long>((k - 1) / 2);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t c = 0; c < C; ++c) {
        double acc = conv.b->value[c];
        for (std::size_t tap = 0; tap < k; ++tap) {
          const long src = static_cast<long>(t + tap) - pad;
          if (src < 0 || src >= static_cast<long>(T)) continue;
          for (std::size_t i = 0; i < d; ++i) {
            acc += x(static_cast<std::size_t>(src), i) * conv.W->value(tap * d + i, c);
          }
        }
        EXPECT_NEAR(y(t, (k - 1) * C + c), std::max(0.0, acc), 1e-12);
      }
    }
  }
}

TEST(ConvBank, PreservesLengthAndGradchecks) {
  ParamStore ps;
  ConvBank bank = make_conv_bank(ps, "bank", 4, 2, 3);
  randomize(ps, 31, 0.5);
  Array x = random_array({5, 2}, 32);
  Array w = random_weights({5, 12}, 33);
  ConvBankCache c;
  Array y = conv_bank_forward(bank, x, &c);
  EXPECT_EQ(y.rows(), 5u);
  GradBuffer gb(ps);
  Array dx = conv_bank_backward(bank, c, w, gb);
  auto loss = [&] { return dot(conv_bank_forward(bank, x, nullptr), w); };
  std::vector<GradTarget> targets = param_targets(ps, gb);
  targets.push_back({"x", x.values(), dx.values()});
  EXPECT_LT(grad_check(loss, targets).max_rel_err, 1e-5);
}

TEST(MaxPool, Definition) {
  MaxPoolResult r = maxpool1d_same(Array::matrix({{1}, {3}, {2}}));
  EXPECT_EQ(r.y, Array::matrix({{3}, {3}, {2}}));
}

TEST(MaxPool, ConstantInputUnchanged) {
  Array x({4, 3}, 1.5);
  EXPECT_EQ(maxpool1d_same(x).y, x);
}

TEST(MaxPool, TiesRouteToEarlierFrame) {
  MaxPoolResult r = maxpool1d_same(Array::matrix({{2}, {2}, {1}}));
  Array dx = maxpool1d_backward(r, Array::matrix({{1}, {1}, {1}}));
  EXPECT_EQ(dx, Array::matrix({{1}, {1}, {1}}));
  EXPECT_EQ(r.source_row, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(MaxPool, GradcheckAwayFromTies) {
  Array x = random_array({6, 3}, 44);
  Array w = random_weights({6, 3}, 45);
  MaxPoolResult r = maxpool1d_same(x);
  Array dx = maxpool1d_backward(r, w);
  auto loss = [&] { return dot(maxpool1d_same(x).y, w); };
  std::vector<GradTarget> targets{{"x", x.values(), dx.values()}};
  EXPECT_LT(grad_check(loss, targets).max_rel_err, 1e-6);
}

// --- highway ------------------------------------------------------------------

TEST(Highway, ClosedGateCarriesInput) {
  ParamStore ps;
  Highway h = make_highway(ps, "h", 3);
  randomize(ps, 1, 0.5);
  h.gate.b->value.fill(-50.0);
  Array x = random_array({2, 3}, 2);
  EXPECT_LT(max_abs_diff(highway_forward(h, x, nullptr), x), 1e-20);
}

TEST(Highway, OpenGateTransforms) {
  ParamStore ps;
  Highway h = make_highway(ps, "h", 3);
  randomize(ps, 1, 0.5);
  h.gate.b->value.fill(50.0);
  Array x = random_array({2, 3}, 2);
  Array H = affine_forward(h.transform, x);
  for (double& v : H.values()) v = std::max(0.0, v);
  EXPECT_LT(max_abs_diff(highway_forward(h, x, nullptr), H), 1e-20);
}

TEST(Highway, GradcheckSeed11) {
  ParamStore ps;
  Highway h = make_highway(ps, "h", 4);
  randomize(ps, 11, 0.5);
  Array x = random_array({3, 4}, 12);
  Array w = random_weights({3, 4}, 13);
  HighwayCache c;
  highway_forward(h, x, &c);
  GradBuffer gb(ps);
  Array dx = highway_backward(h, c, w, gb);
  auto loss = [&] { return dot(highway_forward(h, x, nullptr), w); };
  std::vector<GradTarget> targets = param_targets(ps, gb);
  targets.push_back({"x", x.values(), dx.values()});
  EXPECT_LT(grad_check(loss, targets).max_rel_err, 1e-5);
}

// --- softmax / dropout / prenet -----------------------------------------------

TEST(Softmax, Examples) {
  EXPECT_EQ(softmax(Array::vector({0, 0})), Array::vector({0.5, 0.5}));
  Array s = softmax(Array::vector({10, 10, 10}));
  for (double v : s.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariantAndNormalized) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Array x = random_array({7}, seed);
    for (double& v : x.values()) v *= 20.0;
    Array shifted = x;
    for (double& v : shifted.values()) v += 100.0;
    Array a = softmax(x);
    Array b = softmax(shifted);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_GT(a[i], 0.0);
      EXPECT_NEAR(a[i], b[i], 1e-12);
      sum += a[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Softmax, NanThrows) {
  EXPECT_THROW(softmax(Array::vector({0, std::nan("")})), NumericError);
}

TEST(Dropout, RateZeroAllOnes) {
  Rng rng(1);
  Array m = dropout_mask({100}, 0.0, rng);
  for (double v : m.values()) EXPECT_EQ(v, 1.0);
}

TEST(Dropout, InferenceAllOnes) {
  Rng rng(1);
  Array m = dropout_mask({100}, 0.5, rng, false);
  for (double v : m.values()) EXPECT_EQ(v, 1.0);
}

TEST(Dropout, MeanIsOne) {
  Rng rng(1234);
  Array m = dropout_mask({100000}, 0.5, rng);
  double sum = 0.0;
  for (double v : m.values()) {
    EXPECT_TRUE(v == 0.0 || v == 2.0);
    sum += v;
  }
  EXPECT_NEAR(sum / 100000.0, 1.0, 0.01);
}

TEST(Dropout, RateOneRejected) {
  Rng rng(1);
  EXPECT_THROW(dropout_mask({3}, 1.0, rng), ConfigError);
}

TEST(Prenet, GradcheckWithFixedMask) {
  ParamStore ps;
  Prenet p = make_prenet(ps, "p", 3, 5, 0.5);
  randomize(ps, 51, 0.5);
  Array x = random_array({4, 3}, 52);
  Array w = random_weights({4, 5}, 53);
  PrenetCache c;
  Rng r1(7);
  prenet_forward(p, x, &r1, &c);
  GradBuffer gb(ps);
  Array dx = prenet_backward(p, c, w, gb);
  auto loss = [&] {
    Rng r(7);
    return dot(prenet_forward(p, x, &r, nullptr), w);
  };
  std::vector<GradTarget> targets = param_targets(ps, gb);
  targets.push_back({"x", x.values(), dx.values()});
  EXPECT_LT(grad_check(loss, targets).max_rel_err, 1e-5);
}

// --- optimizer / schedule -------------------------------------------------------

TEST(Adam, ZeroGradIsNoOp) {
  ParamStore ps;
  Affine a = make_affine(ps, "a", 3, 2);
  randomize(ps, 1, 0.5);
  Array before = a.W->value;
  AdamState opt = AdamState::for_params(ps);
  adam_step(ps, opt, 0.1);
  EXPECT_EQ(a.W->value, before);
  EXPECT_EQ(opt.step, 1u);
}

TEST(Adam, FirstStepMovesByLr) {
  ParamStore ps;
  Param* p = ps.add("p", {1}, Init::Zero);
  AdamState opt = AdamState::for_params(ps);
  p->grad[0] = 1.0;
  adam_step(ps, opt, 0.002);
  EXPECT_NEAR(-p->value[0], 0.002 / (1.0 + 1e-8), 1e-18);
  EXPECT_EQ(p->grad[0], 0.0);
}

TEST(Adam, ThreeStepTraceMatchesHandTable) {
  // w0 = 0.5, lr = 0.01, grads 1, -2, 0.5; table computed outside the library.
  const double expected_w[] = {0.4900000001, 0.4936610353472075, 0.4950279419673822};
  const double expected_m[] = {0.09999999999999998, -0.10999999999999997, -0.04899999999999999};
  const double expected_v[] = {0.0010000000000000009, 0.004999000000000004,
                               0.005244001000000004};
  const double grads[] = {1.0, -2.0, 0.5};
  ParamStore ps;
  Param* p = ps.add("p", {1}, Init::Zero);
  p->value[0] = 0.5;
  AdamState opt = AdamState::for_params(ps);
  for (int t = 0; t < 3; ++t) {
    p->grad[0] = grads[t];
    adam_step(ps, opt, 0.01);
    EXPECT_NEAR(p->value[0], expected_w[t], 1e-12);
    EXPECT_NEAR(opt.m[0][0], expected_m[t], 1e-12);
    EXPECT_NEAR(opt.v[0][0], expected_v[t], 1e-12);
  }
  EXPECT_EQ(opt.step, 3u);
}

TEST(Adam, NanGradNamesParam) {
  ParamStore ps;
  ps.add("good", {1}, Init::Zero);
  Param* bad = ps.add("enc/bad", {2}, Init::Zero);
  bad->grad[1] = std::nan("");
  AdamState opt = AdamState::for_params(ps);
  try {
    adam_step(ps, opt, 0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("enc/bad"), std::string::npos);
  }
  EXPECT_EQ(opt.step, 0u);
}

TEST(Noam, PaperPeakAtWarmup) {
  LrSchedule s{0.002, 4000};
  EXPECT_EQ(noam_lr(4000, s), 0.002);
  EXPECT_DOUBLE_EQ(noam_lr(1000, s), 0.002 / 4);
  EXPECT_DOUBLE_EQ(noam_lr(16000, s), 0.002 / 2);
  EXPECT_THROW(noam_lr(0, s), ConfigError);
}

TEST(Noam, MaximizedAtWarmup) {
  LrSchedule s{0.002, 400};
  const double peak = noam_lr(400, s);
  for (std::uint64_t step = 1; step < 5000; step += 7) {
    EXPECT_GT(noam_lr(step, s), 0.0);
    EXPECT_LE(noam_lr(step, s), peak);
  }
}

TEST(GradClip, RescalesToMaxNorm) {
  ParamStore ps;
  Param* p = ps.add("p", {2}, Init::Zero);
  p->grad = Array::vector({3, 4});
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(grad_norm(ps), 1.0, 1e-15);
}

TEST(GradCheck, NonFiniteLossThrows) {
  Array x = Array::vector({1.0});
  Array g = Array::vector({1.0});
  std::vector<GradTarget> t{{"x", x.values(), g.values()}};
  EXPECT_THROW(grad_check([] { return std::nan(""); }, t), NumericError);
}

}  // namespace
}  // namespace msq
