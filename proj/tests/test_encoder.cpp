// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "msq/encoder.hpp"
#include "msq/error.hpp"
#include "msq/gradcheck.hpp"
#include "test_util.hpp"

namespace msq {
namespace {

using test::randomize;
using test::random_array;
using Mat = std::vector<std::vector<double>>;

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.d_embed = 3;
  c.d_prenet = 3;
  c.bank_K = 3;
  c.conv_channels = 2;
  c.highway_layers = 2;
  c.d_gru = 2;
  c.dropout = 0.5;
  return c;
}

// ---------------------------------------------------------------------------
// Straight-line reference of the CBHG pipeline on nested vectors, written
// against raw parameter values only.

Mat to_mat(const Array& a) {
  Mat m(a.rows(), std::vector<double>(a.cols()));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) m[i][j] = a(i, j);
  return m;
}

const Array& P(const ParamStore& ps, const std::string& n) { return ps.at(n).value; }

Mat ref_conv(const ParamStore& ps, const std::string& name, std::size_t width,
             const Mat& x, bool relu) {
  const Array& W = P(ps, name + "/W");
  const Array& b = P(ps, name + "/b");
  const std::size_t T = x.size(), d = x[0].size(), C = b.size();
  const long left = static_cast<long>((width - 1) / 2);
  Mat y(T, std::vector<double>(C));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t c = 0; c < C; ++c) {
      double acc = b[c];
      for (std::size_t k = 0; k < width; ++k) {
        const long s = static_cast<long>(t) + static_cast<long>(k) - left;
        if (s < 0 || s >= static_cast<long>(T)) continue;
        for (std::size_t i = 0; i < d; ++i) acc += x[static_cast<std::size_t>(s)][i] * W(k * d + i, c);
      }
      y[t][c] = relu ? std::max(0.0, acc) : acc;
    }
  }
  return y;
}

Mat ref_dense(const ParamStore& ps, const std::string& name, const Mat& x) {
  const Array& W = P(ps, name + "/W");
  const Array& b = P(ps, name + "/b");
  Mat y(x.size(), std::vector<double>(b.size()));
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t c = 0; c < b.size(); ++c) {
      double acc = b[c];
      for (std::size_t i = 0; i < x[t].size(); ++i) acc += x[t][i] * W(i, c);
      y[t][c] = acc;
    }
  return y;
}

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::vector<double> ref_gru(const ParamStore& ps, const std::string& name,
                            const std::vector<double>& x, const std::vector<double>& h) {
  const Array& W = P(ps, name + "/W");
  const Array& U = P(ps, name + "/U");
  const Array& b = P(ps, name + "/b");
  const std::size_t H = h.size();
  auto gate = [&](std::size_t block, std::size_t i, const std::vector<double>& hv) {
    double a = b[block * H + i];
    for (std::size_t k = 0; k < x.size(); ++k) a += x[k] * W(k, block * H + i);
    for (std::size_t k = 0; k < H; ++k) a += hv[k] * U(k, block * H + i);
    return a;
  };
  std::vector<double> z(H), r(H), rh(H), out(H);
  for (std::size_t i = 0; i < H; ++i) {
    z[i] = sig(gate(0, i, h));
    r[i] = sig(gate(1, i, h));
  }
  for (std::size_t i = 0; i < H; ++i) rh[i] = r[i] * h[i];
  for (std::size_t i = 0; i < H; ++i) {
    const double n = std::tanh(gate(2, i, rh));
    out[i] = (1 - z[i]) * h[i] + z[i] * n;
  }
  return out;
}

struct RefOut {
  Mat states;
  std::vector<double> final;
};

RefOut ref_cbhg(const ParamStore& ps, const std::string& name, const EncoderConfig& cfg,
                const Mat& x) {
  const std::size_t T = x.size();
  Mat bank(T);
  for (std::size_t k = 1; k <= cfg.bank_K; ++k) {
    Mat y = ref_conv(ps, name + "/bank/k" + std::to_string(k), k, x, true);
    for (std::size_t t = 0; t < T; ++t) bank[t].insert(bank[t].end(), y[t].begin(), y[t].end());
  }
  Mat pooled = bank;
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < bank[t].size(); ++j)
      pooled[t][j] = std::max(bank[t][j], bank[std::min(t + 1, T - 1)][j]);
  Mat p1 = ref_conv(ps, name + "/proj1", 3, pooled, true);
  Mat p2 = ref_conv(ps, name + "/proj2", 3, p1, false);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < p2[t].size(); ++j) p2[t][j] += x[t][j];
  Mat h = ps.find(name + "/to_highway/W") ? ref_dense(ps, name + "/to_highway", p2) : p2;
  for (std::size_t l = 0; l < cfg.highway_layers; ++l) {
    const std::string hn = name + "/highway" + std::to_string(l);
    Mat H = ref_dense(ps, hn + "/H", h);
    Mat G = ref_dense(ps, hn + "/T", h);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < h[t].size(); ++j) {
        const double g = sig(G[t][j]);
        h[t][j] = g * std::max(0.0, H[t][j]) + (1 - g) * h[t][j];
      }
  }
  const std::size_t G = cfg.d_gru;
  RefOut out{Mat(T, std::vector<double>(2 * G)), std::vector<double>(2 * G)};
  std::vector<double> s(G, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    s = ref_gru(ps, name + "/gru/fwd", h[t], s);
    for (std::size_t j = 0; j < G; ++j) out.states[t][j] = s[j];
  }
  for (std::size_t j = 0; j < G; ++j) out.final[j] = s[j];
  s.assign(G, 0.0);
  for (std::size_t t = T; t-- > 0;) {
    s = ref_gru(ps, name + "/gru/bwd", h[t], s);
    for (std::size_t j = 0; j < G; ++j) out.states[t][G + j] = s[j];
  }
  for (std::size_t j = 0; j < G; ++j) out.final[G + j] = s[j];
  return out;
}

double max_diff(const Array& a, const Mat& m) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) d = std::max(d, std::abs(a(i, j) - m[i][j]));
  return d;
}

// ---------------------------------------------------------------------------

TEST(Cbhg, LengthOneSequence) {
  ParamStore ps;
  const EncoderConfig cfg = tiny_config();
  Cbhg c = make_cbhg(ps, "c", 3, cfg);
  randomize(ps, 1, 0.5);
  BiGruOutput o = cbhg_forward(c, random_array({1, 3}, 2), nullptr);
  EXPECT_EQ(o.states.shape(), (std::vector<std::size_t>{1, 4}));
}

TEST(Cbhg, ZeroParamsGiveZeroStates) {
  ParamStore ps;
  Cbhg c = make_cbhg(ps, "c", 3, tiny_config());
  BiGruOutput o = cbhg_forward(c, random_array({5, 3}, 2), nullptr);
  for (double v : o.states.values()) EXPECT_EQ(v, 0.0);
}

TEST(Cbhg, MatchesStraightLineOracleSeed5) {
  ParamStore ps;
  EncoderConfig cfg = tiny_config();
  cfg.bank_K = 4;
  Cbhg c = make_cbhg(ps, "c", 3, cfg);
  randomize(ps, 5, 0.5);
  Array x = random_array({7, 3}, 5);
  BiGruOutput o = cbhg_forward(c, x, nullptr);
  RefOut ref = ref_cbhg(ps, "c", cfg, to_mat(x));
  EXPECT_LT(max_diff(o.states, ref.states), 1e-10);
  for (std::size_t j = 0; j < ref.final.size(); ++j) {
    EXPECT_NEAR(o.final[j], ref.final[j], 1e-10);
  }
}

TEST(Cbhg, EmptyInputThrows) {
  ParamStore ps;
  Cbhg c = make_cbhg(ps, "c", 3, tiny_config());
  EXPECT_THROW(cbhg_forward(c, Array({3}), nullptr), InputError);
}

TEST(Encoder, TextSingleTokenShape) {
  ParamStore ps;
  Encoder e = make_text_encoder(ps, "t", 5, tiny_config());
  randomize(ps, 1, 0.5);
  const std::vector<int> tok{3};
  EncoderOutput o = encode_text(e, tok);
  EXPECT_EQ(o.outputs.shape(), (std::vector<std::size_t>{1, 4}));
  EXPECT_EQ(o.state.size(), 4u);
}

TEST(Encoder, TextMatchesOracleSeed9) {
  ParamStore ps;
  const EncoderConfig cfg = tiny_config();
  Encoder e = make_text_encoder(ps, "t", 6, cfg);
  randomize(ps, 9, 0.5);
  const std::vector<int> tok{0, 5, 2, 2, 4};
  EncoderOutput o = encode_text(e, tok);
  Mat x;
  for (int id : tok) x.push_back(to_mat(P(ps, "t/embed/table"))[static_cast<std::size_t>(id)]);
  Mat p = ref_dense(ps, "t/prenet/fc", x);
  for (auto& row : p)
    for (double& v : row) v = std::max(0.0, v);
  RefOut ref = ref_cbhg(ps, "t/cbhg", cfg, p);
  EXPECT_LT(max_diff(o.outputs, ref.states), 1e-10);
}

TEST(Encoder, InferenceIsDeterministic) {
  ParamStore ps;
  Encoder e = make_text_encoder(ps, "t", 5, tiny_config());
  randomize(ps, 1, 0.5);
  const std::vector<int> tok{1, 2, 3, 4};
  EncoderOutput a = encode_text(e, tok);
  EncoderOutput b = encode_text(e, tok);
  EXPECT_EQ(a.outputs, b.outputs);
  EXPECT_EQ(a.state, b.state);
}

TEST(Encoder, OutputLengthMatchesInputLength) {
  ParamStore ps;
  Encoder t = make_text_encoder(ps, "t", 5, tiny_config());
  Encoder s = make_speech_encoder(ps, "s", 4, tiny_config());
  randomize(ps, 1, 0.5);
  for (std::size_t len = 1; len <= 9; ++len) {
    std::vector<int> tok(len, 1);
    EXPECT_EQ(encode_text(t, tok).length(), len);
    EXPECT_EQ(encode_speech(s, random_array({len, 4}, len)).length(), len);
  }
}

TEST(Encoder, UnknownSymbolRejected) {
  ParamStore ps;
  Encoder e = make_text_encoder(ps, "t", 5, tiny_config());
  const std::vector<int> tok{1, 5};
  EXPECT_THROW(encode_text(e, tok), InputError);
  EXPECT_THROW(encode_text(e, std::vector<int>{}), InputError);
}

TEST(Encoder, SpeechSingleFrameAndZeroCase) {
  ParamStore ps;
  Encoder e = make_speech_encoder(ps, "s", 4, tiny_config());
  EncoderOutput z = encode_speech(e, Array({6, 4}));
  for (double v : z.outputs.values()) EXPECT_EQ(v, 0.0);
  randomize(ps, 3, 0.5);
  EXPECT_EQ(encode_speech(e, random_array({1, 4}, 1)).outputs.shape(),
            (std::vector<std::size_t>{1, 4}));
}

TEST(Encoder, SpeechBandMismatchRejected) {
  ParamStore ps;
  Encoder e = make_speech_encoder(ps, "s", 4, tiny_config());
  EXPECT_THROW(encode_speech(e, Array({3, 5})), DimensionError);
}

TEST(Encoder, ParametersAreDisjoint) {
  ParamStore ps;
  const EncoderConfig cfg = tiny_config();
  // Two speech encoders of identical architecture, separately stored.
  Encoder a = make_speech_encoder(ps, "a", 4, cfg);
  Encoder b = make_speech_encoder(ps, "b", 4, cfg);
  randomize(ps, 17, 0.5);
  Array x = random_array({5, 4}, 3);
  const EncoderOutput ya = encode_speech(a, x);
  const EncoderOutput yb = encode_speech(b, x);
  EXPECT_NE(ya.outputs, yb.outputs);
  // Mutating b leaves a untouched.
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].name.rfind("b/", 0) == 0) ps[i].value.fill(0.3);
  }
  EXPECT_EQ(encode_speech(a, x).outputs, ya.outputs);
}

TEST(Encoder, FullGradcheck) {
  ParamStore ps;
  const EncoderConfig cfg = tiny_config();
  Encoder e = make_text_encoder(ps, "t", 5, cfg);
  randomize(ps, 19, 0.5);
  const std::vector<int> tok{1, 4, 0, 4};
  Array wo = random_weights({4, 4}, 1);
  Array ws = random_weights({4}, 2);
  EncoderCache cache;
  Rng r1(3);
  encode_text(e, tok, &r1, &cache);
  GradBuffer gb(ps);
  encoder_backward(e, cache, wo, ws, gb);
  auto loss = [&] {
    Rng r(3);
    EncoderOutput o = encode_text(e, tok, &r, nullptr);
    return dot(o.outputs, wo) + dot(o.state, ws);
  };
  GradCheckResult res = grad_check(loss, param_targets(ps, gb));
  EXPECT_LT(res.max_rel_err, 1e-4) << res.worst;
}

}  // namespace
}  // namespace msq
