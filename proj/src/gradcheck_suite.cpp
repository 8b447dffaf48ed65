// SPDX-License-Identifier: Apache-2.0

#include "msq/gradcheck_suite.hpp"

#include <functional>

#include "msq/decoder.hpp"
#include "msq/encoder.hpp"
#include "msq/gradcheck.hpp"
#include "msq/layers.hpp"
#include "msq/model.hpp"
#include "msq/rng.hpp"

namespace msq {
namespace {

constexpr double kParamScale = 1.0;

void randomize(ParamStore& ps, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (double& v : ps[i].value.values()) v = rng.uniform(-kParamScale, kParamScale);
  }
}

Array random_input(std::vector<std::size_t> shape, std::uint64_t seed) {
  Rng rng(seed);
  Array a(std::move(shape));
  for (double& v : a.values()) v = rng.uniform(-1.0, 1.0);
  return a;
}

struct Runner {
  std::uint64_t seed;
  double eps;
  std::vector<LayerCheck> out;

  void record(const std::string& name, const std::function<double()>& loss,
              const std::vector<GradTarget>& targets) {
    GradCheckResult r = grad_check(loss, targets, eps);
    out.push_back({name, r.max_rel_err, r.worst, r.checked, r.worst_analytic, r.worst_numeric});
  }
};

ModelConfig tiny_model() {
  ModelConfig c;
  c.kind = ModelKind::Joint;
  c.vocab = 5;
  c.enc.d_embed = 3;
  c.enc.d_prenet = 3;
  c.enc.bank_K = 2;
  c.enc.conv_channels = 2;
  c.enc.highway_layers = 1;
  c.enc.d_gru = 2;
  c.dec.d_attn_rnn = 3;
  c.dec.d_dec_rnn = 3;
  c.dec.dec_layers = 2;
  c.dec.r = 2;
  c.dec.n_mels = 3;
  c.dec.d_prenet = 2;
  return c;
}

void check_affine(Runner& run) {
  ParamStore ps;
  Affine a = make_affine(ps, "affine", 4, 3);
  randomize(ps, run.seed);
  Array x = random_input({5, 4}, run.seed + 1);
  Array w = random_weights({5, 3}, run.seed + 2);
  GradBuffer gb(ps);
  Array dx = affine_backward(a, x, w, gb);
  auto targets = param_targets(ps, gb);
  targets.push_back({"x", x.values(), dx.values()});
  run.record("affine", [&] { return dot(affine_forward(a, x), w); }, targets);
}

void check_embedding(Runner& run) {
  ParamStore ps;
  Embedding e = make_embedding(ps, "embedding", 5, 3);
  randomize(ps, run.seed);
  const std::vector<int> ids{0, 3, 3, 1};
  Array w = random_weights({4, 3}, run.seed + 2);
  GradBuffer gb(ps);
  embedding_backward(e, ids, w, gb);
  run.record("embedding", [&] { return dot(embedding_forward(e, ids), w); },
             param_targets(ps, gb));
}

void check_gru(Runner& run) {
  ParamStore ps;
  Gru g = make_gru(ps, "gru", 3, 4);
  randomize(ps, run.seed);
  Array x = random_input({3}, run.seed + 1);
  Array h = random_input({4}, run.seed + 3);
  Array w = random_weights({4}, run.seed + 2);
  GruCache cache;
  gru_step(g, x, h, &cache);
  GradBuffer gb(ps);
  GruGrads d = gru_step_backward(g, cache, w, gb);
  auto targets = param_targets(ps, gb);
  targets.push_back({"x", x.values(), d.dx.values()});
  targets.push_back({"h", h.values(), d.dh.values()});
  run.record("gru", [&] { return dot(gru_step(g, x, h, nullptr), w); }, targets);
}

void check_bigru(Runner& run) {
  ParamStore ps;
  BiGru g = make_bigru(ps, "bigru", 2, 3);
  randomize(ps, run.seed);
  Array x = random_input({5, 2}, run.seed + 1);
  Array ws = random_weights({5, 6}, run.seed + 2);
  Array wf = random_weights({6}, run.seed + 3);
  BiGruCache cache;
  bigru_forward(g, x, &cache);
  GradBuffer gb(ps);
  Array dx = bigru_backward(g, cache, ws, wf, gb);
  auto targets = param_targets(ps, gb);
  targets.push_back({"x", x.values(), dx.values()});
  run.record("bigru",
             [&] {
               BiGruOutput o = bigru_forward(g, x, nullptr);
               return dot(o.states, ws) + dot(o.final, wf);
             },
             targets);
}

void check_conv(Runner& run) {
  ParamStore ps;
  Conv1d c = make_conv1d(ps, "conv1d", 3, 2, 3);
  randomize(ps, run.seed);
  Array x = random_input({6, 2}, run.seed + 1);
  Array w = random_weights({6, 3}, run.seed + 2);
  Array cols;
  conv1d_forward(c, x, &cols);
  GradBuffer gb(ps);
  Array dx = conv1d_backward(c, cols, w, gb);
  auto targets = param_targets(ps, gb);
  targets.push_back({"x", x.values(), dx.values()});
  run.record("conv1d", [&] { return dot(conv1d_forward(c, x, nullptr), w); }, targets);
}

void check_conv_bank(Runner& run) {
  ParamStore ps;
  ConvBank bank = make_conv_bank(ps, "conv_bank", 3, 2, 2);
  randomize(ps, run.seed);
  Array x = random_input({6, 2}, run.seed + 1);
  Array w = random_weights({6, 6}, run.seed + 2);
  ConvBankCache cache;
  conv_bank_forward(bank, x, &cache);
  GradBuffer gb(ps);
  Array dx = conv_bank_backward(bank, cache, w, gb);
  auto targets = param_targets(ps, gb);
  targets.push_back({"x", x.values(), dx.values()});
  run.record("conv_bank", [&] { return dot(conv_bank_forward(bank, x, nullptr), w); },
             targets);
}

void check_maxpool(Runner& run) {
  Array x = random_input({6, 3}, run.seed + 1);
  Array w = random_weights({6, 3}, run.seed + 2);
  Array dx = maxpool1d_backward(maxpool1d_same(x), w);
  run.record("maxpool", [&] { return dot(maxpool1d_same(x).y, w); },
             {{"x", x.values(), dx.values()}});
}

void check_highway(Runner& run) {
  ParamStore ps;
  Highway h = make_highway(ps, "highway", 3);
  randomize(ps, run.seed);
  Array x = random_input({4, 3}, run.seed + 1);
  Array w = random_weights({4, 3}, run.seed + 2);
  HighwayCache cache;
  highway_forward(h, x, &cache);
  GradBuffer gb(ps);
  Array dx = highway_backward(h, cache, w, gb);
  auto targets = param_targets(ps, gb);
  targets.push_back({"x", x.values(), dx.values()});
  run.record("highway", [&] { return dot(highway_forward(h, x, nullptr), w); }, targets);
}

void check_prenet(Runner& run) {
  ParamStore ps;
  Prenet p = make_prenet(ps, "prenet", 3, 4, 0.5);
  randomize(ps, run.seed);
  Array x = random_input({5, 3}, run.seed + 1);
  Array w = random_weights({5, 4}, run.seed + 2);
  const std::uint64_t drop_seed = run.seed + 4;
  PrenetCache cache;
  Rng r0(drop_seed);
  prenet_forward(p, x, &r0, &cache);
  GradBuffer gb(ps);
  Array dx = prenet_backward(p, cache, w, gb);
  auto targets = param_targets(ps, gb);
  targets.push_back({"x", x.values(), dx.values()});
  run.record("prenet",
             [&] {
               Rng r(drop_seed);
               return dot(prenet_forward(p, x, &r, nullptr), w);
             },
             targets);
}

void check_encoders(Runner& run) {
  const ModelConfig cfg = tiny_model();
  for (bool text : {true, false}) {
    ParamStore ps;
    Encoder e = text ? make_text_encoder(ps, "enc", cfg.vocab, cfg.enc)
                     : make_speech_encoder(ps, "enc", cfg.dec.n_mels, cfg.enc);
    randomize(ps, run.seed);
    const std::vector<int> tokens{1, 4, 0, 2};
    Array frames = random_input({5, cfg.dec.n_mels}, run.seed + 1);
    const std::size_t T = text ? tokens.size() : frames.rows();
    Array wo = random_weights({T, cfg.enc.d_state()}, run.seed + 2);
    Array ws = random_weights({cfg.enc.d_state()}, run.seed + 3);
    const std::uint64_t drop_seed = run.seed + 4;
    auto forward = [&](EncoderCache* cache) {
      Rng r(drop_seed);
      return text ? encode_text(e, tokens, &r, cache) : encode_speech(e, frames, &r, cache);
    };
    EncoderCache cache;
    forward(&cache);
    GradBuffer gb(ps);
    encoder_backward(e, cache, wo, ws, gb);
    run.record(text ? "text_encoder" : "speech_encoder",
               [&] {
                 EncoderOutput o = forward(nullptr);
                 return dot(o.outputs, wo) + dot(o.state, ws);
               },
               param_targets(ps, gb));
  }
}

void check_attention(Runner& run) {
  ParamStore ps;
  Attention a = make_attention(ps, "attention", 3, 2, 4);
  randomize(ps, run.seed);
  Array h = random_input({3}, run.seed + 1);
  Array mem = random_input({5, 2}, run.seed + 3);
  Array w = random_weights({2}, run.seed + 2);
  Array keys = attention_keys(a, mem);
  AttendCache cache;
  attend(a, h, mem, keys, 0, &cache);
  GradBuffer gb(ps);
  Array d_mem({5, 2}), d_keys({5, 4});
  Array dh = attend_backward(a, cache, mem, w, d_mem, d_keys, gb);
  attention_keys_backward(a, mem, d_keys, d_mem, gb);
  auto targets = param_targets(ps, gb);
  targets.push_back({"h", h.values(), dh.values()});
  targets.push_back({"memory", mem.values(), d_mem.values()});
  run.record("attention", [&] { return dot(attend(a, h, mem).context, w); }, targets);
}

// Dual-attention decoder unrolled over `steps` teacher-forced steps. The
// encoder outputs and final states are inputs of the check, so gradients are
// verified with respect to them as well as to every decoder parameter.
void check_unrolled(Runner& run, std::size_t steps) {
  const ModelConfig cfg = tiny_model();
  const std::size_t d = cfg.enc.d_state();
  for (MaskSelection mask : {MaskSelection::Both, MaskSelection::TextOnly,
                             MaskSelection::SpeechOnly}) {
    ParamStore ps;
    Decoder dec = make_decoder(ps, cfg.dec, d, d, true, true);
    randomize(ps, run.seed);
    EncoderOutput text{random_input({d}, run.seed + 5), random_input({4, d}, run.seed + 6)};
    EncoderOutput speech{random_input({d}, run.seed + 7), random_input({5, d}, run.seed + 8)};
    Array target = random_input({steps * cfg.dec.r, cfg.dec.n_mels}, run.seed + 3);
    Array w = random_weights(target.shape(), run.seed + 2);
    const std::uint64_t drop_seed = run.seed + 4;

    auto forward = [&](DecodeTape* tape) {
      Rng r(drop_seed);
      DecoderInputs in = bind_inputs(dec, &text, &speech, mask);
      return decode_teacher_forced(dec, in, target, &r, tape);
    };
    DecodeTape tape;
    forward(&tape);
    GradBuffer gb(ps);
    MemoryGrads mem = decode_backward(dec, tape, bind_inputs(dec, &text, &speech, mask), w, gb);
    auto targets = param_targets(ps, gb);
    if (uses_text(mask)) {
      targets.push_back({"text_outputs", text.outputs.values(), mem.text_outputs.values()});
      targets.push_back({"text_state", text.state.values(), mem.text_state.values()});
    }
    if (uses_speech(mask)) {
      targets.push_back({"speech_outputs", speech.outputs.values(), mem.speech_outputs.values()});
      targets.push_back({"speech_state", speech.state.values(), mem.speech_state.values()});
    }
    run.record("decoder_unrolled_" + to_string(mask),
               [&] { return dot(forward(nullptr).frames, w); }, targets);
  }
}

}  // namespace

std::vector<LayerCheck> run_gradcheck_suite(std::uint64_t seed, std::size_t decoder_steps,
                                            double epsilon) {
  Runner run{seed, epsilon, {}};
  check_affine(run);
  check_embedding(run);
  check_gru(run);
  check_bigru(run);
  check_conv(run);
  check_conv_bank(run);
  check_maxpool(run);
  check_highway(run);
  check_prenet(run);
  check_encoders(run);
  check_attention(run);
  check_unrolled(run, decoder_steps);
  return run.out;
}

}  // namespace msq
