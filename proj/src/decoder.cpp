// SPDX-License-Identifier: Apache-2.0

#include "msq/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "msq/error.hpp"

namespace msq {
namespace {

constexpr double kPadScore = -1e9;

void add_slice(Array& dst, const Array& src, std::size_t offset) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[offset + i];
}

}  // namespace

void DecoderConfig::validate() const {
  if (d_attn_rnn == 0 || d_dec_rnn == 0 || r == 0 || n_mels == 0 || d_prenet == 0) {
    throw ConfigError("decoder dimensions must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("decoder dropout must be in [0, 1)");
  }
}

// --- Attention -------------------------------------------------------------------

Attention make_attention(ParamStore& store, const std::string& name,
                         std::size_t query_dim, std::size_t mem_dim, std::size_t att_dim) {
  Attention a;
  a.query = make_affine(store, name + "/query", query_dim, att_dim);
  a.U = store.add(name + "/U", {mem_dim, att_dim}, Init::Uniform);
  a.v = store.add(name + "/v", {att_dim}, Init::Uniform);
  a.mem_dim = mem_dim;
  a.att_dim = att_dim;
  return a;
}

Array attention_keys(const Attention& att, const Array& memory) {
  if (memory.rank() != 2 || memory.cols() != att.mem_dim) {
    throw DimensionError("attention memory " + memory.shape_string() +
                         " does not match width " + std::to_string(att.mem_dim));
  }
  return matmul(memory, att.U->value);
}

AttendResult attend(const Attention& att, const Array& h, const Array& memory,
                    const Array& keys, std::size_t valid_len, AttendCache* cache) {
  if (memory.rank() != 2 || memory.rows() == 0) throw InputError("attend: empty memory");
  const std::size_t L = memory.rows();
  const std::size_t A = att.att_dim;
  const std::size_t valid = valid_len == 0 ? L : std::min(valid_len, L);
  const Array q = affine_forward(att.query, h);
  const double* v = att.v->value.data();

  Array activ({L, A});
  Array scores({L});
  for (std::size_t j = 0; j < L; ++j) {
    if (j >= valid) {
      scores[j] = kPadScore;
      continue;
    }
    auto k = keys.row(j);
    auto a = activ.row(j);
    double e = 0.0;
    for (std::size_t i = 0; i < A; ++i) {
      a[i] = std::tanh(q[i] + k[i]);
      e += v[i] * a[i];
    }
    scores[j] = e;
  }
  AttendResult res;
  res.weights = softmax(scores);
  res.context = matmul(res.weights, memory);
  if (cache != nullptr) {
    cache->h = h;
    cache->activ = std::move(activ);
    cache->weights = res.weights;
  }
  return res;
}

AttendResult attend(const Attention& att, const Array& h, const Array& memory) {
  return attend(att, h, memory, attention_keys(att, memory));
}

Array attend_backward(const Attention& att, const AttendCache& c, const Array& memory,
                      const Array& d_context, Array& d_memory, Array& d_keys,
                      GradBuffer& grads) {
  const std::size_t L = memory.rows();
  const std::size_t A = att.att_dim;
  const std::size_t D = memory.cols();
  const double* v = att.v->value.data();

  // context = sum_j w_j o_j
  Array dw({L});
  for (std::size_t j = 0; j < L; ++j) {
    auto o = memory.row(j);
    auto dm = d_memory.row(j);
    const double w = c.weights[j];
    double s = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      s += d_context[i] * o[i];
      dm[i] += w * d_context[i];
    }
    dw[j] = s;
  }
  double wdw = 0.0;
  for (std::size_t j = 0; j < L; ++j) wdw += c.weights[j] * dw[j];

  Array dq({A});
  Array& dv = grads[*att.v];
  for (std::size_t j = 0; j < L; ++j) {
    const double de = c.weights[j] * (dw[j] - wdw);
    if (de == 0.0) continue;
    auto a = c.activ.row(j);
    auto dk = d_keys.row(j);
    for (std::size_t i = 0; i < A; ++i) {
      dv[i] += de * a[i];
      const double dpre = de * v[i] * (1.0 - a[i] * a[i]);
      dk[i] += dpre;
      dq[i] += dpre;
    }
  }
  return affine_backward(att.query, c.h, dq, grads);
}

void attention_keys_backward(const Attention& att, const Array& memory,
                             const Array& d_keys, Array& d_memory, GradBuffer& grads) {
  add_matmul_tn(grads[*att.U], memory, d_keys);
  d_memory += matmul_nt(d_keys, att.U->value);
}

// --- Decoder ---------------------------------------------------------------------

Decoder make_decoder(ParamStore& store, const DecoderConfig& cfg, std::size_t d_text,
                     std::size_t d_speech, bool with_text, bool with_speech) {
  cfg.validate();
  if (!with_text && !with_speech) throw ConfigError("decoder needs at least one source");
  Decoder d;
  d.cfg = cfg;
  d.d_text = d_text;
  d.d_speech = d_speech;
  d.prenet = make_prenet(store, "dec/prenet", cfg.n_mels, cfg.d_prenet, cfg.dropout);
  d.init = make_affine(store, "dec/init", d_text + d_speech, cfg.d_attn_rnn);
  d.att_rnn = make_gru(store, "dec/att_rnn", cfg.d_prenet + d_text + d_speech,
                       cfg.d_attn_rnn);
  if (with_text) {
    d.att_text = make_attention(store, "att_text", cfg.d_attn_rnn, d_text, cfg.d_attn_rnn);
  }
  if (with_speech) {
    d.att_speech =
        make_attention(store, "att_speech", cfg.d_attn_rnn, d_speech, cfg.d_attn_rnn);
  }
  d.proj = make_affine(store, "dec/proj", cfg.d_attn_rnn + d_text + d_speech, cfg.d_dec_rnn);
  for (std::size_t l = 0; l < cfg.dec_layers; ++l) {
    d.layers.push_back(
        make_gru(store, "dec/rnn" + std::to_string(l), cfg.d_dec_rnn, cfg.d_dec_rnn));
  }
  d.fc = make_affine(store, "dec/fc", cfg.d_dec_rnn, cfg.r * cfg.n_mels);
  return d;
}

DecoderInputs bind_inputs(const Decoder& dec, const EncoderOutput* text,
                          const EncoderOutput* speech, MaskSelection mask) {
  DecoderInputs in;
  in.mask = mask;
  in.text_len = text ? text->length() : 0;
  in.speech_len = speech ? speech->length() : 0;
  if (uses_text(mask)) {
    if (text == nullptr) throw InputError("mask " + to_string(mask) + " needs a text input");
    if (!dec.att_text) throw InputError("model has no text attention");
    if (text->outputs.cols() != dec.d_text || text->state.size() != dec.d_text) {
      throw DimensionError("text encoder output width does not match decoder");
    }
    in.text = text;
    in.keys_text = attention_keys(*dec.att_text, text->outputs);
  }
  if (uses_speech(mask)) {
    if (speech == nullptr) {
      throw InputError("mask " + to_string(mask) + " needs a speech input");
    }
    if (!dec.att_speech) throw InputError("model has no speech attention");
    if (speech->outputs.cols() != dec.d_speech || speech->state.size() != dec.d_speech) {
      throw DimensionError("speech encoder output width does not match decoder");
    }
    in.speech = speech;
    in.keys_speech = attention_keys(*dec.att_speech, speech->outputs);
  }
  return in;
}

DecoderState init_state(const Decoder& dec, const DecoderInputs& in, InitCache* cache) {
  Array s({dec.d_text + dec.d_speech});
  if (in.text != nullptr) {
    std::copy(in.text->state.values().begin(), in.text->state.values().end(),
              s.values().begin());
  }
  if (in.speech != nullptr) {
    std::copy(in.speech->state.values().begin(), in.speech->state.values().end(),
              s.values().begin() + static_cast<std::ptrdiff_t>(dec.d_text));
  }
  Array h = affine_forward(dec.init, s);
  for (double& x : h.values()) x = std::tanh(x);

  DecoderState st;
  st.h_a = h;
  st.h_d.assign(dec.layers.size(), Array({dec.cfg.d_dec_rnn}));
  st.c_t = Array({dec.d_text});
  st.c_v = Array({dec.d_speech});
  st.y_prev = Array({dec.cfg.n_mels});
  st.k = 0;
  if (cache != nullptr) {
    cache->in = std::move(s);
    cache->h = std::move(h);
  }
  return st;
}

StepResult decoder_step(const Decoder& dec, const DecoderState& st,
                        const DecoderInputs& in, Rng* dropout_rng, StepCache* cache) {
  const DecoderConfig& cfg = dec.cfg;
  if (!st.y_prev.all_finite() || !st.h_a.all_finite()) {
    throw NumericError("non-finite decoder input at step " + std::to_string(st.k + 1));
  }
  Array op = prenet_forward(dec.prenet, st.y_prev, dropout_rng,
                            cache ? &cache->prenet : nullptr);
  Array att_in = concat({&op, &st.c_t, &st.c_v});
  Array h_a = gru_step(dec.att_rnn, att_in, st.h_a, cache ? &cache->att_rnn : nullptr);

  StepResult res;
  Array c_t({dec.d_text});
  Array c_v({dec.d_speech});
  if (in.text != nullptr) {
    AttendResult a = attend(*dec.att_text, h_a, in.text->outputs, in.keys_text, 0,
                            cache ? &cache->att_text : nullptr);
    c_t = std::move(a.context);
    res.w_text = std::move(a.weights);
  } else if (in.text_len > 0) {
    res.w_text = Array({in.text_len});
  }
  if (in.speech != nullptr) {
    AttendResult a = attend(*dec.att_speech, h_a, in.speech->outputs, in.keys_speech, 0,
                            cache ? &cache->att_speech : nullptr);
    c_v = std::move(a.context);
    res.w_speech = std::move(a.weights);
  } else if (in.speech_len > 0) {
    res.w_speech = Array({in.speech_len});
  }

  Array proj_in = concat({&h_a, &c_t, &c_v});
  Array x = affine_forward(dec.proj, proj_in);
  res.next.h_d.resize(dec.layers.size());
  if (cache != nullptr) cache->layers.assign(dec.layers.size(), {});
  for (std::size_t l = 0; l < dec.layers.size(); ++l) {
    Array h = gru_step(dec.layers[l], x, st.h_d[l], cache ? &cache->layers[l] : nullptr);
    x += h;
    res.next.h_d[l] = std::move(h);
  }
  Array out = affine_forward(dec.fc, x);
  if (!out.all_finite() || !h_a.all_finite()) {
    throw NumericError("non-finite decoder activation at step " + std::to_string(st.k + 1));
  }
  res.frames = out.reshaped({cfg.r, cfg.n_mels});
  res.next.h_a = std::move(h_a);
  res.next.c_t = std::move(c_t);
  res.next.c_v = std::move(c_v);
  res.next.y_prev = res.frames.row_copy(cfg.r - 1);
  res.next.k = st.k + 1;
  if (cache != nullptr) {
    cache->proj_in = std::move(proj_in);
    cache->fc_in = std::move(x);
  }
  return res;
}

StateGrad StateGrad::zeros(const Decoder& dec) {
  StateGrad g;
  g.h_a = Array({dec.cfg.d_attn_rnn});
  g.h_d.assign(dec.layers.size(), Array({dec.cfg.d_dec_rnn}));
  g.c_t = Array({dec.d_text});
  g.c_v = Array({dec.d_speech});
  return g;
}

MemoryGrads MemoryGrads::zeros(const Decoder& dec, const DecoderInputs& in) {
  MemoryGrads m;
  if (in.text != nullptr) {
    m.text_outputs = Array::zeros_like(in.text->outputs);
    m.text_keys = Array::zeros_like(in.keys_text);
    m.text_state = Array({dec.d_text});
  }
  if (in.speech != nullptr) {
    m.speech_outputs = Array::zeros_like(in.speech->outputs);
    m.speech_keys = Array::zeros_like(in.keys_speech);
    m.speech_state = Array({dec.d_speech});
  }
  return m;
}

StateGrad decoder_step_backward(const Decoder& dec, const StepCache& c,
                                const DecoderInputs& in, const Array& d_frames,
                                const StateGrad& d_next, MemoryGrads& mem,
                                GradBuffer& grads) {
  const DecoderConfig& cfg = dec.cfg;
  StateGrad d_prev;
  d_prev.h_d.resize(dec.layers.size());

  Array dx = affine_backward(dec.fc, c.fc_in, d_frames.reshaped({cfg.r * cfg.n_mels}), grads);
  for (std::size_t l = dec.layers.size(); l-- > 0;) {
    Array dh = dx + d_next.h_d[l];
    GruGrads g = gru_step_backward(dec.layers[l], c.layers[l], dh, grads);
    d_prev.h_d[l] = std::move(g.dh);
    dx += g.dx;
  }
  Array d_proj_in = affine_backward(dec.proj, c.proj_in, dx, grads);

  const std::size_t A = cfg.d_attn_rnn;
  Array dh_a = d_next.h_a;
  add_slice(dh_a, d_proj_in, 0);
  if (in.text != nullptr) {
    Array dc = d_next.c_t;
    add_slice(dc, d_proj_in, A);
    dh_a += attend_backward(*dec.att_text, c.att_text, in.text->outputs, dc,
                            mem.text_outputs, mem.text_keys, grads);
  }
  if (in.speech != nullptr) {
    Array dc = d_next.c_v;
    add_slice(dc, d_proj_in, A + dec.d_text);
    dh_a += attend_backward(*dec.att_speech, c.att_speech, in.speech->outputs, dc,
                            mem.speech_outputs, mem.speech_keys, grads);
  }

  GruGrads g = gru_step_backward(dec.att_rnn, c.att_rnn, dh_a, grads);
  d_prev.h_a = std::move(g.dh);
  const std::size_t P = cfg.d_prenet;
  prenet_backward(dec.prenet, c.prenet, slice(g.dx, 0, P), grads);
  d_prev.c_t = slice(g.dx, P, dec.d_text);
  d_prev.c_v = slice(g.dx, P + dec.d_text, dec.d_speech);
  return d_prev;
}

void init_state_backward(const Decoder& dec, const InitCache& c, const DecoderInputs& in,
                         const Array& d_h_a, MemoryGrads& mem, GradBuffer& grads) {
  Array d_pre = d_h_a;
  for (std::size_t i = 0; i < d_pre.size(); ++i) d_pre[i] *= 1.0 - c.h[i] * c.h[i];
  Array d_in = affine_backward(dec.init, c.in, d_pre, grads);
  if (in.text != nullptr) add_slice(mem.text_state, d_in, 0);
  if (in.speech != nullptr) add_slice(mem.speech_state, d_in, dec.d_text);
}

// --- Sequence decoding -----------------------------------------------------------

std::size_t decoder_steps_for(std::size_t frames, std::size_t r) {
  return (frames + r - 1) / r;
}

namespace {

void record(DecodeResult& res, StepResult& step, std::size_t r) {
  for (std::size_t i = 0; i < r; ++i) {
    res.frames.set_row(res.steps * r + i, step.frames.row(i));
  }
  if (!step.w_text.empty()) res.trace.text.push_back(std::move(step.w_text));
  if (!step.w_speech.empty()) res.trace.speech.push_back(std::move(step.w_speech));
  ++res.steps;
}

}  // namespace

DecodeResult decode_teacher_forced(const Decoder& dec, const DecoderInputs& in,
                                   const Array& target, Rng* dropout_rng, DecodeTape* tape) {
  const DecoderConfig& cfg = dec.cfg;
  if (target.rank() != 2 || target.rows() == 0) {
    throw InputError("teacher-forced decode needs a non-empty target");
  }
  if (target.cols() != cfg.n_mels) {
    throw DimensionError("target has " + std::to_string(target.cols()) +
                         " bands, decoder expects " + std::to_string(cfg.n_mels));
  }
  const std::size_t steps = decoder_steps_for(target.rows(), cfg.r);
  DecodeResult res;
  res.trace.mask = in.mask;
  res.frames = Array({steps * cfg.r, cfg.n_mels});
  if (tape != nullptr) tape->steps.assign(steps, {});

  DecoderState st = init_state(dec, in, tape ? &tape->init : nullptr);
  for (std::size_t k = 0; k < steps; ++k) {
    if (k > 0) st.y_prev = target.row_copy(k * cfg.r - 1);
    StepResult step = decoder_step(dec, st, in, dropout_rng, tape ? &tape->steps[k] : nullptr);
    st = std::move(step.next);
    record(res, step, cfg.r);
  }
  return res;
}

MemoryGrads decode_backward(const Decoder& dec, const DecodeTape& tape,
                            const DecoderInputs& in, const Array& d_frames,
                            GradBuffer& grads) {
  const std::size_t r = dec.cfg.r;
  MemoryGrads mem = MemoryGrads::zeros(dec, in);
  StateGrad d_next = StateGrad::zeros(dec);
  Array d_step({r, dec.cfg.n_mels});
  for (std::size_t k = tape.steps.size(); k-- > 0;) {
    for (std::size_t i = 0; i < r; ++i) d_step.set_row(i, d_frames.row(k * r + i));
    d_next = decoder_step_backward(dec, tape.steps[k], in, d_step, d_next, mem, grads);
  }
  init_state_backward(dec, tape.init, in, d_next.h_a, mem, grads);
  if (in.text != nullptr) {
    attention_keys_backward(*dec.att_text, in.text->outputs, mem.text_keys,
                            mem.text_outputs, grads);
  }
  if (in.speech != nullptr) {
    attention_keys_backward(*dec.att_speech, in.speech->outputs, mem.speech_keys,
                            mem.speech_outputs, grads);
  }
  return mem;
}

DecodeResult generate(const Decoder& dec, const DecoderInputs& in,
                      const GenerateOptions& opts, Rng* dropout_rng) {
  if (opts.max_steps < 1) throw ConfigError("generate: max_steps must be >= 1");
  const DecoderConfig& cfg = dec.cfg;
  DecodeResult res;
  res.trace.mask = in.mask;
  res.frames = Array({opts.max_steps * cfg.r, cfg.n_mels});

  DecoderState st = init_state(dec, in);
  std::size_t quiet = 0;
  while (res.steps < opts.max_steps) {
    StepResult step = decoder_step(dec, st, in, dropout_rng);
    double energy = 0.0;
    for (double v : step.frames.values()) energy += std::abs(v);
    energy /= static_cast<double>(step.frames.size());
    st = std::move(step.next);
    record(res, step, cfg.r);
    quiet = energy < opts.stop_threshold ? quiet + 1 : 0;
    if (opts.stop_patience > 0 && quiet >= opts.stop_patience) break;
  }
  if (res.steps < opts.max_steps) {
    Array trimmed({res.steps * cfg.r, cfg.n_mels});
    std::copy_n(res.frames.data(), trimmed.size(), trimmed.data());
    res.frames = std::move(trimmed);
  }
  return res;
}

}  // namespace msq
