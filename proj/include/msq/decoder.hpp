// SPDX-License-Identifier: Apache-2.0
//
// Dual-attention autoregressive decoder.
//
// Per output step k, given the previous state and the (masked) encoder
// outputs of both sources:
//
//   o_p   = prenet(y_prev)
//   h_a   = GRU_att([o_p; c_t; c_v], h_a)           attention RNN, o_a = h_a
//   c_t   = attend_text(h_a, o_t)    (zero if the text source is masked)
//   c_v   = attend_speech(h_a, o_v)  (zero if the speech source is masked)
//   x     = proj([h_a; c_t; c_v])
//   x     = x + GRU_l(x, h_d[l])                     for each residual layer
//   y_hat = fc(x)                                    r frames of n_mels
//
// The first attention-RNN state is tanh(W_init [s_t; s_v] + b_init) with the
// masked source's final encoder state replaced by zeros.

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "msq/array.hpp"
#include "msq/encoder.hpp"
#include "msq/layers.hpp"
#include "msq/masking.hpp"

namespace msq {

struct DecoderConfig {
  std::size_t d_attn_rnn = 96;
  std::size_t d_dec_rnn = 96;
  std::size_t dec_layers = 2;
  std::size_t r = 2;
  std::size_t n_mels = 20;
  std::size_t d_prenet = 32;
  double dropout = 0.5;

  static DecoderConfig paper() { return {256, 256, 2, 2, 80, 128, 0.5}; }
  static DecoderConfig desk() { return {96, 96, 2, 2, 20, 32, 0.5}; }
  void validate() const;
};

// --- Additive attention --------------------------------------------------------

/// Scores e_j = v . tanh(h_a W + b + o_j U); weights = softmax(e).
struct Attention {
  Affine query;        // W, b: [d_query, d_att]
  Param* U = nullptr;  // [d_mem, d_att]
  Param* v = nullptr;  // [d_att]
  std::size_t mem_dim = 0;
  std::size_t att_dim = 0;
};

struct AttendResult {
  Array weights;  // [L]
  Array context;  // [d_mem]
};

struct AttendCache {
  Array h;         // query state
  Array activ;     // tanh(...) [L, d_att]
  Array weights;   // [L]
};

Attention make_attention(ParamStore& store, const std::string& name,
                         std::size_t query_dim, std::size_t mem_dim, std::size_t att_dim);
/// Memory projections o U, computed once per utterance.
Array attention_keys(const Attention& att, const Array& memory);
/// Positions >= valid_len get score -1e9 (padding). valid_len 0 means all.
AttendResult attend(const Attention& att, const Array& h, const Array& memory,
                    const Array& keys, std::size_t valid_len = 0,
                    AttendCache* cache = nullptr);
/// Convenience form that computes the keys itself.
AttendResult attend(const Attention& att, const Array& h, const Array& memory);
/// Returns dL/dh; accumulates into d_memory ([L, d_mem]) and d_keys ([L, d_att]).
Array attend_backward(const Attention& att, const AttendCache& cache,
                      const Array& memory, const Array& d_context, Array& d_memory,
                      Array& d_keys, GradBuffer& grads);
/// Folds d_keys into d_memory and dU.
void attention_keys_backward(const Attention& att, const Array& memory,
                             const Array& d_keys, Array& d_memory, GradBuffer& grads);

// --- Decoder ---------------------------------------------------------------------

struct Decoder {
  DecoderConfig cfg;
  std::size_t d_text = 0;    // width of text encoder outputs / context
  std::size_t d_speech = 0;  // width of speech encoder outputs / context
  Prenet prenet;
  Affine init;
  Gru att_rnn;
  std::optional<Attention> att_text;
  std::optional<Attention> att_speech;
  Affine proj;
  std::vector<Gru> layers;
  Affine fc;
};

/// A stand-alone model builds only the attention for its own source; the
/// other context slot then stays permanently zero.
Decoder make_decoder(ParamStore& store, const DecoderConfig& cfg, std::size_t d_text,
                     std::size_t d_speech, bool with_text, bool with_speech);

struct DecoderState {
  Array h_a;                // attention RNN state
  std::vector<Array> h_d;   // per residual layer
  Array c_t;                // previous text context
  Array c_v;                // previous speech context
  Array y_prev;             // last frame fed to the pre-net
  std::size_t k = 0;        // steps taken
};

/// Encoder outputs bound to one decode, with the mask applied up front.
/// A masked source is never read: its pointer is dropped and only its length
/// is kept for the alignment trace.
struct DecoderInputs {
  MaskSelection mask = MaskSelection::Both;
  const EncoderOutput* text = nullptr;
  const EncoderOutput* speech = nullptr;
  Array keys_text;
  Array keys_speech;
  std::size_t text_len = 0;    // 0 if no text source was supplied
  std::size_t speech_len = 0;  // 0 if no speech source was supplied
};

/// Throws InputError when the mask demands a source that is absent or that
/// this decoder has no attention for.
DecoderInputs bind_inputs(const Decoder& dec, const EncoderOutput* text,
                          const EncoderOutput* speech, MaskSelection mask);

struct InitCache {
  Array in;
  Array h;
};

DecoderState init_state(const Decoder& dec, const DecoderInputs& in,
                        InitCache* cache = nullptr);

struct StepCache {
  PrenetCache prenet;
  GruCache att_rnn;
  AttendCache att_text;
  AttendCache att_speech;
  Array proj_in;
  std::vector<GruCache> layers;
  Array fc_in;
};

struct StepResult {
  Array frames;  // [r, n_mels]
  DecoderState next;  // y_prev set to the last predicted frame
  Array w_text;    // attention weights, zeros when masked, empty when absent
  Array w_speech;
};

/// Throws NumericError naming the step on non-finite activations.
StepResult decoder_step(const Decoder& dec, const DecoderState& st,
                        const DecoderInputs& in, Rng* dropout_rng = nullptr,
                        StepCache* cache = nullptr);

struct StateGrad {
  Array h_a;
  std::vector<Array> h_d;
  Array c_t;
  Array c_v;
  static StateGrad zeros(const Decoder& dec);
};

struct MemoryGrads {
  Array text_outputs, text_keys, text_state;
  Array speech_outputs, speech_keys, speech_state;
  static MemoryGrads zeros(const Decoder& dec, const DecoderInputs& in);
};

StateGrad decoder_step_backward(const Decoder& dec, const StepCache& cache,
                                const DecoderInputs& in, const Array& d_frames,
                                const StateGrad& d_next, MemoryGrads& mem,
                                GradBuffer& grads);
/// Backward of init_state into the final encoder states of active sources.
void init_state_backward(const Decoder& dec, const InitCache& cache,
                         const DecoderInputs& in, const Array& d_h_a, MemoryGrads& mem,
                         GradBuffer& grads);

// --- Sequence decoding -------------------------------------------------------------

struct AlignmentTrace {
  MaskSelection mask = MaskSelection::Both;
  std::vector<Array> text;    // one weight vector per step
  std::vector<Array> speech;
};

struct DecodeResult {
  Array frames;  // [steps * r, n_mels]
  AlignmentTrace trace;
  std::size_t steps = 0;
};

struct DecodeTape {
  InitCache init;
  std::vector<StepCache> steps;
};

/// Number of decoder steps for a target of T frames: ceil(T / r).
std::size_t decoder_steps_for(std::size_t frames, std::size_t r);

/// Teacher forcing: step k feeds target row k*r - 1 (a zero GO frame at k = 0).
DecodeResult decode_teacher_forced(const Decoder& dec, const DecoderInputs& in,
                                   const Array& target, Rng* dropout_rng = nullptr,
                                   DecodeTape* tape = nullptr);

/// Backward through an unrolled teacher-forced decode. d_frames has the shape
/// of the decode's output; returns encoder-facing gradients.
MemoryGrads decode_backward(const Decoder& dec, const DecodeTape& tape,
                            const DecoderInputs& in, const Array& d_frames,
                            GradBuffer& grads);

struct GenerateOptions {
  std::size_t max_steps = 100;
  // A group whose mean |frame| is below the threshold is "quiet". Rendered
  // silence sits at 0.05 and voiced frames average about 0.13, so the
  // threshold goes between the two.
  double stop_threshold = 0.08;
  std::size_t stop_patience = 2;  // stop after this many quiet groups in a row
};

/// Free-running decode: each step feeds back its own last predicted frame.
/// Decoder pre-net dropout is active iff `dropout_rng` is non-null.
DecodeResult generate(const Decoder& dec, const DecoderInputs& in,
                      const GenerateOptions& opts, Rng* dropout_rng = nullptr);

}  // namespace msq
