// SPDX-License-Identifier: Apache-2.0
//
// The two input encoders: symbol sequence (text) and source spectrogram
// (speech). Both are a pre-net followed by a CBHG block; they share the
// architecture but never parameter storage.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msq/array.hpp"
#include "msq/layers.hpp"

namespace msq {

struct EncoderConfig {
  std::size_t d_embed = 32;
  std::size_t d_prenet = 16;
  std::size_t bank_K = 8;
  std::size_t conv_channels = 32;
  std::size_t highway_layers = 2;
  std::size_t d_gru = 32;
  double dropout = 0.5;

  static EncoderConfig paper() { return {256, 128, 16, 128, 4, 128, 0.5}; }
  static EncoderConfig desk() { return {32, 16, 8, 32, 2, 32, 0.5}; }

  /// Width of the encoder outputs and of the final state (bi-GRU concat).
  std::size_t d_state() const { return 2 * d_gru; }
  void validate() const;
};

// CBHG: conv bank -> max pool -> two width-3 projections (ReLU, linear) ->
// residual add of the input -> optional affine to the highway width ->
// highway stack -> bidirectional GRU.
struct Cbhg {
  ConvBank bank;
  Conv1d proj_relu;
  Conv1d proj_linear;
  std::optional<Affine> to_highway;
  std::vector<Highway> highways;
  BiGru gru;
};

struct CbhgCache {
  ConvBankCache bank;
  MaxPoolResult pool;
  Array cols_relu, activ_relu, cols_linear;
  Array residual;  // input to to_highway (or to the highway stack)
  std::vector<HighwayCache> highways;
  BiGruCache gru;
};

Cbhg make_cbhg(ParamStore& store, const std::string& name, std::size_t in_dim,
               const EncoderConfig& cfg);
/// Throws InputError for an empty sequence.
BiGruOutput cbhg_forward(const Cbhg& cbhg, const Array& x, CbhgCache* cache);
Array cbhg_backward(const Cbhg& cbhg, const CbhgCache& cache, const Array& d_states,
                    const Array& d_final, GradBuffer& grads);

enum class EncoderKind { Text, Speech };

struct Encoder {
  EncoderKind kind = EncoderKind::Text;
  std::optional<Embedding> embed;  // text only
  Prenet prenet;
  Cbhg cbhg;
  std::size_t in_dim = 0;  // vocab for text, n_mels for speech
};

/// s (final state) and o (per-position outputs) of one encoder.
struct EncoderOutput {
  Array state;    // [d_state]
  Array outputs;  // [len, d_state]
  std::size_t length() const { return outputs.rows(); }
};

struct EncoderCache {
  std::vector<int> tokens;
  PrenetCache prenet;
  CbhgCache cbhg;
};

Encoder make_text_encoder(ParamStore& store, const std::string& name,
                          std::size_t vocab, const EncoderConfig& cfg);
Encoder make_speech_encoder(ParamStore& store, const std::string& name,
                            std::size_t n_mels, const EncoderConfig& cfg);

/// Embedding -> pre-net -> CBHG. Dropout is active only when `dropout_rng`
/// is non-null.
EncoderOutput encode_text(const Encoder& enc, std::span<const int> tokens,
                          Rng* dropout_rng = nullptr, EncoderCache* cache = nullptr);
/// Pre-net -> CBHG on raw frames.
EncoderOutput encode_speech(const Encoder& enc, const Array& frames,
                            Rng* dropout_rng = nullptr, EncoderCache* cache = nullptr);
void encoder_backward(const Encoder& enc, const EncoderCache& cache,
                      const Array& d_outputs, const Array& d_state, GradBuffer& grads);

}  // namespace msq
