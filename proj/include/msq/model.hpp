// SPDX-License-Identifier: Apache-2.0
//
// The multi-source sequence-to-sequence model: optional text encoder,
// optional speech encoder, and the dual-attention decoder.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

#include "msq/decoder.hpp"
#include "msq/encoder.hpp"
#include "msq/masking.hpp"
#include "msq/param.hpp"

namespace msq {

/// Tts and Vc are the stand-alone single-source models; Joint has both.
enum class ModelKind { Tts, Vc, Joint };

std::string to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& s);

struct ModelConfig {
  ModelKind kind = ModelKind::Joint;
  std::size_t vocab = 12;
  EncoderConfig enc = EncoderConfig::desk();
  DecoderConfig dec = DecoderConfig::desk();
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ModelKind kind() const { return cfg_.kind; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  bool has_text() const { return text_.has_value(); }
  bool has_speech() const { return speech_.has_value(); }
  const Encoder& text_encoder() const;
  const Encoder& speech_encoder() const;
  const Decoder& decoder() const { return dec_; }

  /// The only mask a stand-alone model accepts; Both for the joint model.
  MaskSelection native_mask() const;
  /// Throws InputError if this model cannot serve `mask`.
  void check_mask(MaskSelection mask) const;

  void initialize(std::uint64_t seed);

 private:
  ModelConfig cfg_;
  ParamStore params_;
  std::optional<Encoder> text_;
  std::optional<Encoder> speech_;
  Decoder dec_;
};

/// One training example. The target is required; the mask decides which
/// of tokens/source are read.
struct Example {
  std::span<const int> tokens;
  const Array* source = nullptr;
  const Array* target = nullptr;
  MaskSelection mask = MaskSelection::Both;
};

/// Teacher-forced L1 loss of one example. When `grads` is non-null the
/// exact gradient is accumulated into it. Masked encoders are not run, so
/// they receive exactly zero gradient. Dropout is active iff `dropout_rng`
/// is non-null.
double example_loss(const Model& model, const Example& ex, Rng* dropout_rng,
                    GradBuffer* grads);

/// Free-running synthesis in the run mode chosen by `mask`. Encoders run in
/// inference mode; decoder pre-net dropout is active iff `decoder_dropout`
/// is non-null.
DecodeResult synthesize(const Model& model, std::span<const int> tokens,
                        const Array* source, MaskSelection mask,
                        const GenerateOptions& opts, Rng* decoder_dropout = nullptr);

}  // namespace msq
