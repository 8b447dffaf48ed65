// SPDX-License-Identifier: Apache-2.0

#include "msq/model.hpp"

#include "msq/error.hpp"
#include "msq/loss.hpp"
#include "msq/rng.hpp"

namespace msq {

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Tts:
      return "tts";
    case ModelKind::Vc:
      return "vc";
    case ModelKind::Joint:
      return "joint";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& s) {
  if (s == "tts") return ModelKind::Tts;
  if (s == "vc") return ModelKind::Vc;
  if (s == "joint") return ModelKind::Joint;
  throw ConfigError("unknown model kind: " + s);
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.enc.validate();
  cfg_.dec.validate();
  if (cfg_.vocab == 0) throw ConfigError("vocab must be positive");
  const bool text = cfg_.kind != ModelKind::Vc;
  const bool speech = cfg_.kind != ModelKind::Tts;
  if (text) text_ = make_text_encoder(params_, "enc_text", cfg_.vocab, cfg_.enc);
  if (speech) speech_ = make_speech_encoder(params_, "enc_speech", cfg_.dec.n_mels, cfg_.enc);
  // Both context slots exist in every model so decoder shapes do not depend
  // on the model kind; a stand-alone model's foreign slot stays zero.
  dec_ = make_decoder(params_, cfg_.dec, cfg_.enc.d_state(), cfg_.enc.d_state(), text, speech);
}

const Encoder& Model::text_encoder() const {
  if (!text_) throw InputError("model has no text encoder");
  return *text_;
}

const Encoder& Model::speech_encoder() const {
  if (!speech_) throw InputError("model has no speech encoder");
  return *speech_;
}

MaskSelection Model::native_mask() const {
  switch (cfg_.kind) {
    case ModelKind::Tts:
      return MaskSelection::TextOnly;
    case ModelKind::Vc:
      return MaskSelection::SpeechOnly;
    case ModelKind::Joint:
      break;
  }
  return MaskSelection::Both;
}

void Model::check_mask(MaskSelection mask) const {
  if (uses_text(mask) && !text_) {
    throw InputError("a " + to_string(cfg_.kind) + " model cannot use text input");
  }
  if (uses_speech(mask) && !speech_) {
    throw InputError("a " + to_string(cfg_.kind) + " model cannot use speech input");
  }
}

void Model::initialize(std::uint64_t seed) {
  Rng rng(seed);
  params_.initialize(rng);
}

double example_loss(const Model& model, const Example& ex, Rng* dropout_rng,
                    GradBuffer* grads) {
  if (ex.target == nullptr) throw InputError("example has no target spectrogram");
  model.check_mask(ex.mask);

  std::optional<EncoderOutput> text, speech;
  EncoderCache text_cache, speech_cache;
  const bool want_grad = grads != nullptr;
  if (uses_text(ex.mask)) {
    text = encode_text(model.text_encoder(), ex.tokens, dropout_rng,
                       want_grad ? &text_cache : nullptr);
  }
  if (uses_speech(ex.mask)) {
    if (ex.source == nullptr) throw InputError("example has no source spectrogram");
    speech = encode_speech(model.speech_encoder(), *ex.source, dropout_rng,
                           want_grad ? &speech_cache : nullptr);
  }
  const Decoder& dec = model.decoder();
  DecoderInputs in = bind_inputs(dec, text ? &*text : nullptr,
                                 speech ? &*speech : nullptr, ex.mask);
  DecodeTape tape;
  DecodeResult out =
      decode_teacher_forced(dec, in, *ex.target, dropout_rng, want_grad ? &tape : nullptr);
  const std::size_t valid = ex.target->rows();
  const double loss = l1_loss(out.frames, *ex.target, valid);
  if (!want_grad) return loss;

  MemoryGrads mem = decode_backward(dec, tape, in, l1_loss_grad(out.frames, *ex.target, valid),
                                    *grads);
  if (text) {
    encoder_backward(model.text_encoder(), text_cache, mem.text_outputs, mem.text_state,
                     *grads);
  }
  if (speech) {
    encoder_backward(model.speech_encoder(), speech_cache, mem.speech_outputs,
                     mem.speech_state, *grads);
  }
  return loss;
}

DecodeResult synthesize(const Model& model, std::span<const int> tokens,
                        const Array* source, MaskSelection mask,
                        const GenerateOptions& opts, Rng* decoder_dropout) {
  model.check_mask(mask);
  std::optional<EncoderOutput> text, speech;
  if (uses_text(mask)) {
    if (tokens.empty()) throw InputError("mode " + to_string(mask) + " needs text input");
    text = encode_text(model.text_encoder(), tokens);
  }
  if (uses_speech(mask)) {
    if (source == nullptr) throw InputError("mode " + to_string(mask) + " needs speech input");
    speech = encode_speech(model.speech_encoder(), *source);
  }
  DecoderInputs in = bind_inputs(model.decoder(), text ? &*text : nullptr,
                                 speech ? &*speech : nullptr, mask);
  if (!uses_text(mask)) in.text_len = tokens.size();
  if (!uses_speech(mask)) in.speech_len = source ? source->rows() : 0;
  return generate(model.decoder(), in, opts, decoder_dropout);
}

}  // namespace msq
