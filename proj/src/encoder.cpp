// SPDX-License-Identifier: Apache-2.0

#include "msq/encoder.hpp"

#include <algorithm>

#include "msq/error.hpp"

namespace msq {

void EncoderConfig::validate() const {
  if (d_embed == 0 || d_prenet == 0 || bank_K == 0 || conv_channels == 0 ||
      d_gru == 0) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("encoder dropout must be in [0, 1)");
  }
}

Cbhg make_cbhg(ParamStore& store, const std::string& name, std::size_t in_dim,
               const EncoderConfig& cfg) {
  Cbhg c;
  c.bank = make_conv_bank(store, name + "/bank", cfg.bank_K, in_dim, cfg.conv_channels);
  c.proj_relu = make_conv1d(store, name + "/proj1", 3, cfg.bank_K * cfg.conv_channels,
                            cfg.conv_channels);
  c.proj_linear = make_conv1d(store, name + "/proj2", 3, cfg.conv_channels, in_dim);
  if (in_dim != cfg.d_gru) {
    c.to_highway = make_affine(store, name + "/to_highway", in_dim, cfg.d_gru);
  }
  for (std::size_t i = 0; i < cfg.highway_layers; ++i) {
    c.highways.push_back(make_highway(store, name + "/highway" + std::to_string(i), cfg.d_gru));
  }
  c.gru = make_bigru(store, name + "/gru", cfg.d_gru, cfg.d_gru);
  return c;
}

BiGruOutput cbhg_forward(const Cbhg& cbhg, const Array& x, CbhgCache* cache) {
  if (x.rank() != 2 || x.rows() == 0) throw InputError("cbhg: empty sequence");
  ConvBankCache* bank_cache = cache ? &cache->bank : nullptr;
  Array y = conv_bank_forward(cbhg.bank, x, bank_cache);
  MaxPoolResult pool = maxpool1d_same(y);

  Array cols_relu;
  Array a = conv1d_forward(cbhg.proj_relu, pool.y, &cols_relu);
  for (double& v : a.values()) v = std::max(0.0, v);
  Array cols_linear;
  Array p = conv1d_forward(cbhg.proj_linear, a, &cols_linear);
  p += x;

  Array h = cbhg.to_highway ? affine_forward(*cbhg.to_highway, p) : p;
  if (cache != nullptr) cache->highways.assign(cbhg.highways.size(), {});
  for (std::size_t i = 0; i < cbhg.highways.size(); ++i) {
    h = highway_forward(cbhg.highways[i], h, cache ? &cache->highways[i] : nullptr);
  }
  BiGruOutput out = bigru_forward(cbhg.gru, h, cache ? &cache->gru : nullptr);

  if (cache != nullptr) {
    cache->pool = std::move(pool);
    cache->cols_relu = std::move(cols_relu);
    cache->activ_relu = std::move(a);
    cache->cols_linear = std::move(cols_linear);
    cache->residual = std::move(p);
  }
  return out;
}

Array cbhg_backward(const Cbhg& cbhg, const CbhgCache& c, const Array& d_states,
                    const Array& d_final, GradBuffer& grads) {
  Array dh = bigru_backward(cbhg.gru, c.gru, d_states, d_final, grads);
  for (std::size_t i = cbhg.highways.size(); i-- > 0;) {
    dh = highway_backward(cbhg.highways[i], c.highways[i], dh, grads);
  }
  Array dp = cbhg.to_highway ? affine_backward(*cbhg.to_highway, c.residual, dh, grads)
                             : std::move(dh);
  // Residual branch passes dp straight through to the input.
  Array dx = dp;
  Array da = conv1d_backward(cbhg.proj_linear, c.cols_linear, dp, grads);
  for (std::size_t i = 0; i < da.size(); ++i) {
    if (c.activ_relu[i] <= 0.0) da[i] = 0.0;
  }
  Array dpool = conv1d_backward(cbhg.proj_relu, c.cols_relu, da, grads);
  Array dbank = maxpool1d_backward(c.pool, dpool);
  dx += conv_bank_backward(cbhg.bank, c.bank, dbank, grads);
  return dx;
}

Encoder make_text_encoder(ParamStore& store, const std::string& name,
                          std::size_t vocab, const EncoderConfig& cfg) {
  cfg.validate();
  Encoder e;
  e.kind = EncoderKind::Text;
  e.in_dim = vocab;
  e.embed = make_embedding(store, name + "/embed", vocab, cfg.d_embed);
  e.prenet = make_prenet(store, name + "/prenet", cfg.d_embed, cfg.d_prenet, cfg.dropout);
  e.cbhg = make_cbhg(store, name + "/cbhg", cfg.d_prenet, cfg);
  return e;
}

Encoder make_speech_encoder(ParamStore& store, const std::string& name,
                            std::size_t n_mels, const EncoderConfig& cfg) {
  cfg.validate();
  Encoder e;
  e.kind = EncoderKind::Speech;
  e.in_dim = n_mels;
  e.prenet = make_prenet(store, name + "/prenet", n_mels, cfg.d_prenet, cfg.dropout);
  e.cbhg = make_cbhg(store, name + "/cbhg", cfg.d_prenet, cfg);
  return e;
}

namespace {

EncoderOutput run_encoder(const Encoder& enc, const Array& x, Rng* dropout_rng,
                          EncoderCache* cache) {
  Array p = prenet_forward(enc.prenet, x, dropout_rng, cache ? &cache->prenet : nullptr);
  BiGruOutput o = cbhg_forward(enc.cbhg, p, cache ? &cache->cbhg : nullptr);
  return EncoderOutput{std::move(o.final), std::move(o.states)};
}

}  // namespace

EncoderOutput encode_text(const Encoder& enc, std::span<const int> tokens,
                          Rng* dropout_rng, EncoderCache* cache) {
  if (enc.kind != EncoderKind::Text) throw InputError("encode_text on a speech encoder");
  if (tokens.empty()) throw InputError("text input must have at least one symbol");
  Array x = embedding_forward(*enc.embed, tokens);
  if (cache != nullptr) cache->tokens.assign(tokens.begin(), tokens.end());
  return run_encoder(enc, x, dropout_rng, cache);
}

EncoderOutput encode_speech(const Encoder& enc, const Array& frames, Rng* dropout_rng,
                            EncoderCache* cache) {
  if (enc.kind != EncoderKind::Speech) throw InputError("encode_speech on a text encoder");
  if (frames.rank() != 2 || frames.rows() == 0) {
    throw InputError("speech input must have at least one frame");
  }
  if (frames.cols() != enc.in_dim) {
    throw DimensionError("speech input has " + std::to_string(frames.cols()) +
                         " bands, encoder expects " + std::to_string(enc.in_dim));
  }
  require_finite(frames, "speech input");
  return run_encoder(enc, frames, dropout_rng, cache);
}

void encoder_backward(const Encoder& enc, const EncoderCache& cache,
                      const Array& d_outputs, const Array& d_state, GradBuffer& grads) {
  Array dp = cbhg_backward(enc.cbhg, cache.cbhg, d_outputs, d_state, grads);
  Array dx = prenet_backward(enc.prenet, cache.prenet, dp, grads);
  if (enc.kind == EncoderKind::Text) {
    embedding_backward(*enc.embed, cache.tokens, dx, grads);
  }
}

}  // namespace msq
