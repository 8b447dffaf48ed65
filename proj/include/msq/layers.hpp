// SPDX-License-Identifier: Apache-2.0
//
// Trainable layers with explicit forward and backward passes.
//
// Conventions: sequences are [T, d] row-major; single vectors are rank-1.
// Every forward that needs state for its backward fills a caller-owned cache;
// every backward accumulates parameter gradients into a GradBuffer and
// returns the gradient with respect to its input.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "msq/array.hpp"
#include "msq/param.hpp"

namespace msq {

class Rng;

double sigmoid(double x);

// ---------------------------------------------------------------------------
// Affine: y = x W + b

struct Affine {
  Param* W = nullptr;  // [in, out]
  Param* b = nullptr;  // [out]
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
};

Affine make_affine(ParamStore& store, const std::string& name, std::size_t in,
                   std::size_t out);
Array affine_forward(const Affine& layer, const Array& x);
Array affine_backward(const Affine& layer, const Array& x, const Array& dy,
                      GradBuffer& grads);

// ---------------------------------------------------------------------------
// Embedding lookup.

struct Embedding {
  Param* table = nullptr;  // [vocab, dim]
  std::size_t vocab = 0;
  std::size_t dim = 0;
};

Embedding make_embedding(ParamStore& store, const std::string& name,
                         std::size_t vocab, std::size_t dim);
/// Throws InputError for an id outside [0, vocab).
Array embedding_forward(const Embedding& layer, std::span<const int> ids);
void embedding_backward(const Embedding& layer, std::span<const int> ids,
                        const Array& dy, GradBuffer& grads);

// ---------------------------------------------------------------------------
// GRU cell.
//
//   z  = sigmoid(x Wz + h Uz + bz)
//   r  = sigmoid(x Wr + h Ur + br)
//   n  = tanh(x Wn + (r * h) Un + bn)
//   h' = (1 - z) * h + z * n
//
// Gate blocks are packed [z | r | n] along the output axis.

struct Gru {
  Param* W = nullptr;  // [in, 3h]
  Param* U = nullptr;  // [h, 3h]
  Param* b = nullptr;  // [3h]
  std::size_t in_dim = 0;
  std::size_t hidden = 0;
};

struct GruCache {
  Array x, h, z, r, n, rh;
};

struct GruGrads {
  Array dx;
  Array dh;
};

Gru make_gru(ParamStore& store, const std::string& name, std::size_t in,
             std::size_t hidden);
Array gru_step(const Gru& cell, const Array& x, const Array& h, GruCache* cache);
GruGrads gru_step_backward(const Gru& cell, const GruCache& cache,
                           const Array& dh_next, GradBuffer& grads);

// ---------------------------------------------------------------------------
// Bidirectional GRU over a sequence, both directions starting from zero.

struct BiGru {
  Gru fwd;
  Gru bwd;
};

struct BiGruOutput {
  Array states;  // [T, 2h]: forward half then backward half
  Array final;   // [2h]: last forward state, last backward state (t = 0)
};

struct BiGruCache {
  std::vector<GruCache> fwd;
  std::vector<GruCache> bwd;
};

BiGru make_bigru(ParamStore& store, const std::string& name, std::size_t in,
                 std::size_t hidden);
BiGruOutput bigru_forward(const BiGru& layer, const Array& x, BiGruCache* cache);
Array bigru_backward(const BiGru& layer, const BiGruCache& cache,
                     const Array& d_states, const Array& d_final,
                     GradBuffer& grads);

// ---------------------------------------------------------------------------
// Same-padded 1-D convolution. Width k pads (k-1)/2 frames on the left and
// k-1-(k-1)/2 on the right, so output length equals input length.

struct Conv1d {
  Param* W = nullptr;  // [width * in, out], tap-major
  Param* b = nullptr;  // [out]
  std::size_t width = 0;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
};

Conv1d make_conv1d(ParamStore& store, const std::string& name, std::size_t width,
                   std::size_t in, std::size_t out);
/// Unfolded input [T, width * in] used by both passes.
Array im2col(const Array& x, std::size_t width);
Array conv1d_forward(const Conv1d& layer, const Array& x, Array* cols_cache);
Array conv1d_backward(const Conv1d& layer, const Array& cols, const Array& dy,
                      GradBuffer& grads);

// ---------------------------------------------------------------------------
// Bank of ReLU convolutions with widths 1..K, concatenated along channels.

struct ConvBank {
  std::vector<Conv1d> convs;
  std::size_t channels = 0;
};

struct ConvBankCache {
  std::vector<Array> cols;
  Array out;  // post-ReLU [T, K*channels]
};

ConvBank make_conv_bank(ParamStore& store, const std::string& name,
                        std::size_t K, std::size_t in, std::size_t channels);
Array conv_bank_forward(const ConvBank& bank, const Array& x, ConvBankCache* cache);
Array conv_bank_backward(const ConvBank& bank, const ConvBankCache& cache,
                         const Array& dy, GradBuffer& grads);

// ---------------------------------------------------------------------------
// Width-2, stride-1 max pool: y[t] = max(x[t], x[t+1]), last frame pads with
// itself. Ties go to the earlier frame.

struct MaxPoolResult {
  Array y;
  std::vector<std::size_t> source_row;  // per element: row the max came from
};

MaxPoolResult maxpool1d_same(const Array& x);
Array maxpool1d_backward(const MaxPoolResult& fwd, const Array& dy);

// ---------------------------------------------------------------------------
// Highway layer: y = t * relu(x Wh + bh) + (1 - t) * x, t = sigmoid(x Wt + bt).

struct Highway {
  Affine transform;
  Affine gate;
};

struct HighwayCache {
  Array x, h, t;
};

Highway make_highway(ParamStore& store, const std::string& name, std::size_t dim);
Array highway_forward(const Highway& layer, const Array& x, HighwayCache* cache);
Array highway_backward(const Highway& layer, const HighwayCache& cache,
                       const Array& dy, GradBuffer& grads);

// ---------------------------------------------------------------------------
// Softmax and dropout.

/// Max-subtracted softmax of a rank-1 array. Throws NumericError on NaN.
Array softmax(const Array& x);

/// Inverted-dropout mask: entries 0 or 1/(1-rate). All ones when
/// `training` is false. Throws ConfigError unless 0 <= rate < 1.
Array dropout_mask(const std::vector<std::size_t>& shape, double rate, Rng& rng,
                   bool training = true);

// ---------------------------------------------------------------------------
// Pre-net: one ReLU dense layer followed by dropout. Dropout is applied only
// when an Rng is supplied.

struct Prenet {
  Affine fc;
  double dropout = 0.5;
};

struct PrenetCache {
  Array x, activ, mask;
};

Prenet make_prenet(ParamStore& store, const std::string& name, std::size_t in,
                   std::size_t out, double dropout);
Array prenet_forward(const Prenet& layer, const Array& x, Rng* dropout_rng,
                     PrenetCache* cache);
Array prenet_backward(const Prenet& layer, const PrenetCache& cache,
                      const Array& dy, GradBuffer& grads);

}  // namespace msq
