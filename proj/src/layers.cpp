// SPDX-License-Identifier: Apache-2.0

#include "msq/layers.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "msq/error.hpp"
#include "msq/rng.hpp"

namespace msq {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::RowVectorXd;
using ConstMat = Eigen::Map<const RowMat>;
using Mat = Eigen::Map<RowMat>;
using ConstVec = Eigen::Map<const RowVec>;
using Vec = Eigen::Map<RowVec>;

ConstMat cmat(const Array& a) {
  return ConstMat(a.data(), static_cast<Eigen::Index>(a.rows()),
                  static_cast<Eigen::Index>(a.cols()));
}
Mat mat(Array& a) {
  return Mat(a.data(), static_cast<Eigen::Index>(a.rows()),
             static_cast<Eigen::Index>(a.cols()));
}
ConstVec vec(const Array& a) { return ConstVec(a.data(), static_cast<Eigen::Index>(a.size())); }
Vec vec(Array& a) { return Vec(a.data(), static_cast<Eigen::Index>(a.size())); }

Array from_vec(const RowVec& v) {
  Array out({static_cast<std::size_t>(v.size())});
  vec(out) = v;
  return out;
}

void require_cols(const Array& x, std::size_t cols, const char* what) {
  if (x.cols() != cols) {
    throw DimensionError(std::string(what) + ": expected width " +
                         std::to_string(cols) + ", got " + x.shape_string());
  }
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// --- Affine ----------------------------------------------------------------

Affine make_affine(ParamStore& store, const std::string& name, std::size_t in,
                   std::size_t out) {
  Affine l;
  l.W = store.add(name + "/W", {in, out}, Init::Uniform);
  l.b = store.add(name + "/b", {out}, Init::Zero);
  l.in_dim = in;
  l.out_dim = out;
  return l;
}

Array affine_forward(const Affine& layer, const Array& x) {
  require_cols(x, layer.in_dim, "affine input");
  Array y = matmul(x, layer.W->value);
  const double* b = layer.b->value.data();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  }
  return y;
}

Array affine_backward(const Affine& layer, const Array& x, const Array& dy,
                      GradBuffer& grads) {
  require_cols(dy, layer.out_dim, "affine output grad");
  add_matmul_tn(grads[*layer.W], x, dy);
  Array& db = grads[*layer.b];
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    auto row = dy.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) db[j] += row[j];
  }
  return matmul_nt(dy, layer.W->value);
}

// --- Embedding ---------------------------------------------------------------

Embedding make_embedding(ParamStore& store, const std::string& name,
                         std::size_t vocab, std::size_t dim) {
  Embedding e;
  e.table = store.add(name + "/table", {vocab, dim}, Init::Uniform);
  e.vocab = vocab;
  e.dim = dim;
  return e;
}

Array embedding_forward(const Embedding& layer, std::span<const int> ids) {
  if (ids.empty()) throw InputError("empty symbol sequence");
  Array out({ids.size(), layer.dim});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const int id = ids[t];
    if (id < 0 || static_cast<std::size_t>(id) >= layer.vocab) {
      throw InputError("unknown symbol id " + std::to_string(id) + " (vocab " +
                       std::to_string(layer.vocab) + ")");
    }
    out.set_row(t, layer.table->value.row(static_cast<std::size_t>(id)));
  }
  return out;
}

void embedding_backward(const Embedding& layer, std::span<const int> ids,
                        const Array& dy, GradBuffer& grads) {
  Array& g = grads[*layer.table];
  for (std::size_t t = 0; t < ids.size(); ++t) {
    auto dst = g.row(static_cast<std::size_t>(ids[t]));
    auto src = dy.row(t);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

// --- GRU ---------------------------------------------------------------------

Gru make_gru(ParamStore& store, const std::string& name, std::size_t in,
             std::size_t hidden) {
  Gru g;
  g.W = store.add(name + "/W", {in, 3 * hidden}, Init::Uniform);
  g.U = store.add(name + "/U", {hidden, 3 * hidden}, Init::Orthogonal);
  g.b = store.add(name + "/b", {3 * hidden}, Init::Zero);
  g.in_dim = in;
  g.hidden = hidden;
  return g;
}

Array gru_step(const Gru& cell, const Array& x, const Array& h, GruCache* cache) {
  if (x.rank() != 1 || x.size() != cell.in_dim) {
    throw DimensionError("gru_step input " + x.shape_string() + ", expected [" +
                         std::to_string(cell.in_dim) + "]");
  }
  if (h.rank() != 1 || h.size() != cell.hidden) {
    throw DimensionError("gru_step state " + h.shape_string() + ", expected [" +
                         std::to_string(cell.hidden) + "]");
  }
  const auto H = static_cast<Eigen::Index>(cell.hidden);
  const ConstMat U = cmat(cell.U->value);

  RowVec ax = vec(x) * cmat(cell.W->value) + vec(cell.b->value);
  RowVec ah = vec(h) * U.leftCols(2 * H);

  RowVec z(H), r(H), n(H), rh(H), out(H);
  for (Eigen::Index i = 0; i < H; ++i) {
    z[i] = sigmoid(ax[i] + ah[i]);
    r[i] = sigmoid(ax[H + i] + ah[H + i]);
    rh[i] = r[i] * h[static_cast<std::size_t>(i)];
  }
  RowVec an = ax.segment(2 * H, H) + rh * U.rightCols(H);
  for (Eigen::Index i = 0; i < H; ++i) {
    n[i] = std::tanh(an[i]);
    const double hp = h[static_cast<std::size_t>(i)];
    out[i] = (1.0 - z[i]) * hp + z[i] * n[i];
  }
  if (cache != nullptr) {
    cache->x = x;
    cache->h = h;
    cache->z = from_vec(z);
    cache->r = from_vec(r);
    cache->n = from_vec(n);
    cache->rh = from_vec(rh);
  }
  return from_vec(out);
}

GruGrads gru_step_backward(const Gru& cell, const GruCache& c, const Array& dh_next,
                           GradBuffer& grads) {
  const auto H = static_cast<Eigen::Index>(cell.hidden);
  const ConstMat U = cmat(cell.U->value);
  const std::size_t h = cell.hidden;

  RowVec da(3 * H);
  RowVec dh(H);
  for (std::size_t i = 0; i < h; ++i) {
    const double g = dh_next[i];
    const double z = c.z[i];
    const double n = c.n[i];
    dh[static_cast<Eigen::Index>(i)] = g * (1.0 - z);
    da[static_cast<Eigen::Index>(i)] = g * (n - c.h[i]) * z * (1.0 - z);
    da[2 * H + static_cast<Eigen::Index>(i)] = g * z * (1.0 - n * n);
  }
  const RowVec dan = da.segment(2 * H, H);
  const RowVec drh = dan * U.rightCols(H).transpose();
  for (std::size_t i = 0; i < h; ++i) {
    const auto e = static_cast<Eigen::Index>(i);
    const double r = c.r[i];
    da[H + e] = drh[e] * c.h[i] * r * (1.0 - r);
    dh[e] += drh[e] * r;
  }

  Mat dW = mat(grads[*cell.W]);
  dW.noalias() += vec(c.x).transpose() * da;
  vec(grads[*cell.b]) += da;
  Mat dU = mat(grads[*cell.U]);
  dU.leftCols(2 * H).noalias() += vec(c.h).transpose() * da.head(2 * H);
  dU.rightCols(H).noalias() += vec(c.rh).transpose() * dan;
  dh.noalias() += da.head(2 * H) * U.leftCols(2 * H).transpose();

  GruGrads out;
  out.dx = from_vec(da * cmat(cell.W->value).transpose());
  out.dh = from_vec(dh);
  return out;
}

// --- Bidirectional GRU -------------------------------------------------------

BiGru make_bigru(ParamStore& store, const std::string& name, std::size_t in,
                 std::size_t hidden) {
  return BiGru{make_gru(store, name + "/fwd", in, hidden),
               make_gru(store, name + "/bwd", in, hidden)};
}

BiGruOutput bigru_forward(const BiGru& layer, const Array& x, BiGruCache* cache) {
  if (x.rank() != 2) throw DimensionError("bigru expects [T, d] input");
  const std::size_t T = x.rows();
  const std::size_t H = layer.fwd.hidden;
  BiGruOutput out{Array({T, 2 * H}), Array({2 * H})};
  if (cache != nullptr) {
    cache->fwd.assign(T, {});
    cache->bwd.assign(T, {});
  }
  Array h({H});
  for (std::size_t t = 0; t < T; ++t) {
    h = gru_step(layer.fwd, x.row_copy(t), h, cache ? &cache->fwd[t] : nullptr);
    std::copy(h.values().begin(), h.values().end(), out.states.row(t).begin());
  }
  std::copy(h.values().begin(), h.values().end(), out.final.values().begin());
  h = Array({H});
  for (std::size_t i = 0; i < T; ++i) {
    const std::size_t t = T - 1 - i;
    h = gru_step(layer.bwd, x.row_copy(t), h, cache ? &cache->bwd[t] : nullptr);
    std::copy(h.values().begin(), h.values().end(), out.states.row(t).begin() + H);
  }
  std::copy(h.values().begin(), h.values().end(), out.final.values().begin() + H);
  return out;
}

Array bigru_backward(const BiGru& layer, const BiGruCache& cache,
                     const Array& d_states, const Array& d_final, GradBuffer& grads) {
  const std::size_t T = cache.fwd.size();
  const std::size_t H = layer.fwd.hidden;
  Array dx({T, layer.fwd.in_dim});

  Array dh = slice(d_final, 0, H);
  for (std::size_t i = 0; i < T; ++i) {
    const std::size_t t = T - 1 - i;
    auto ds = d_states.row(t);
    for (std::size_t j = 0; j < H; ++j) dh[j] += ds[j];
    GruGrads g = gru_step_backward(layer.fwd, cache.fwd[t], dh, grads);
    auto dst = dx.row(t);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g.dx[j];
    dh = std::move(g.dh);
  }
  dh = slice(d_final, H, H);
  for (std::size_t t = 0; t < T; ++t) {
    auto ds = d_states.row(t);
    for (std::size_t j = 0; j < H; ++j) dh[j] += ds[H + j];
    GruGrads g = gru_step_backward(layer.bwd, cache.bwd[t], dh, grads);
    auto dst = dx.row(t);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g.dx[j];
    dh = std::move(g.dh);
  }
  return dx;
}

// --- Conv1d ------------------------------------------------------------------

Conv1d make_conv1d(ParamStore& store, const std::string& name, std::size_t width,
                   std::size_t in, std::size_t out) {
  if (width < 1) throw ConfigError("conv width must be >= 1");
  Conv1d c;
  c.W = store.add(name + "/W", {width * in, out}, Init::Uniform);
  c.b = store.add(name + "/b", {out}, Init::Zero);
  c.width = width;
  c.in_dim = in;
  c.out_dim = out;
  return c;
}

Array im2col(const Array& x, std::size_t width) {
  const std::size_t T = x.rows();
  const std::size_t d = x.cols();
  const std::ptrdiff_t pad_left = static_cast<std::ptrdiff_t>((width - 1) / 2);
  Array cols({T, width * d});
  for (std::size_t t = 0; t < T; ++t) {
    auto dst = cols.row(t);
    for (std::size_t j = 0; j < width; ++j) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad_left;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      auto s = x.row(static_cast<std::size_t>(src));
      std::copy(s.begin(), s.end(), dst.begin() + static_cast<std::ptrdiff_t>(j * d));
    }
  }
  return cols;
}

namespace {

Array col2im(const Array& dcols, std::size_t width, std::size_t d) {
  const std::size_t T = dcols.rows();
  const std::ptrdiff_t pad_left = static_cast<std::ptrdiff_t>((width - 1) / 2);
  Array dx({T, d});
  for (std::size_t t = 0; t < T; ++t) {
    auto src = dcols.row(t);
    for (std::size_t j = 0; j < width; ++j) {
      const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(t + j) - pad_left;
      if (row < 0 || row >= static_cast<std::ptrdiff_t>(T)) continue;
      auto dst = dx.row(static_cast<std::size_t>(row));
      for (std::size_t k = 0; k < d; ++k) dst[k] += src[j * d + k];
    }
  }
  return dx;
}

}  // namespace

Array conv1d_forward(const Conv1d& layer, const Array& x, Array* cols_cache) {
  if (x.rank() != 2) throw DimensionError("conv1d expects [T, d] input");
  require_cols(x, layer.in_dim, "conv1d input");
  Array cols = im2col(x, layer.width);
  Array y = matmul(cols, layer.W->value);
  const double* b = layer.b->value.data();
  for (std::size_t t = 0; t < y.rows(); ++t) {
    auto row = y.row(t);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  }
  if (cols_cache != nullptr) *cols_cache = std::move(cols);
  return y;
}

Array conv1d_backward(const Conv1d& layer, const Array& cols, const Array& dy,
                      GradBuffer& grads) {
  add_matmul_tn(grads[*layer.W], cols, dy);
  Array& db = grads[*layer.b];
  for (std::size_t t = 0; t < dy.rows(); ++t) {
    auto row = dy.row(t);
    for (std::size_t j = 0; j < row.size(); ++j) db[j] += row[j];
  }
  return col2im(matmul_nt(dy, layer.W->value), layer.width, layer.in_dim);
}

// --- Conv bank -----------------------------------------------------------------

ConvBank make_conv_bank(ParamStore& store, const std::string& name,
                        std::size_t K, std::size_t in, std::size_t channels) {
  if (K < 1) throw ConfigError("conv bank needs K >= 1");
  ConvBank bank;
  bank.channels = channels;
  for (std::size_t k = 1; k <= K; ++k) {
    bank.convs.push_back(
        make_conv1d(store, name + "/k" + std::to_string(k), k, in, channels));
  }
  return bank;
}

Array conv_bank_forward(const ConvBank& bank, const Array& x, ConvBankCache* cache) {
  const std::size_t T = x.rows();
  const std::size_t C = bank.channels;
  Array out({T, bank.convs.size() * C});
  if (cache != nullptr) cache->cols.assign(bank.convs.size(), {});
  for (std::size_t k = 0; k < bank.convs.size(); ++k) {
    Array y = conv1d_forward(bank.convs[k], x, cache ? &cache->cols[k] : nullptr);
    for (std::size_t t = 0; t < T; ++t) {
      auto src = y.row(t);
      auto dst = out.row(t);
      for (std::size_t j = 0; j < C; ++j) dst[k * C + j] = std::max(0.0, src[j]);
    }
  }
  if (cache != nullptr) cache->out = out;
  return out;
}

Array conv_bank_backward(const ConvBank& bank, const ConvBankCache& cache,
                         const Array& dy, GradBuffer& grads) {
  const std::size_t T = dy.rows();
  const std::size_t C = bank.channels;
  Array dx({T, bank.convs.front().in_dim});
  for (std::size_t k = 0; k < bank.convs.size(); ++k) {
    Array dk({T, C});
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < C; ++j) {
        if (cache.out(t, k * C + j) > 0.0) dk(t, j) = dy(t, k * C + j);
      }
    }
    dx += conv1d_backward(bank.convs[k], cache.cols[k], dk, grads);
  }
  return dx;
}

// --- Max pool ------------------------------------------------------------------

MaxPoolResult maxpool1d_same(const Array& x) {
  if (x.rank() != 2) throw DimensionError("maxpool expects [T, d] input");
  const std::size_t T = x.rows();
  const std::size_t d = x.cols();
  MaxPoolResult res{Array({T, d}), std::vector<std::size_t>(T * d)};
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t next = std::min(t + 1, T - 1);
    for (std::size_t j = 0; j < d; ++j) {
      const double a = x(t, j);
      const double b = x(next, j);
      const bool take_next = b > a;
      res.y(t, j) = take_next ? b : a;
      res.source_row[t * d + j] = take_next ? next : t;
    }
  }
  return res;
}

Array maxpool1d_backward(const MaxPoolResult& fwd, const Array& dy) {
  const std::size_t d = dy.cols();
  Array dx({dy.rows(), d});
  for (std::size_t t = 0; t < dy.rows(); ++t) {
    for (std::size_t j = 0; j < d; ++j) dx(fwd.source_row[t * d + j], j) += dy(t, j);
  }
  return dx;
}

// --- Highway -------------------------------------------------------------------

Highway make_highway(ParamStore& store, const std::string& name, std::size_t dim) {
  return Highway{make_affine(store, name + "/H", dim, dim),
                 make_affine(store, name + "/T", dim, dim)};
}

Array highway_forward(const Highway& layer, const Array& x, HighwayCache* cache) {
  require_cols(x, layer.transform.in_dim, "highway input");
  Array h = affine_forward(layer.transform, x);
  Array t = affine_forward(layer.gate, x);
  Array y = Array::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    h[i] = std::max(0.0, h[i]);
    t[i] = sigmoid(t[i]);
    y[i] = t[i] * h[i] + (1.0 - t[i]) * x[i];
  }
  if (cache != nullptr) {
    cache->x = x;
    cache->h = std::move(h);
    cache->t = std::move(t);
  }
  return y;
}

Array highway_backward(const Highway& layer, const HighwayCache& c, const Array& dy,
                       GradBuffer& grads) {
  Array dh_pre = Array::zeros_like(dy);
  Array dt_pre = Array::zeros_like(dy);
  Array dx = Array::zeros_like(dy);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const double t = c.t[i];
    dh_pre[i] = c.h[i] > 0.0 ? dy[i] * t : 0.0;
    dt_pre[i] = dy[i] * (c.h[i] - c.x[i]) * t * (1.0 - t);
    dx[i] = dy[i] * (1.0 - t);
  }
  dx += affine_backward(layer.transform, c.x, dh_pre, grads);
  dx += affine_backward(layer.gate, c.x, dt_pre, grads);
  return dx;
}

// --- Softmax / dropout -----------------------------------------------------------

Array softmax(const Array& x) {
  if (x.empty()) throw DimensionError("softmax of empty array");
  double m = x[0];
  for (double v : x.values()) {
    if (std::isnan(v)) throw NumericError("softmax input contains NaN");
    m = std::max(m, v);
  }
  Array y = Array::zeros_like(x);
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - m);
    sum += y[i];
  }
  for (double& v : y.values()) v /= sum;
  return y;
}

Array dropout_mask(const std::vector<std::size_t>& shape, double rate, Rng& rng,
                   bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
  Array mask(shape, 1.0);
  if (!training || rate == 0.0) return mask;
  const double keep = 1.0 / (1.0 - rate);
  for (double& v : mask.values()) v = rng.uniform() < rate ? 0.0 : keep;
  return mask;
}

// --- Prenet ----------------------------------------------------------------------

Prenet make_prenet(ParamStore& store, const std::string& name, std::size_t in,
                   std::size_t out, double dropout) {
  return Prenet{make_affine(store, name + "/fc", in, out), dropout};
}

Array prenet_forward(const Prenet& layer, const Array& x, Rng* dropout_rng,
                     PrenetCache* cache) {
  Array a = affine_forward(layer.fc, x);
  for (double& v : a.values()) v = std::max(0.0, v);
  Array mask = dropout_rng != nullptr
                   ? dropout_mask(a.shape(), layer.dropout, *dropout_rng, true)
                   : Array(a.shape(), 1.0);
  Array y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  if (cache != nullptr) {
    cache->x = x;
    cache->activ = std::move(a);
    cache->mask = std::move(mask);
  }
  return y;
}

Array prenet_backward(const Prenet& layer, const PrenetCache& c, const Array& dy,
                      GradBuffer& grads) {
  Array da = Array::zeros_like(dy);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (c.activ[i] > 0.0) da[i] = dy[i] * c.mask[i];
  }
  return affine_backward(layer.fc, c.x, da, grads);
}

}  // namespace msq
