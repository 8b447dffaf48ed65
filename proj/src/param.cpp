// SPDX-License-Identifier: Apache-2.0

#include "msq/param.hpp"

#include <Eigen/Dense>

#include "msq/error.hpp"
#include "msq/rng.hpp"

namespace msq {
namespace {

constexpr double kInitScale = 0.05;

// Fills a [n, k*n] matrix with k independent n x n orthogonal blocks.
void fill_orthogonal(Array& a, Rng& rng) {
  const std::size_t n = a.rows();
  const std::size_t cols = a.cols();
  if (cols % n != 0) throw DimensionError("orthogonal init needs cols multiple of rows");
  const auto dim = static_cast<Eigen::Index>(n);
  for (std::size_t block = 0; block < cols / n; ++block) {
    Eigen::MatrixXd g(dim, dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      for (Eigen::Index j = 0; j < dim; ++j) g(i, j) = rng.normal();
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    // Sign-fix so Q is unique given the Gaussian draw.
    for (Eigen::Index j = 0; j < dim; ++j) {
      if (r(j, j) < 0) q.col(j) = -q.col(j);
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        a(i, block * n + j) = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
    }
  }
}

}  // namespace

Param* ParamStore::add(std::string name, std::vector<std::size_t> shape, Init init) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = std::move(name);
  p->value = Array(shape);
  p->grad = Array(std::move(shape));
  p->init = init;
  p->index = params_.size();
  params_.push_back(std::move(p));
  return params_.back().get();
}

Param* ParamStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

const Param* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

Param& ParamStore::at(const std::string& name) {
  Param* p = find(name);
  if (p == nullptr) throw ConfigError("no parameter named " + name);
  return *p;
}

const Param& ParamStore::at(const std::string& name) const {
  const Param* p = find(name);
  if (p == nullptr) throw ConfigError("no parameter named " + name);
  return *p;
}

void ParamStore::initialize(Rng& rng) {
  for (auto& p : params_) {
    switch (p->init) {
      case Init::Zero:
        p->value.set_zero();
        break;
      case Init::Uniform:
        for (double& v : p->value.values()) v = rng.uniform(-kInitScale, kInitScale);
        break;
      case Init::Orthogonal:
        fill_orthogonal(p->value, rng);
        break;
    }
    p->grad.set_zero();
  }
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p->grad.set_zero();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

GradBuffer::GradBuffer(const ParamStore& store) {
  grads_.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    grads_.emplace_back(store[i].value.shape());
  }
}

void GradBuffer::set_zero() {
  for (auto& g : grads_) g.set_zero();
}

void GradBuffer::accumulate_into(ParamStore& store, double scale) const {
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    auto dst = store[i].grad.values();
    auto src = grads_[i].values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += scale * src[j];
  }
}

}  // namespace msq
