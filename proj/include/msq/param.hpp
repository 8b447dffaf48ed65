// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "msq/array.hpp"

namespace msq {

class Rng;

/// How a parameter is filled by ParamStore::initialize.
enum class Init {
  Uniform,      // uniform(-0.05, 0.05)
  Zero,         // biases
  Orthogonal,   // column blocks of size rows x rows, each from QR of a Gaussian
};

struct Param {
  std::string name;
  Array value;
  Array grad;
  Init init = Init::Uniform;
  std::size_t index = 0;  // position in the owning store
};

/// Named parameter registry. Addresses of stored Params are stable for the
/// lifetime of the store, so layers hold plain `Param*`.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Param* add(std::string name, std::vector<std::size_t> shape, Init init);

  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  Param& operator[](std::size_t i) { return *params_[i]; }
  const Param& operator[](std::size_t i) const { return *params_[i]; }

  /// Fill values by each param's Init rule, in registration order.
  void initialize(Rng& rng);
  void zero_grads();
  std::size_t scalar_count() const;

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

/// Per-worker gradient accumulator mirroring a ParamStore's shapes.
class GradBuffer {
 public:
  explicit GradBuffer(const ParamStore& store);

  Array& operator[](const Param& p) { return grads_[p.index]; }
  const Array& operator[](const Param& p) const { return grads_[p.index]; }
  Array& at(std::size_t i) { return grads_[i]; }
  const Array& at(std::size_t i) const { return grads_[i]; }
  std::size_t size() const { return grads_.size(); }

  void set_zero();
  /// param.grad += scale * buffer, for every parameter.
  void accumulate_into(ParamStore& store, double scale = 1.0) const;

 private:
  std::vector<Array> grads_;
};

}  // namespace msq
