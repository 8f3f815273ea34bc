#ifndef MGMEM_PARAMS_HPP
#define MGMEM_PARAMS_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgmem/autodiff.hpp"
#include "mgmem/ops.hpp"
#include "mgmem/tensor.hpp"

namespace mgmem {

using Rng = std::mt19937_64;

/// Uniform double in [0,1) from the top 53 bits; stable across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

/// Named parameter tensors in registration order. Non-trainable entries hold
/// buffers that must persist with the model (batch-norm running statistics).
template <typename T>
class ParamSet {
public:
  std::size_t add(std::string name, Tensor<T> value, bool trainable = true) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    trainable_.push_back(trainable);
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor<T>& value(std::size_t i) { return values_.at(i); }
  const Tensor<T>& value(std::size_t i) const { return values_.at(i); }
  bool trainable(std::size_t i) const { return trainable_.at(i); }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    return std::nullopt;
  }

  /// Number of trainable scalars.
  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (trainable_[i]) n += values_[i].size();
    return n;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<U>(), trainable_[i]);
    return out;
  }

private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::vector<bool> trainable_;
};

/// Lazily binds parameters of a ParamSet to leaves of one tape, so every use
/// within a recorded pass shares a node and gradients accumulate there.
template <typename T>
class Binder {
public:
  Binder(Tape<T>& tape, const ParamSet<T>& params, bool differentiate = true)
      : tape_(&tape), params_(&params), vars_(params.size()), differentiate_(differentiate) {}

  Var<T> operator()(std::size_t idx) {
    Var<T>& v = vars_.at(idx);
    if (!v.valid()) {
      const bool leaf = differentiate_ && params_->trainable(idx);
      v = leaf ? tape_->variable(params_->value(idx)) : tape_->constant(params_->value(idx));
    }
    return v;
  }

  /// Binds idx to an existing node of the same tape instead of a fresh leaf.
  void assign(std::size_t idx, Var<T> v) {
    if (v.tape != tape_) throw std::invalid_argument("Binder::assign: variable from another tape");
    if (!(v.shape() == params_->value(idx).shape()))
      throw ShapeError("Binder::assign: shape " + v.shape().str() + " for parameter " + params_->name(idx));
    vars_.at(idx) = v;
  }

  Tape<T>& tape() { return *tape_; }
  bool differentiate() const { return differentiate_; }

  /// Gradient per parameter after tape.backward(); zeros where unreached.
  std::vector<Tensor<T>> gradients() const {
    std::vector<Tensor<T>> out;
    out.reserve(vars_.size());
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      const Tensor<T>* g = vars_[i].valid() ? tape_->grad(vars_[i]) : nullptr;
      out.push_back(g ? *g : Tensor<T>(params_->value(i).shape()));
    }
    return out;
  }

private:
  Tape<T>* tape_;
  const ParamSet<T>* params_;
  std::vector<Var<T>> vars_;
  bool differentiate_;
};

template <typename T>
Tensor<T> uniform_tensor(Shape s, double bound, Rng& rng) {
  Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
  return t;
}

}  // namespace mgmem

#endif  // MGMEM_PARAMS_HPP
