#pragma once

#include <cmath>
#include <map>
#include <string>

#include "zsa/core/rng.hpp"
#include "zsa/core/tensor.hpp"

namespace zsa {

// Training mode enables dropout, patchout and batch statistics.
enum class Mode { train, eval };

template <class T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  // Buffers such as batch-norm running statistics are stored alongside the
  // weights but never touched by the optimizer.
  bool trainable = true;
};

// Named tensors of one model, iterated in name order so that checkpoints and
// optimizer updates are reproducible.
template <class T>
class ParameterSet {
 public:
  using Map = std::map<std::string, Parameter<T>>;

  Parameter<T>& add(const std::string& name, Tensor<T> value, bool trainable = true) {
    if (items_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
    Parameter<T> p;
    p.grad = Tensor<T>(value.shape());
    p.value = std::move(value);
    p.trainable = trainable;
    return items_.emplace(name, std::move(p)).first->second;
  }

  Parameter<T>& at(const std::string& name) {
    auto it = items_.find(name);
    if (it == items_.end()) throw DataError("missing parameter '" + name + "'");
    return it->second;
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end()) throw DataError("missing parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return items_.count(name) > 0; }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  std::size_t tensors() const { return items_.size(); }

  std::size_t scalar_count(bool trainable_only = true) const {
    std::size_t n = 0;
    for (const auto& [_, p] : items_)
      if (p.trainable || !trainable_only) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : items_) p.grad.fill(T{0});
  }

  template <class U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& [name, p] : items_) out.add(name, p.value.template cast<U>(), p.trainable);
    return out;
  }

  friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
    if (a.items_.size() != b.items_.size()) return false;
    for (auto ia = a.items_.begin(), ib = b.items_.begin(); ia != a.items_.end(); ++ia, ++ib)
      if (ia->first != ib->first || !(ia->second.value == ib->second.value)) return false;
    return true;
  }

 private:
  Map items_;
};

// Scaled uniform fan-in initialisation: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class T>
Tensor<T> init_fan_in(Rng& rng, Shape shape, std::size_t fan_in) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
Tensor<T> init_uniform(Rng& rng, Shape shape, double bound) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace zsa
