#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "zsa/core/error.hpp"
#include "zsa/core/params.hpp"

namespace zsa::crossmodal {

struct TrainConfig {
  double initial_lr = 2e-5;
  double warmup_epochs = 5;
  double decay_start_epoch = 50;
  double decay_end_epoch = 100;
  double final_lr = 1e-7;
  std::size_t epochs = 130;
  std::size_t batch_size = 24;
  std::size_t steps_per_epoch = 0;  // 0: one pass over the eligible clips
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  double val_class_fraction = 0.1;

  void validate() const {
    require(initial_lr > 0 && final_lr > 0 && final_lr <= initial_lr, "train: need 0 < final_lr <= initial_lr");
    require(warmup_epochs >= 0 && warmup_epochs <= decay_start_epoch && decay_start_epoch < decay_end_epoch,
            "train: need warmup <= decay_start < decay_end");
    require(batch_size >= 1, "train: batch_size must be >= 1");
    require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "train: betas must lie in [0, 1)");
    require(epsilon >= 0 && weight_decay >= 0, "train: epsilon and weight_decay must be >= 0");
    require(val_class_fraction >= 0 && val_class_fraction < 1, "train: val_class_fraction must lie in [0, 1)");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainConfig, initial_lr, warmup_epochs, decay_start_epoch, decay_end_epoch,
                                   final_lr, epochs, batch_size, steps_per_epoch, beta1, beta2, epsilon,
                                   weight_decay, seed, val_class_fraction)

// Geometric warmup from initial_lr/100, plateau, linear decay, then constant.
inline double lr_at(double epoch, const TrainConfig& c) {
  if (epoch < 0) throw ConfigError("lr_at: negative epoch");
  if (epoch < c.warmup_epochs) {
    const double start = c.initial_lr / 100.0;
    return start * std::pow(c.initial_lr / start, epoch / c.warmup_epochs);
  }
  if (epoch <= c.decay_start_epoch) return c.initial_lr;
  if (epoch >= c.decay_end_epoch) return c.final_lr;
  const double w = (epoch - c.decay_start_epoch) / (c.decay_end_epoch - c.decay_start_epoch);
  return (1.0 - w) * c.initial_lr + w * c.final_lr;
}

// First and second moments per parameter name, plus the step counter.
template <class T>
struct OptimizerState {
  std::map<std::string, std::pair<Tensor<T>, Tensor<T>>> moments;
  std::uint64_t step = 0;
};

// One decoupled-weight-decay Adam update over every trainable parameter.
template <class T>
void adamw_step(ParameterSet<T>& params, OptimizerState<T>& state, double lr, const TrainConfig& c) {
  if (!(lr > 0)) throw ConfigError("adamw_step: lr must be positive");
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    if (p.grad.shape() != p.value.shape())
      throw DataError("adamw_step: gradient of '" + name + "' has shape " + shape_str(p.grad.shape()) +
                      ", parameter has " + shape_str(p.value.shape()));
    for (T g : p.grad.values())
      if (!std::isfinite(static_cast<double>(g))) throw NumericalError("non-finite gradient in parameter '" + name + "'");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    auto it = state.moments.find(name);
    if (it == state.moments.end())
      it = state.moments.emplace(name, std::make_pair(Tensor<T>(p.value.shape()), Tensor<T>(p.value.shape()))).first;
    auto& [m, v] = it->second;
    if (m.shape() != p.value.shape()) throw DataError("adamw_step: optimizer state shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = static_cast<double>(p.grad[i]);
      const double mi = c.beta1 * static_cast<double>(m[i]) + (1.0 - c.beta1) * g;
      const double vi = c.beta2 * static_cast<double>(v[i]) + (1.0 - c.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1, vhat = vi / bc2;
      double theta = static_cast<double>(p.value[i]);
      theta = theta - lr * c.weight_decay * theta - lr * mhat / (std::sqrt(vhat) + c.epsilon);
      p.value[i] = static_cast<T>(theta);
    }
  }
}

}  // namespace zsa::crossmodal
