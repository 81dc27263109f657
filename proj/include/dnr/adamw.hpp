// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>

#include "dnr/autograd.hpp"
#include "dnr/error.hpp"
#include "dnr/params.hpp"
#include "dnr/tensor.hpp"

namespace dnr {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct Moments {
  Tensor first;
  Tensor second;
};

/// One decoupled-weight-decay Adam update of a single tensor, with bias
/// correction for the given (1-based) step.
inline void adamw_update(Tensor& param, const Tensor& grad, Moments& m, std::size_t step,
                         const AdamWOptions& o) {
  require(param.shape() == grad.shape() && param.shape() == m.first.shape() &&
              param.shape() == m.second.shape(),
          "adamw: shape mismatch between parameter " + shape_str(param.shape()) + " and gradient " +
              shape_str(grad.shape()));
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    param[i] -= o.lr * o.weight_decay * param[i];
    m.first[i] = o.beta1 * m.first[i] + (1.0 - o.beta1) * g;
    m.second[i] = o.beta2 * m.second[i] + (1.0 - o.beta2) * g * g;
    const double mhat = m.first[i] / c1;
    const double vhat = m.second[i] / c2;
    param[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
  }
}

class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {
    require(options.lr > 0.0, "adamw: lr must be positive");
    require(options.beta1 > 0.0 && options.beta1 < 1.0, "adamw: beta1 must lie in (0,1)");
    require(options.beta2 > 0.0 && options.beta2 < 1.0, "adamw: beta2 must lie in (0,1)");
    require(options.eps > 0.0, "adamw: eps must be positive");
    require(options.weight_decay >= 0.0, "adamw: weight_decay must be non-negative");
  }

  /// Updates every trainable parameter of the store that has a gradient.
  /// Frozen parameters are skipped and never acquire optimizer state.
  void step(ParameterStore& store, const Gradients& grads) {
    for (const auto& [name, g] : grads)
      require(store.contains(name), "adamw: gradient for unknown parameter '" + name + "'");
    ++step_;
    for (const auto& [name, g] : grads) {
      if (store.frozen(name)) continue;
      if (!g.all_finite()) throw numeric_fault("adamw: non-finite gradient for '" + name + "'");
      Tensor& p = store.get_mutable(name);
      auto [it, inserted] = state_.try_emplace(name, Moments{Tensor(p.shape()), Tensor(p.shape())});
      adamw_update(p, g, it->second, step_, options_);
    }
  }

  std::size_t step_count() const noexcept { return step_; }
  bool has_state(const std::string& name) const { return state_.contains(name); }
  std::size_t state_size() const noexcept { return state_.size(); }
  const AdamWOptions& options() const noexcept { return options_; }

 private:
  AdamWOptions options_;
  std::map<std::string, Moments> state_;
  std::size_t step_ = 0;
};

}  // namespace dnr
