#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "aida/error.hpp"
#include "aida/model.hpp"
#include "aida/tensor.hpp"

namespace aida {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 || !(eps > 0.0)) {
      throw ContractError("adam hyperparameters out of range");
    }
  }
};

// First/second moments aligned with a fixed tensor ordering, plus the step
// counter for bias correction.
struct AdamState {
  std::vector<Tensor> m, v;
  std::size_t t = 0;

  static AdamState init(std::span<const Tensor> shaped_like) {
    AdamState s;
    for (const Tensor& p : shaped_like) {
      s.m.push_back(Tensor::zeros(p.shape()));
      s.v.push_back(Tensor::zeros(p.shape()));
    }
    return s;
  }
};

// Standard bias-corrected adaptive-moment update, applied in place.
inline void optimizer_step(std::span<Tensor*> params, std::span<const Tensor> grads,
                           AdamState& state, double lr, const AdamConfig& cfg) {
  cfg.validate();
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ContractError("optimizer_step: params, grads and moments must align");
  }
  if (!(lr > 0.0)) throw ContractError("optimizer_step: learning rate must be > 0");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (!p.same_shape(g) || !p.same_shape(state.m[i])) {
      throw ContractError("optimizer_step: gradient/moment shape mismatch at tensor " +
                          std::to_string(i));
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      state.m[i][j] = cfg.beta1 * state.m[i][j] + (1.0 - cfg.beta1) * g[j];
      state.v[i][j] = cfg.beta2 * state.v[i][j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = state.m[i][j] / bc1;
      const double vhat = state.v[i][j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace aida
