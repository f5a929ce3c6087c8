#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "aida/error.hpp"
#include "aida/msidg.hpp"
#include "aida/tensor.hpp"

namespace aida {

inline constexpr double kNormalizerFloor = 1e-12;

enum class ControllerMode {
  kLiteral,    // scalar signal, uniform shift: provably a no-op on the simplex
  kPerDomain,  // per-domain entropy vector: the functioning variant
};

inline ControllerMode controller_mode_from_string(const std::string& s) {
  if (s == "literal") return ControllerMode::kLiteral;
  if (s == "per_domain") return ControllerMode::kPerDomain;
  throw ConfigError("unknown controller mode '" + s + "' (expected literal|per_domain)");
}

struct ControllerConfig {
  double eta_alpha = 0.05;
  double eta_lambda = 0.05;
  double lambda_max = 1.0;
  double lambda_init = 0.1;
  double decay = 0.99;  // running-normalizer decay, in (0, 1]
  ControllerMode mode = ControllerMode::kPerDomain;

  void validate() const {
    if (!(eta_alpha >= 0.0) || !(eta_lambda >= 0.0)) throw ContractError("step sizes must be >= 0");
    if (!(lambda_max >= 0.0) || lambda_init < 0.0 || lambda_init > lambda_max) {
      throw ContractError("lambda_init must lie in [0, lambda_max]");
    }
    if (!(decay > 0.0) || decay > 1.0) throw ContractError("decay must be in (0, 1]");
  }
};

// Mixing weights, regularization strength and running signal normalizers.
// Owned by the trainer; mutated sequentially between optimizer steps.
struct ControllerState {
  ControllerConfig config;
  std::vector<double> alpha;  // on the simplex
  double lambda_pmr = 0.1;
  double e_max = 0.0;
  double v_max = 0.0;

  static ControllerState init(ControllerConfig cfg, std::size_t num_domains) {
    cfg.validate();
    if (num_domains == 0) throw ContractError("controller needs at least one domain");
    ControllerState s;
    s.config = cfg;
    s.alpha.assign(num_domains, 1.0 / static_cast<double>(num_domains));
    s.lambda_pmr = cfg.lambda_init;
    return s;
  }
};

// Batch-wise prediction entropy: E = -(1/B) sum_i sum_c p_ic log p_ic, with
// 0 log 0 := 0. Rows must sum to 1 (checked to 1e-6).
inline double batch_entropy(const Tensor& posteriors) {
  if (posteriors.rank() != 2 || posteriors.rows() == 0) {
    throw ContractError("batch_entropy expects a non-empty [batch, classes] matrix");
  }
  const std::size_t b = posteriors.rows(), c = posteriors.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = posteriors(i, j);
      if (p < 0.0) throw ContractError("batch_entropy: negative probability " + std::to_string(p));
      row_sum += p;
      if (p > 0.0) total -= p * std::log(p);
    }
    if (std::abs(row_sum - 1.0) > 1e-6) {
      throw ContractError("batch_entropy: row " + std::to_string(i) + " sums to " +
                          std::to_string(row_sum));
    }
  }
  return total / static_cast<double>(b);
}

// Population variance of all gradient components flattened into one vector.
inline double gradient_variance(std::span<const Tensor> grads) {
  std::size_t n = 0;
  for (const Tensor& g : grads) n += g.size();
  if (n == 0) throw ContractError("gradient_variance: empty gradient set");
  double mean = 0.0;
  for (const Tensor& g : grads) {
    for (std::size_t i = 0; i < g.size(); ++i) mean += g[i];
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (const Tensor& g : grads) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = g[i] - mean;
      var += d * d;
    }
  }
  return var / static_cast<double>(n);
}

// Decayed running maxima with a small positive floor.
inline void update_normalizers(ControllerState& state, double entropy, double grad_var) {
  state.e_max = std::max({state.config.decay * state.e_max, entropy, kNormalizerFloor});
  state.v_max = std::max({state.config.decay * state.v_max, grad_var, kNormalizerFloor});
}

// Euclidean projection onto the probability simplex (sort-and-threshold).
inline MixWeights simplex_project(std::span<const double> v) {
  if (v.empty()) throw ContractError("simplex_project: empty vector");
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double tau = 0.0;
  std::size_t support = 0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumulative += u[j];
    const double candidate = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0.0) {
      tau = candidate;
      support = j + 1;
    }
  }
  if (support == 0) {  // all mass below threshold; fall back to argmax corner
    tau = u[0] - 1.0;
  }
  MixWeights w;
  w.alpha.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) w.alpha[i] = std::max(v[i] - tau, 0.0);
  return w;
}

// Literal update rule: alpha <- proj(alpha - eta * (E/E_max + V/V_max) * 1).
// A uniform shift is orthogonal to the simplex's affine hull, so this
// provably returns alpha unchanged; it is kept to document that behaviour.
inline void update_alpha_literal(ControllerState& state, double entropy, double grad_var) {
  const double signal = state.config.eta_alpha *
                        (entropy / state.e_max + grad_var / state.v_max);
  std::vector<double> shifted = state.alpha;
  for (double& a : shifted) a -= signal;
  state.alpha = simplex_project(shifted).alpha;
}

// Functioning variant: the scalar entropy is replaced by per-domain entropies
// computed on each domain's sub-batch, so domains whose intermediate samples
// are harder to classify lose mixing weight.
inline void update_alpha_per_domain(ControllerState& state, std::span<const double> domain_entropy,
                                    double grad_var) {
  if (domain_entropy.size() != state.alpha.size()) {
    throw ContractError("per-domain entropy size " + std::to_string(domain_entropy.size()) +
                        " != number of domains " + std::to_string(state.alpha.size()));
  }
  std::vector<double> shifted = state.alpha;
  for (std::size_t k = 0; k < shifted.size(); ++k) {
    shifted[k] -= state.config.eta_alpha *
                  (domain_entropy[k] / state.e_max + grad_var / state.v_max);
  }
  state.alpha = simplex_project(shifted).alpha;
}

// Dispatches on the configured mode; per-domain entropies are ignored in
// literal mode (the scalar batch entropy is used instead).
inline void update_alpha(ControllerState& state, double entropy,
                         std::span<const double> domain_entropy, double grad_var) {
  switch (state.config.mode) {
    case ControllerMode::kLiteral:
      update_alpha_literal(state, entropy, grad_var);
      return;
    case ControllerMode::kPerDomain:
      update_alpha_per_domain(state, domain_entropy, grad_var);
      return;
  }
  throw ConfigError("unknown controller mode");
}

// lambda <- clip(lambda + eta * (E/E_max + V/V_max), 0, lambda_max).
inline void update_lambda(ControllerState& state, double entropy, double grad_var) {
  const double signal = state.config.eta_lambda *
                        (entropy / state.e_max + grad_var / state.v_max);
  state.lambda_pmr = std::clamp(state.lambda_pmr + signal, 0.0, state.config.lambda_max);
}

}  // namespace aida
