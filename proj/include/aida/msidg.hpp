#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "aida/autodiff.hpp"
#include "aida/error.hpp"
#include "aida/model.hpp"
#include "aida/tensor.hpp"

namespace aida {

inline constexpr double kStatsEps = 1e-5;
inline constexpr double kSimplexTol = 1e-6;

// Per-channel mean and population standard deviation over the batch axis.
struct ChannelStats {
  std::vector<double> mu;
  std::vector<double> sigma;

  std::size_t channels() const { return mu.size(); }
};

// Nonnegative mixing weights on the probability simplex.
struct MixWeights {
  std::vector<double> alpha;

  void validate(double tol = kSimplexTol) const {
    double sum = 0.0;
    for (const double a : alpha) {
      if (a < -tol) throw ContractError("mix weight below zero: " + std::to_string(a));
      sum += a;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw ContractError("mix weights sum to " + std::to_string(sum) + ", expected 1");
    }
  }
};

inline ChannelStats channel_stats(const Tensor& f) {
  if (f.rank() != 2 || f.rows() == 0) {
    throw ContractError("channel_stats expects a non-empty [batch, channels] map");
  }
  const std::size_t b = f.rows(), c = f.cols();
  ChannelStats s;
  s.mu.assign(c, 0.0);
  s.sigma.assign(c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < b; ++i) m += f(i, j);
    m /= static_cast<double>(b);
    double v = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      const double d = f(i, j) - m;
      v += d * d;
    }
    s.mu[j] = m;
    s.sigma[j] = std::sqrt(v / static_cast<double>(b));
  }
  return s;
}

// f_tilde = donor.sigma * (f - mu(f)) / max(sigma(f), eps) + donor.mu.
// eps guards the division for near-constant channels and leaves healthy
// channels untouched, so an identity donor reproduces the content exactly
// and the transfer is idempotent in the donor statistics.
// Differentiable through f (content stats included); donor statistics enter
// as constants so style sources receive no gradient.
inline Var statistics_transfer(Tape& tape, Var f, const ChannelStats& donor,
                               double eps = kStatsEps) {
  const Tensor& fv = tape.value(f);
  if (fv.rank() != 2 || donor.channels() != fv.cols()) {
    throw ContractError("statistics_transfer channel mismatch: map has " +
                        std::to_string(fv.cols()) + " channels, donor has " +
                        std::to_string(donor.channels()));
  }
  if (!(eps > 0.0)) throw ContractError("statistics_transfer requires eps > 0");
  Var mu = mean(f, 0, true);                       // [1, C]
  Var centered = sub(f, mu);
  Var sigma = sqrt(variance(f, 0, true));          // population std, [1, C]
  Var normed = div(centered, clamp_min(sigma, eps));
  Var donor_sigma = tape.constant(Tensor({1, donor.channels()}, std::vector<double>(donor.sigma)));
  Var donor_mu = tape.constant(Tensor({1, donor.channels()}, std::vector<double>(donor.mu)));
  return add(mul(normed, donor_sigma), donor_mu);
}

inline Tensor statistics_transfer(const Tensor& f, const ChannelStats& donor,
                                  double eps = kStatsEps) {
  Tape tape;
  return tape.value(statistics_transfer(tape, tape.constant(f), donor, eps));
}

// Convex aggregation of donor statistics: (sum_k a_k mu_k, sum_k a_k sigma_k).
inline ChannelStats aggregate_stats(std::span<const ChannelStats> stats, const MixWeights& alpha) {
  if (stats.empty() || stats.size() != alpha.alpha.size()) {
    throw ContractError("aggregate_stats needs one weight per donor");
  }
  alpha.validate();
  const std::size_t c = stats[0].channels();
  ChannelStats agg;
  agg.mu.assign(c, 0.0);
  agg.sigma.assign(c, 0.0);
  for (std::size_t k = 0; k < stats.size(); ++k) {
    if (stats[k].channels() != c) throw ContractError("donor channel counts differ");
    for (std::size_t j = 0; j < c; ++j) {
      agg.mu[j] += alpha.alpha[k] * stats[k].mu[j];
      agg.sigma[j] += alpha.alpha[k] * stats[k].sigma[j];
    }
  }
  return agg;
}

// Sum form: f_tilde = sum_k alpha_k (sigma_k * norm(f) + mu_k). Equals the
// aggregated-donor transfer by linearity in (mu, sigma); both forms are kept
// so the equivalence is testable.
inline Var multi_source_mix(Tape& tape, Var f, std::span<const ChannelStats> stats,
                            const MixWeights& alpha, double eps = kStatsEps) {
  if (stats.empty() || stats.size() != alpha.alpha.size()) {
    throw ContractError("multi_source_mix needs one weight per donor");
  }
  alpha.validate();
  const Shape fshape = tape.value(f).shape();
  Var mu = mean(f, 0, true);
  Var sigma = sqrt(variance(f, 0, true));
  Var normed = div(sub(f, mu), clamp_min(sigma, eps));
  Var acc = tape.constant(Tensor::zeros(fshape));
  for (std::size_t k = 0; k < stats.size(); ++k) {
    if (stats[k].channels() != fshape[1]) throw ContractError("donor channel counts differ");
    Var dk_sigma =
        tape.constant(Tensor({1, stats[k].channels()}, std::vector<double>(stats[k].sigma)));
    Var dk_mu = tape.constant(Tensor({1, stats[k].channels()}, std::vector<double>(stats[k].mu)));
    Var transferred = add(mul(normed, dk_sigma), dk_mu);
    acc = add(acc, mul(transferred, alpha.alpha[k]));
  }
  return acc;
}

inline Tensor multi_source_mix(const Tensor& f, std::span<const ChannelStats> stats,
                               const MixWeights& alpha, double eps = kStatsEps) {
  Tape tape;
  return tape.value(multi_source_mix(tape, tape.constant(f), stats, alpha, eps));
}

// Embedding of an intermediate feature map: head + row normalization.
// Differentiable through f_tilde back to the original features.
inline Var intermediate_embed(Tape& tape, const ModelVars& m, Var f_tilde) {
  return l2_normalize(tape, embed(tape, m, f_tilde));
}

}  // namespace aida
