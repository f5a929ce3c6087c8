#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "aida/autodiff.hpp"
#include "aida/error.hpp"
#include "aida/rng.hpp"
#include "aida/tensor.hpp"

namespace aida {

// Stabilizer inside sqrt for pair distances; keeps the gradient defined (and
// zero) when two embeddings coincide.
inline constexpr double kDistEps = 1e-16;

enum class TripletMode { kBatchHard, kRandom };
enum class PairPolicy { kAllPairs, kSampledPairs };

struct LossConfig {
  double margin = 0.3;
  double lambda_tri = 1.0;
  double lambda_rel = 0.5;
  TripletMode triplet_mode = TripletMode::kBatchHard;
  PairPolicy pair_policy = PairPolicy::kAllPairs;
  std::size_t pair_sample_count = 64;

  void validate() const {
    if (!(margin >= 0.0) || !(lambda_tri >= 0.0) || !(lambda_rel >= 0.0)) {
      throw ContractError("loss weights and margin must be finite and >= 0");
    }
  }
};

// Mean negative log posterior of the true class; log is underflow-guarded.
inline Var id_loss(Tape& tape, Var posteriors, const std::vector<int>& labels) {
  const Tensor& p = tape.value(posteriors);
  if (labels.size() != p.rows()) throw ContractError("id_loss: one label per row required");
  std::vector<std::size_t> cols;
  cols.reserve(labels.size());
  for (const int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= p.cols()) {
      throw ContractError("id_loss: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(p.cols()) + ")");
    }
    cols.push_back(static_cast<std::size_t>(y));
  }
  Var picked = take_per_row(posteriors, std::move(cols));
  // Guard against underflow, then clamp at 1 (as 1 - relu(1 - x)) so a
  // perfect posterior yields exactly zero loss.
  Var guarded = sub(tape.constant(1.0), relu(sub(tape.constant(1.0), add(picked, 1e-12))));
  return neg(mean(log(guarded)));
}

namespace detail {

// Squared distances between rows, plain values (used for mining only).
inline std::vector<double> row_sq_dists(const Tensor& z, std::size_t anchor) {
  const std::size_t b = z.rows(), d = z.cols();
  std::vector<double> out(b, 0.0);
  for (std::size_t j = 0; j < b; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = z(anchor, k) - z(j, k);
      s += diff * diff;
    }
    out[j] = s;
  }
  return out;
}

// Euclidean distances between corresponding rows of two [N, d] vars.
inline Var paired_row_dists(Var a, Var b) {
  Var diff = sub(a, b);
  return sqrt(add(sum(mul(diff, diff), 1), kDistEps));
}

}  // namespace detail

// Batch-hard margin loss: per anchor, hardest (max-distance) positive and
// hardest (min-distance) negative are mined from values; only the selected
// pairs enter the differentiable graph. Ties break toward the lower index.
inline Var batch_hard_triplet(Tape& tape, Var z_hat, const std::vector<int>& labels,
                              double margin) {
  const Tensor& z = tape.value(z_hat);
  const std::size_t b = z.rows();
  if (labels.size() != b) throw ContractError("batch_hard_triplet: one label per row required");

  std::vector<std::size_t> pos_idx(b), neg_idx(b);
  for (std::size_t i = 0; i < b; ++i) {
    const std::vector<double> d2 = detail::row_sq_dists(z, i);
    bool has_pos = false, has_neg = false;
    double worst_pos = -1.0, best_neg = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      if (j != i && labels[j] == labels[i]) {
        if (!has_pos || d2[j] > worst_pos) {
          worst_pos = d2[j];
          pos_idx[i] = j;
          has_pos = true;
        }
      } else if (labels[j] != labels[i]) {
        if (!has_neg || d2[j] < best_neg) {
          best_neg = d2[j];
          neg_idx[i] = j;
          has_neg = true;
        }
      }
    }
    if (!has_pos || !has_neg) {
      throw ContractError("batch_hard_triplet: anchor " + std::to_string(i) + " (label " +
                          std::to_string(labels[i]) + ") lacks a " +
                          (has_pos ? "negative" : "positive"));
    }
  }

  Var dp = detail::paired_row_dists(z_hat, gather_rows(z_hat, std::move(pos_idx)));
  Var dn = detail::paired_row_dists(z_hat, gather_rows(z_hat, std::move(neg_idx)));
  return mean(relu(add(sub(dp, dn), margin)));
}

// Plain random-triplet variant kept for ablation: one random positive and
// negative per anchor.
inline Var random_triplet(Tape& tape, Var z_hat, const std::vector<int>& labels, double margin,
                          Rng& rng) {
  const Tensor& z = tape.value(z_hat);
  const std::size_t b = z.rows();
  if (labels.size() != b) throw ContractError("random_triplet: one label per row required");
  std::vector<std::size_t> pos_idx(b), neg_idx(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t j = 0; j < b; ++j) {
      if (j != i && labels[j] == labels[i]) pos.push_back(j);
      if (labels[j] != labels[i]) neg.push_back(j);
    }
    if (pos.empty() || neg.empty()) {
      throw ContractError("random_triplet: anchor " + std::to_string(i) + " lacks a " +
                          (pos.empty() ? "positive" : "negative"));
    }
    pos_idx[i] = pos[static_cast<std::size_t>(rng.below(pos.size()))];
    neg_idx[i] = neg[static_cast<std::size_t>(rng.below(neg.size()))];
  }
  Var dp = detail::paired_row_dists(z_hat, gather_rows(z_hat, std::move(pos_idx)));
  Var dn = detail::paired_row_dists(z_hat, gather_rows(z_hat, std::move(neg_idx)));
  return mean(relu(add(sub(dp, dn), margin)));
}

struct SupervisedLoss {
  Var total, id, tri;
};

// id term plus weighted triplet term. A zero triplet weight short-circuits
// mining entirely, so degenerate batches without valid triples stay usable.
inline SupervisedLoss supervised_loss(Tape& tape, Var posteriors, Var z_hat,
                                      const std::vector<int>& labels, const LossConfig& cfg,
                                      Rng* rng = nullptr) {
  cfg.validate();
  SupervisedLoss out;
  out.id = id_loss(tape, posteriors, labels);
  if (cfg.lambda_tri == 0.0) {
    out.tri = tape.constant(0.0);
    out.total = out.id;
    return out;
  }
  if (cfg.triplet_mode == TripletMode::kRandom) {
    if (rng == nullptr) throw ContractError("random triplet mode needs an rng");
    out.tri = random_triplet(tape, z_hat, labels, cfg.margin, *rng);
  } else {
    out.tri = batch_hard_triplet(tape, z_hat, labels, cfg.margin);
  }
  out.total = add(out.id, mul(out.tri, cfg.lambda_tri));
  return out;
}

// Mean squared L2 distance between corresponding rows of two normalized
// embedding batches.
inline Var pmr_point_loss(Tape& tape, Var z_hat, Var z_tilde) {
  const Tensor& a = tape.value(z_hat);
  const Tensor& b = tape.value(z_tilde);
  if (!a.same_shape(b)) {
    throw ContractError("pmr_point_loss shape mismatch " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  Var diff = sub(z_hat, z_tilde);
  return mean(sum(mul(diff, diff), 1));
}

using PairList = std::vector<std::pair<std::size_t, std::size_t>>;

// Pair set for relational consistency: all unordered pairs, or a seeded
// random subset for larger batches.
inline PairList make_pairs(std::size_t batch, PairPolicy policy, std::size_t sample_count,
                           std::uint64_t seed) {
  PairList pairs;
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t j = i + 1; j < batch; ++j) pairs.emplace_back(i, j);
  }
  if (policy == PairPolicy::kSampledPairs && pairs.size() > sample_count) {
    Rng rng(derive_seed(seed, "pair-sample"));
    for (std::size_t pick = 0; pick < sample_count; ++pick) {
      const std::size_t j = pick + static_cast<std::size_t>(rng.below(pairs.size() - pick));
      std::swap(pairs[pick], pairs[j]);
    }
    pairs.resize(sample_count);
  }
  return pairs;
}

// Mean absolute difference of pairwise distances between the original and
// mirrored embeddings, over the given index pairs.
inline Var relational_loss(Tape& tape, Var z_hat, Var z_tilde, const PairList& pairs) {
  if (pairs.empty()) throw ContractError("relational_loss: empty pair set");
  const Tensor& z = tape.value(z_hat);
  std::vector<std::size_t> is, js;
  is.reserve(pairs.size());
  js.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    if (i >= z.rows() || j >= z.rows()) {
      throw ContractError("relational_loss: pair index outside batch");
    }
    is.push_back(i);
    js.push_back(j);
  }
  Var d_orig = detail::paired_row_dists(gather_rows(z_hat, is), gather_rows(z_hat, js));
  Var d_mirror = detail::paired_row_dists(gather_rows(z_tilde, is), gather_rows(z_tilde, js));
  return mean(abs(sub(d_orig, d_mirror)));
}

struct PmrLoss {
  Var total, point, rel;
};

// Point consistency plus weighted relational consistency.
inline PmrLoss pmr_loss(Tape& tape, Var z_hat, Var z_tilde, const LossConfig& cfg,
                        std::uint64_t pair_seed = 0) {
  cfg.validate();
  PmrLoss out;
  out.point = pmr_point_loss(tape, z_hat, z_tilde);
  if (cfg.lambda_rel == 0.0) {
    out.rel = tape.constant(0.0);
    out.total = out.point;
    return out;
  }
  const PairList pairs =
      make_pairs(tape.value(z_hat).rows(), cfg.pair_policy, cfg.pair_sample_count, pair_seed);
  out.rel = relational_loss(tape, z_hat, z_tilde, pairs);
  out.total = add(out.point, mul(out.rel, cfg.lambda_rel));
  return out;
}

inline Var total_loss(Var sup, Var pmr, double lambda_pmr) {
  return add(sup, mul(pmr, lambda_pmr));
}

inline double total_loss(double sup, double pmr, double lambda_pmr) {
  return sup + lambda_pmr * pmr;
}

}  // namespace aida
