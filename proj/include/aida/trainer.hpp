#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "aida/dfc.hpp"
#include "aida/error.hpp"
#include "aida/losses.hpp"
#include "aida/metrics.hpp"
#include "aida/model.hpp"
#include "aida/msidg.hpp"
#include "aida/optimizer.hpp"
#include "aida/rng.hpp"
#include "aida/synth.hpp"

namespace aida {

struct TrainConfig {
  std::size_t epochs_sup = 30;
  std::size_t epochs_aida = 20;
  std::size_t epochs_sf = 10;
  std::size_t batch_p = 8;   // identities per batch
  std::size_t batch_k = 4;   // instances per identity
  std::size_t batches_per_epoch = 0;  // 0: derived from dataset size
  double lr_sup = 3.0e-4;
  double lr_aida = 3.0e-4;
  double lr_sf = 1.0e-4;
  AdamConfig adam;
  LossConfig loss;
  ControllerConfig controller;
  std::vector<std::size_t> hidden_dims = {64, 64};
  std::size_t embed_dim = 32;
  bool classify_on_raw = false;
  std::uint64_t seed = 0;

  // Stage-2 component toggles. sup_on_intermediate trains the supervised
  // objective on the mixed embeddings as well (with the anchors' labels),
  // which is how the generator acts when consistency regularization is off.
  bool use_msidg = true;
  bool use_pmr = true;
  bool use_dfc = true;
  bool sup_on_intermediate = false;
  bool exclude_own_domain = false;
  double stats_eps = kStatsEps;

  // Source-free refinement.
  std::size_t sf_clusters = 2;
  bool sf_use_pseudo_labels = false;
  double sf_pseudo_label_weight = 1.0;
  double sf_consistency_weight = 1.0;

  void validate() const {
    adam.validate();
    loss.validate();
    controller.validate();
    if (batch_p < 2 || batch_k < 2) throw ContractError("batch_p and batch_k must be >= 2");
    if (!(lr_sup > 0.0) || !(lr_aida > 0.0) || !(lr_sf > 0.0)) {
      throw ContractError("learning rates must be > 0");
    }
    if (embed_dim < 1 || sf_clusters < 1) throw ContractError("dimensions must be >= 1");
  }
};

// One CSV row per optimizer step.
struct StepRecord {
  std::string stage;  // "sup" | "aida" | "sf"
  std::size_t epoch = 0;
  std::size_t step = 0;  // global step counter
  double loss_total = 0.0, loss_id = 0.0, loss_tri = 0.0;
  double loss_pmr_point = 0.0, loss_rel = 0.0;
  double entropy = 0.0, grad_var = 0.0, lambda_pmr = 0.0;
  double e_max = 0.0, v_max = 0.0;
  std::vector<double> alpha;
};

struct EpochStats {
  std::string stage;
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;  // argmax-posterior accuracy, supervised stages only
};

struct TrainState {
  ModelParams params;
  AdamState adam;
  ControllerState controller;
  std::size_t global_step = 0;
  std::vector<StepRecord> trace;
  std::vector<EpochStats> epoch_stats;
};

namespace detail {

inline std::vector<Tensor*> param_ptrs(ModelParams& p) {
  std::vector<Tensor*> out;
  p.for_each_param([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

inline std::vector<Tensor> param_copies(const ModelParams& p) {
  std::vector<Tensor> out;
  p.for_each_param([&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

inline std::vector<int> batch_labels(std::span<const Sample> batch) {
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (const Sample& s : batch) labels.push_back(s.identity_label);
  return labels;
}

inline void check_finite(double loss, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw TrainingError("training diverged: non-finite loss at step " + std::to_string(step));
  }
}

// Runaway updates can zero out downstream losses (relu clamps NaN), so the
// parameters themselves are the reliable divergence signal.
inline void check_params_finite(const ModelParams& params, std::size_t step) {
  params.for_each_param([&](const std::string& name, const Tensor& t) {
    if (!t.all_finite()) {
      throw TrainingError("training diverged: non-finite values in " + name + " after step " +
                          std::to_string(step));
    }
  });
}

// Numeric blow-ups inside a step (degenerate embeddings, log/sqrt domain
// errors from runaway parameters) become training failures with step context.
template <typename F>
auto guarded_step(std::size_t step, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const MathDomainError& e) {
    throw TrainingError("training failed at step " + std::to_string(step) + ": " + e.what());
  }
}

inline double batch_accuracy(const Tensor& posteriors, const std::vector<int>& labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < posteriors.rows(); ++i) {
    std::size_t am = 0;
    for (std::size_t c = 1; c < posteriors.cols(); ++c) {
      if (posteriors(i, c) > posteriors(i, am)) am = c;
    }
    hits += (static_cast<int>(am) == labels[i]);
  }
  return static_cast<double>(hits) / static_cast<double>(posteriors.rows());
}

// Rows of the batch belonging to each source, by matching domain ids.
inline std::vector<std::vector<std::size_t>> domain_groups(std::span<const Sample> batch,
                                                           std::span<const DomainDataset> sources) {
  std::map<int, std::size_t> domain_to_k;
  for (std::size_t k = 0; k < sources.size(); ++k) {
    domain_to_k[sources[k].spec.domain_id] = k;
  }
  std::vector<std::vector<std::size_t>> groups(sources.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto it = domain_to_k.find(batch[i].domain_id);
    if (it == domain_to_k.end()) {
      throw ContractError("batch sample from unknown domain " +
                          std::to_string(batch[i].domain_id));
    }
    groups[it->second].push_back(i);
  }
  return groups;
}

inline ChannelStats stats_of_rows(const Tensor& f, std::span<const std::size_t> rows) {
  Tensor sub = Tensor::zeros({rows.size(), f.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < f.cols(); ++j) sub(i, j) = f(rows[i], j);
  }
  return channel_stats(sub);
}

// Restyles every sample: its own domain's sub-batch statistics are removed
// (content normalization per group, on tape) and the donor mixture's are
// imposed. exclude_own drops the sample's own domain from its donor mixture,
// renormalizing the weights. Rows are scattered back with one-hot matrices.
inline Var per_domain_restyle(Tape& tape, Var f,
                              const std::vector<std::vector<std::size_t>>& groups,
                              std::span<const ChannelStats> stats,
                              std::span<const double> alpha, double eps, bool exclude_own) {
  const Shape fshape = tape.value(f).shape();
  Var acc = tape.constant(Tensor::zeros(fshape));
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (groups[k].empty()) continue;
    MixWeights w{std::vector<double>(alpha.begin(), alpha.end())};
    if (exclude_own) {
      w.alpha[k] = 0.0;
      double sum = std::accumulate(w.alpha.begin(), w.alpha.end(), 0.0);
      if (sum <= 0.0) {  // all weight sat on k; fall back to uniform others
        for (std::size_t j = 0; j < w.alpha.size(); ++j) w.alpha[j] = (j == k) ? 0.0 : 1.0;
        sum = static_cast<double>(w.alpha.size() - 1);
      }
      for (double& a : w.alpha) a /= sum;
    }
    Var sub = gather_rows(f, groups[k]);
    Var restyled = statistics_transfer(tape, sub, aggregate_stats(stats, w), eps);
    Tensor scatter = Tensor::zeros({fshape[0], groups[k].size()});
    for (std::size_t i = 0; i < groups[k].size(); ++i) scatter(groups[k][i], i) = 1.0;
    acc = add(acc, matmul(tape.constant(scatter), restyled));
  }
  return acc;
}

}  // namespace detail

inline std::size_t derive_batches_per_epoch(const TrainConfig& cfg,
                                            std::span<const DomainDataset> sources) {
  if (cfg.batches_per_epoch > 0) return cfg.batches_per_epoch;
  std::size_t total = 0;
  for (const DomainDataset& d : sources) total += d.size();
  return std::max<std::size_t>(1, total / (cfg.batch_p * cfg.batch_k));
}

inline TrainState init_train_state(const TrainConfig& cfg,
                                   std::span<const DomainDataset> sources) {
  cfg.validate();
  if (sources.empty()) throw ContractError("training needs at least one source domain");
  ModelConfig mcfg;
  mcfg.feature_dim = sources[0].spec.feature_dim;
  mcfg.hidden_dims = cfg.hidden_dims;
  mcfg.embed_dim = cfg.embed_dim;
  mcfg.num_classes = total_identities(sources);
  mcfg.classify_on_raw = cfg.classify_on_raw;
  TrainState state;
  state.params = init_model(mcfg, cfg.seed);
  state.adam = AdamState::init(detail::param_copies(state.params));
  state.controller = ControllerState::init(cfg.controller, sources.size());
  return state;
}

// Stage 1: supervised pre-training on the labeled sources.
inline TrainState stage1_supervised(const TrainConfig& cfg,
                                    std::span<const DomainDataset> sources) {
  TrainState state = init_train_state(cfg, sources);
  const std::size_t batches = derive_batches_per_epoch(cfg, sources);
  Rng triplet_rng(derive_seed(cfg.seed, "stage1-random-triplet"));

  for (std::size_t epoch = 0; epoch < cfg.epochs_sup; ++epoch) {
    double epoch_loss = 0.0, epoch_acc = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const auto batch =
          pk_sample(sources, cfg.batch_p, cfg.batch_k,
                    derive_seed(cfg.seed, "stage1-batch", state.global_step));
      const std::vector<int> labels = detail::batch_labels(batch);

      StepRecord rec = detail::guarded_step(state.global_step, [&] {
        Tape tape;
        ModelVars m = lift(tape, state.params);
        Var x = tape.constant(samples_to_matrix(batch));
        Var f = extract_features(tape, m, x);
        Var z = embed(tape, m, f);
        Var zh = l2_normalize(tape, z);
        Var posteriors = classify(tape, m, cfg.classify_on_raw ? z : zh);
        const SupervisedLoss sup =
            supervised_loss(tape, posteriors, zh, labels, cfg.loss, &triplet_rng);

        tape.backward(sup.total);
        std::vector<Tensor> grads;
        grads.reserve(m.flat.size());
        for (const Var v : m.flat) grads.push_back(tape.grad(v));
        auto ptrs = detail::param_ptrs(state.params);
        optimizer_step(ptrs, grads, state.adam, cfg.lr_sup, cfg.adam);
        detail::check_params_finite(state.params, state.global_step);

        const double loss_val = tape.value(sup.total).item();
        detail::check_finite(loss_val, state.global_step);
        epoch_loss += loss_val;
        epoch_acc += detail::batch_accuracy(tape.value(posteriors), labels);

        StepRecord r;
        r.stage = "sup";
        r.epoch = epoch;
        r.loss_total = loss_val;
        r.loss_id = tape.value(sup.id).item();
        r.loss_tri = tape.value(sup.tri).item();
        r.grad_var = gradient_variance(grads);
        return r;
      });
      rec.step = state.global_step++;
      rec.lambda_pmr = state.controller.lambda_pmr;
      rec.e_max = state.controller.e_max;
      rec.v_max = state.controller.v_max;
      rec.alpha = state.controller.alpha;
      state.trace.push_back(std::move(rec));
    }
    state.epoch_stats.push_back(EpochStats{"sup", epoch, epoch_loss / static_cast<double>(batches),
                                           epoch_acc / static_cast<double>(batches)});
  }
  return state;
}

// Stage 2: adaptive intermediate-domain training with feedback control.
inline TrainState stage2_aida(TrainState state, const TrainConfig& cfg,
                              std::span<const DomainDataset> sources) {
  cfg.validate();
  if (cfg.use_msidg && cfg.batch_p < sources.size()) {
    throw ContractError("stage 2 needs batch_p >= number of sources so every domain "
                        "contributes batch statistics");
  }
  const std::size_t batches = derive_batches_per_epoch(cfg, sources);
  state.adam = AdamState::init(detail::param_copies(state.params));  // fresh moments per stage
  Rng triplet_rng(derive_seed(cfg.seed, "stage2-random-triplet"));

  for (std::size_t epoch = 0; epoch < cfg.epochs_aida; ++epoch) {
    double epoch_loss = 0.0, epoch_acc = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const auto batch =
          pk_sample(sources, cfg.batch_p, cfg.batch_k,
                    derive_seed(cfg.seed, "stage2-batch", state.global_step));
      const std::vector<int> labels = detail::batch_labels(batch);

      StepRecord rec = detail::guarded_step(state.global_step, [&] {
      Tape tape;
      ModelVars m = lift(tape, state.params);
      Var x = tape.constant(samples_to_matrix(batch));
      Var f = extract_features(tape, m, x);
      Var z = embed(tape, m, f);
      Var zh = l2_normalize(tape, z);
      Var posteriors = classify(tape, m, cfg.classify_on_raw ? z : zh);
      const SupervisedLoss sup =
          supervised_loss(tape, posteriors, zh, labels, cfg.loss, &triplet_rng);

      StepRecord r;
      r.stage = "aida";
      r.epoch = epoch;
      r.loss_id = tape.value(sup.id).item();
      r.loss_tri = tape.value(sup.tri).item();

      Var objective = sup.total;
      std::vector<double> per_domain_entropy(sources.size(), 0.0);
      if (cfg.use_msidg) {
        // Donor statistics from each domain's sub-batch, detached from the tape.
        const auto groups = detail::domain_groups(batch, sources);
        const Tensor& fv = tape.value(f);
        std::vector<ChannelStats> stats;
        stats.reserve(groups.size());
        for (std::size_t k = 0; k < groups.size(); ++k) {
          if (groups[k].empty()) {
            throw TrainingError("stage 2 batch missing samples from domain index " +
                                std::to_string(k));
          }
          stats.push_back(detail::stats_of_rows(fv, groups[k]));
        }
        Var f_tilde = detail::per_domain_restyle(tape, f, groups, stats, state.controller.alpha,
                                                 cfg.stats_eps, cfg.exclude_own_domain);
        Var z_tilde = intermediate_embed(tape, m, f_tilde);
        Var posteriors_int = classify(tape, m, z_tilde);

        if (cfg.sup_on_intermediate) {
          const SupervisedLoss sup_int =
              supervised_loss(tape, posteriors_int, z_tilde, labels, cfg.loss, &triplet_rng);
          objective = mul(add(sup.total, sup_int.total), 0.5);
          r.loss_id = 0.5 * (r.loss_id + tape.value(sup_int.id).item());
          r.loss_tri = 0.5 * (r.loss_tri + tape.value(sup_int.tri).item());
        }
        if (cfg.use_pmr) {
          const PmrLoss pmr = pmr_loss(tape, zh, z_tilde, cfg.loss,
                                       derive_seed(cfg.seed, "stage2-pairs", state.global_step));
          objective = total_loss(objective, pmr.total, state.controller.lambda_pmr);
          r.loss_pmr_point = tape.value(pmr.point).item();
          r.loss_rel = tape.value(pmr.rel).item();
        }

        const Tensor& post_int = tape.value(posteriors_int);
        r.entropy = batch_entropy(post_int);
        for (std::size_t k = 0; k < groups.size(); ++k) {
          Tensor sub = Tensor::zeros({groups[k].size(), post_int.cols()});
          for (std::size_t i = 0; i < groups[k].size(); ++i) {
            for (std::size_t c = 0; c < post_int.cols(); ++c) {
              sub(i, c) = post_int(groups[k][i], c);
            }
          }
          per_domain_entropy[k] = batch_entropy(sub);
        }
      }

      tape.backward(objective);
      std::vector<Tensor> grads;
      grads.reserve(m.flat.size());
      for (const Var v : m.flat) grads.push_back(tape.grad(v));
      auto ptrs = detail::param_ptrs(state.params);
      optimizer_step(ptrs, grads, state.adam, cfg.lr_aida, cfg.adam);
      detail::check_params_finite(state.params, state.global_step);

      const double loss_val = tape.value(objective).item();
      detail::check_finite(loss_val, state.global_step);
      epoch_loss += loss_val;
      epoch_acc += detail::batch_accuracy(tape.value(posteriors), labels);
      r.loss_total = loss_val;
      r.grad_var = gradient_variance(grads);

      // Controller feedback runs after the optimizer step.
      if (cfg.use_msidg) {
        update_normalizers(state.controller, r.entropy, r.grad_var);
        if (cfg.use_dfc) {
          update_alpha(state.controller, r.entropy, per_domain_entropy, r.grad_var);
          update_lambda(state.controller, r.entropy, r.grad_var);
        }
      }
      return r;
      });  // guarded_step

      rec.step = state.global_step++;
      rec.lambda_pmr = state.controller.lambda_pmr;
      rec.e_max = state.controller.e_max;
      rec.v_max = state.controller.v_max;
      rec.alpha = state.controller.alpha;
      state.trace.push_back(std::move(rec));
    }
    state.epoch_stats.push_back(EpochStats{"aida", epoch,
                                           epoch_loss / static_cast<double>(batches),
                                           epoch_acc / static_cast<double>(batches)});
  }
  return state;
}

// Source-free refinement on unlabeled target vectors. The signature admits
// only the model state and raw target features; source data cannot reach
// this code path.
inline TrainState sf_refine(TrainState state, const TrainConfig& cfg,
                            const std::vector<std::vector<double>>& target_vectors) {
  cfg.validate();
  if (cfg.epochs_sf == 0) return state;
  if (target_vectors.empty()) throw ContractError("sf_refine: empty target set");
  const std::size_t n = target_vectors.size();
  const std::size_t batch_size = std::min(n, cfg.batch_p * cfg.batch_k);
  const std::size_t batches = std::max<std::size_t>(1, n / batch_size);
  state.adam = AdamState::init(detail::param_copies(state.params));

  // Optional pseudo-label head, local to the refinement run.
  AffineLayer pseudo_head;
  AdamState pseudo_adam;
  if (cfg.sf_use_pseudo_labels) {
    Rng rng(derive_seed(cfg.seed, "sf-pseudo-head"));
    pseudo_head.w = Tensor::zeros({cfg.embed_dim, cfg.sf_clusters});
    const double stddev = std::sqrt(2.0 / static_cast<double>(cfg.embed_dim));
    for (std::size_t i = 0; i < pseudo_head.w.size(); ++i) {
      pseudo_head.w[i] = rng.normal(0.0, stddev);
    }
    pseudo_head.b = Tensor::zeros({cfg.sf_clusters});
    pseudo_adam = AdamState::init(std::vector<Tensor>{pseudo_head.w, pseudo_head.b});
  }

  Rng shuffle_rng(derive_seed(cfg.seed, "sf-shuffle"));
  for (std::size_t epoch = 0; epoch < cfg.epochs_sf; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;

    for (std::size_t b = 0; b < batches; ++b) {
      Tensor x = Tensor::zeros({batch_size, target_vectors[0].size()});
      for (std::size_t i = 0; i < batch_size; ++i) {
        const auto& v = target_vectors[order[(b * batch_size + i) % n]];
        for (std::size_t j = 0; j < v.size(); ++j) x(i, j) = v[j];
      }

      StepRecord rec = detail::guarded_step(state.global_step, [&] {
      Tape tape;
      ModelVars m = lift(tape, state.params);
      Var f = extract_features(tape, m, tape.constant(x));
      Var z = embed(tape, m, f);
      Var zh = l2_normalize(tape, z);

      // Pseudo-domains: cluster the batch features; each cluster's own
      // statistics are swapped for the uniform mixture of cluster statistics,
      // mirroring the multi-source restyling with clusters instead of domains.
      const Tensor& fv = tape.value(f);
      const auto assign =
          kmeans(fv, std::min(cfg.sf_clusters, batch_size),
                 derive_seed(cfg.seed, "sf-kmeans", state.global_step));
      const std::size_t k = *std::max_element(assign.begin(), assign.end()) + 1;
      std::vector<std::vector<std::size_t>> clusters(k);
      for (std::size_t i = 0; i < assign.size(); ++i) clusters[assign[i]].push_back(i);
      std::vector<ChannelStats> cluster_stats;
      std::vector<std::vector<std::size_t>> nonempty;
      for (std::size_t c = 0; c < k; ++c) {
        if (clusters[c].empty()) continue;
        cluster_stats.push_back(detail::stats_of_rows(fv, clusters[c]));
        nonempty.push_back(clusters[c]);
      }
      const std::vector<double> uniform(cluster_stats.size(),
                                        1.0 / static_cast<double>(cluster_stats.size()));
      Var f_tilde = detail::per_domain_restyle(tape, f, nonempty, cluster_stats, uniform,
                                               cfg.stats_eps, false);
      Var z_tilde = intermediate_embed(tape, m, f_tilde);
      Var posteriors_int = classify(tape, m, z_tilde);

      StepRecord r;
      r.stage = "sf";
      r.epoch = epoch;

      Var objective = tape.constant(0.0);
      if (cfg.sf_consistency_weight > 0.0) {
        const PmrLoss pmr = pmr_loss(tape, zh, z_tilde, cfg.loss,
                                     derive_seed(cfg.seed, "sf-pairs", state.global_step));
        objective = add(objective, mul(pmr.total, cfg.sf_consistency_weight *
                                                      state.controller.lambda_pmr));
        r.loss_pmr_point = tape.value(pmr.point).item();
        r.loss_rel = tape.value(pmr.rel).item();
      }

      Var pseudo_w{}, pseudo_b{};
      std::vector<int> pseudo_labels;
      if (cfg.sf_use_pseudo_labels) {
        pseudo_w = tape.leaf(pseudo_head.w);
        pseudo_b = tape.leaf(pseudo_head.b);
        Var pseudo_post = softmax_lastaxis(add(matmul(zh, pseudo_w), pseudo_b));
        pseudo_labels.assign(assign.begin(), assign.end());
        Var pl = id_loss(tape, pseudo_post, pseudo_labels);
        objective = add(objective, mul(pl, cfg.sf_pseudo_label_weight));
        r.loss_id = tape.value(pl).item();
      }

      tape.backward(objective);
      std::vector<Tensor> grads;
      grads.reserve(m.flat.size());
      for (const Var v : m.flat) grads.push_back(tape.grad(v));
      auto ptrs = detail::param_ptrs(state.params);
      optimizer_step(ptrs, grads, state.adam, cfg.lr_sf, cfg.adam);
      if (cfg.sf_use_pseudo_labels) {
        std::vector<Tensor*> hptrs = {&pseudo_head.w, &pseudo_head.b};
        const std::vector<Tensor> hgrads = {tape.grad(pseudo_w), tape.grad(pseudo_b)};
        optimizer_step(hptrs, hgrads, pseudo_adam, cfg.lr_sf, cfg.adam);
      }
      detail::check_params_finite(state.params, state.global_step);

      const double loss_val = tape.value(objective).item();
      detail::check_finite(loss_val, state.global_step);
      epoch_loss += loss_val;

      r.loss_total = loss_val;
      r.entropy = batch_entropy(tape.value(posteriors_int));
      r.grad_var = gradient_variance(grads);
      update_normalizers(state.controller, r.entropy, r.grad_var);
      update_lambda(state.controller, r.entropy, r.grad_var);
      return r;
      });  // guarded_step

      rec.step = state.global_step++;
      rec.lambda_pmr = state.controller.lambda_pmr;
      rec.e_max = state.controller.e_max;
      rec.v_max = state.controller.v_max;
      rec.alpha = state.controller.alpha;
      state.trace.push_back(std::move(rec));
    }
    state.epoch_stats.push_back(
        EpochStats{"sf", epoch, epoch_loss / static_cast<double>(batches), 0.0});
  }
  return state;
}

// ---------------------------------------------------------------------------
// Trace CSV: one row per step, fixed column order, full double precision.
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_trace_csv(const std::string& path, std::span<const StepRecord> trace,
                            std::size_t num_domains) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open trace csv for writing: " + path);
  out << "stage,epoch,step,loss_total,loss_id,loss_tri,loss_pmr_point,loss_rel,"
         "entropy,grad_var,lambda_pmr";
  for (std::size_t k = 1; k <= num_domains; ++k) out << ",alpha_" << k;
  out << ",e_max,v_max\n";
  for (const StepRecord& r : trace) {
    out << r.stage << ',' << r.epoch << ',' << r.step << ',' << format_double(r.loss_total)
        << ',' << format_double(r.loss_id) << ',' << format_double(r.loss_tri) << ','
        << format_double(r.loss_pmr_point) << ',' << format_double(r.loss_rel) << ','
        << format_double(r.entropy) << ',' << format_double(r.grad_var) << ','
        << format_double(r.lambda_pmr);
    for (std::size_t k = 0; k < num_domains; ++k) {
      out << ',' << format_double(k < r.alpha.size() ? r.alpha[k] : 0.0);
    }
    out << ',' << format_double(r.e_max) << ',' << format_double(r.v_max) << '\n';
  }
  if (!out) throw IoError("trace csv write failed: " + path);
}

inline std::vector<StepRecord> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace csv: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty trace csv: " + path);
  const std::size_t num_alpha = [&] {
    std::size_t count = 0, pos = 0;
    while ((pos = line.find(",alpha_", pos)) != std::string::npos) {
      ++count;
      pos += 7;
    }
    return count;
  }();
  std::vector<StepRecord> trace;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cells.size() != 13 + num_alpha) throw IoError("malformed trace row in " + path);
    StepRecord r;
    r.stage = cells[0];
    r.epoch = std::stoul(cells[1]);
    r.step = std::stoul(cells[2]);
    r.loss_total = std::stod(cells[3]);
    r.loss_id = std::stod(cells[4]);
    r.loss_tri = std::stod(cells[5]);
    r.loss_pmr_point = std::stod(cells[6]);
    r.loss_rel = std::stod(cells[7]);
    r.entropy = std::stod(cells[8]);
    r.grad_var = std::stod(cells[9]);
    r.lambda_pmr = std::stod(cells[10]);
    for (std::size_t k = 0; k < num_alpha; ++k) r.alpha.push_back(std::stod(cells[11 + k]));
    r.e_max = std::stod(cells[11 + num_alpha]);
    r.v_max = std::stod(cells[12 + num_alpha]);
    trace.push_back(std::move(r));
  }
  return trace;
}

}  // namespace aida
