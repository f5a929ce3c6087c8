#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aida/metrics.hpp"
#include "aida/model.hpp"
#include "aida/synth.hpp"
#include "aida/trainer.hpp"

namespace aida {

// Query/gallery split rule: per identity, the first sample seen under each
// camera goes to the query set, the rest to the gallery.
inline RetrievalSplit make_retrieval_split(const DomainDataset& ds, const Tensor& embeddings) {
  if (embeddings.rank() != 2 || embeddings.rows() != ds.size()) {
    throw ContractError("make_retrieval_split: one embedding per sample required");
  }
  RetrievalSplit split;
  std::set<std::pair<int, int>> seen;  // (identity, camera)
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& s = ds.samples[i];
    RetrievalEntry e{embeddings.row(i), s.identity_label, s.camera_id};
    if (seen.insert({s.identity_label, s.camera_id}).second) {
      split.query.push_back(std::move(e));
    } else {
      split.gallery.push_back(std::move(e));
    }
  }
  return split;
}

// Retrieval + clustering metrics of a model on one dataset. k for the
// clustering indicators equals the dataset's true identity count, so NMI and
// silhouette measure embedding structure rather than cluster-count estimation.
inline MetricsReport evaluate_dataset(const ModelParams& params, const DomainDataset& ds,
                                      std::uint64_t seed) {
  const Tensor embeddings = embed_batch(params, samples_to_matrix(ds.samples));
  const RetrievalSplit split = make_retrieval_split(ds, embeddings);
  const CmcResult curve = cmc(split);

  MetricsReport report;
  report.rank1 = curve.at(1);
  report.rank5 = curve.at(5);
  report.rank10 = curve.at(10);
  report.map = mean_ap(split);
  report.num_queries = curve.valid_queries;
  report.skipped_queries = curve.skipped_queries;

  const std::vector<int> truth = [&] {
    std::vector<int> t;
    for (const Sample& s : ds.samples) t.push_back(s.identity_label);
    return t;
  }();
  const std::size_t k = ds.identity_labels().size();
  const auto assign = kmeans(embeddings, k, derive_seed(seed, "eval-kmeans"));
  report.nmi = nmi(std::span<const std::size_t>(assign), std::span<const int>(truth));
  report.silhouette = silhouette(embeddings, assign);
  report.validate();
  return report;
}

// Full two-stage pipeline on the given sources.
inline TrainState train_pipeline(const TrainConfig& cfg, std::span<const DomainDataset> sources) {
  TrainState state = stage1_supervised(cfg, sources);
  return stage2_aida(std::move(state), cfg, sources);
}

struct LeaveOneOutReport {
  int held_out_domain = 0;
  MetricsReport metrics;
};

// Hold out each domain in turn, train the full pipeline on the rest, and
// evaluate retrieval on the held-out domain.
inline std::vector<LeaveOneOutReport> leave_one_out(std::span<const DomainDataset> domains,
                                                    const TrainConfig& cfg) {
  if (domains.size() < 2) {
    throw ContractError("leave_one_out needs at least two domains");
  }
  std::vector<LeaveOneOutReport> reports;
  for (std::size_t held = 0; held < domains.size(); ++held) {
    std::vector<DomainDataset> train_set;
    for (std::size_t k = 0; k < domains.size(); ++k) {
      if (k != held) train_set.push_back(domains[k]);
    }
    train_set = make_disjoint(std::move(train_set));
    const TrainState state = train_pipeline(cfg, train_set);
    LeaveOneOutReport rep;
    rep.held_out_domain = domains[held].spec.domain_id;
    rep.metrics = evaluate_dataset(state.params, domains[held], cfg.seed);
    reports.push_back(std::move(rep));
  }
  return reports;
}

// Arithmetic mean across per-target rows, the "Average" row of a report table.
inline MetricsReport average_report(std::span<const LeaveOneOutReport> reports) {
  MetricsReport avg;
  if (reports.empty()) return avg;
  for (const LeaveOneOutReport& r : reports) {
    avg.rank1 += r.metrics.rank1;
    avg.rank5 += r.metrics.rank5;
    avg.rank10 += r.metrics.rank10;
    avg.map += r.metrics.map;
    avg.nmi += r.metrics.nmi;
    avg.silhouette += r.metrics.silhouette;
    avg.num_queries += r.metrics.num_queries;
    avg.skipped_queries += r.metrics.skipped_queries;
  }
  const double n = static_cast<double>(reports.size());
  avg.rank1 /= n;
  avg.rank5 /= n;
  avg.rank10 /= n;
  avg.map /= n;
  avg.nmi /= n;
  avg.silhouette /= n;
  return avg;
}

}  // namespace aida
