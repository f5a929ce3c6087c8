#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "aida/error.hpp"
#include "aida/rng.hpp"
#include "aida/tensor.hpp"

namespace aida {

struct RetrievalEntry {
  std::vector<double> embedding;
  int identity = 0;
  int camera = 0;
};

struct RetrievalSplit {
  std::vector<RetrievalEntry> query;
  std::vector<RetrievalEntry> gallery;
};

// Euclidean distances between normalized embeddings; exact-symmetric when
// query == gallery because the inner loop order is fixed.
inline Tensor distance_matrix(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw ContractError("distance_matrix expects [N,d] x [M,d]");
  }
  Tensor out = Tensor::zeros({a.rows(), b.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        const double d = a(i, k) - b(j, k);
        s += d * d;
      }
      out(i, j) = std::sqrt(s);
    }
  }
  return out;
}

namespace detail {

inline double entry_distance(const RetrievalEntry& a, const RetrievalEntry& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.embedding.size(); ++k) {
    const double d = a.embedding[k] - b.embedding[k];
    s += d * d;
  }
  return std::sqrt(s);
}

// Gallery candidates for one query after the standard exclusion rule
// (same identity AND same camera removed), ranked by (distance, index).
inline std::vector<std::size_t> ranked_candidates(const RetrievalSplit& split, std::size_t q) {
  const RetrievalEntry& query = split.query[q];
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t g = 0; g < split.gallery.size(); ++g) {
    const RetrievalEntry& cand = split.gallery[g];
    if (cand.identity == query.identity && cand.camera == query.camera) continue;
    order.emplace_back(entry_distance(query, cand), g);
  }
  std::sort(order.begin(), order.end());  // ties fall back to gallery index
  std::vector<std::size_t> ranked;
  ranked.reserve(order.size());
  for (const auto& [d, g] : order) ranked.push_back(g);
  return ranked;
}

}  // namespace detail

struct CmcResult {
  std::vector<double> curve;   // curve[k-1] = fraction of valid queries with rank <= k
  std::size_t valid_queries = 0;
  std::size_t skipped_queries = 0;  // queries with no cross-camera true match

  double at(std::size_t k) const {
    if (curve.empty() || k == 0) return 0.0;
    return curve[std::min(k, curve.size()) - 1];
  }
};

inline CmcResult cmc(const RetrievalSplit& split) {
  CmcResult res;
  std::vector<std::size_t> first_correct;  // 1-based rank per valid query
  std::size_t max_len = 0;
  for (std::size_t q = 0; q < split.query.size(); ++q) {
    const std::vector<std::size_t> ranked = detail::ranked_candidates(split, q);
    std::size_t rank = 0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      if (split.gallery[ranked[r]].identity == split.query[q].identity) {
        rank = r + 1;
        break;
      }
    }
    if (rank == 0) {
      ++res.skipped_queries;  // no valid match anywhere in the gallery
      continue;
    }
    first_correct.push_back(rank);
    max_len = std::max(max_len, ranked.size());
  }
  res.valid_queries = first_correct.size();
  if (res.valid_queries == 0) return res;
  res.curve.assign(std::max<std::size_t>(max_len, 1), 0.0);
  for (const std::size_t r : first_correct) {
    for (std::size_t k = r; k <= res.curve.size(); ++k) res.curve[k - 1] += 1.0;
  }
  for (double& v : res.curve) v /= static_cast<double>(res.valid_queries);
  return res;
}

// Mean over valid queries of average precision; precision is accumulated at
// each correct match's rank, in rank order.
inline double mean_ap(const RetrievalSplit& split) {
  double total = 0.0;
  std::size_t valid = 0;
  for (std::size_t q = 0; q < split.query.size(); ++q) {
    const std::vector<std::size_t> ranked = detail::ranked_candidates(split, q);
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      if (split.gallery[ranked[r]].identity == split.query[q].identity) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(r + 1);
      }
    }
    if (hits == 0) continue;
    total += ap / static_cast<double>(hits);
    ++valid;
  }
  return valid == 0 ? 0.0 : total / static_cast<double>(valid);
}

// Lloyd's iterations from seeded farthest-point initialization. Deterministic
// given seed: all ties resolve toward the lower index. Empty clusters are
// re-seeded to the point farthest from its centroid, up to max_reseeds.
inline std::vector<std::size_t> kmeans(const Tensor& points, std::size_t k, std::uint64_t seed,
                                       std::size_t max_iters = 100, std::size_t max_reseeds = 3) {
  if (points.rank() != 2 || points.rows() == 0) throw ContractError("kmeans expects [N,d] points");
  const std::size_t n = points.rows(), dim = points.cols();
  if (k == 0 || k > n) throw ContractError("kmeans requires 1 <= k <= N");

  const auto sqdist_to = [&](std::size_t i, const std::vector<double>& c) {
    double s = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = points(i, d) - c[d];
      s += diff * diff;
    }
    return s;
  };

  // Farthest-point init.
  Rng rng(derive_seed(seed, "kmeans"));
  std::vector<std::vector<double>> centroids;
  {
    const std::size_t first = static_cast<std::size_t>(rng.below(n));
    centroids.push_back(points.row(first));
    while (centroids.size() < k) {
      std::size_t best = 0;
      double best_dist = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        double nearest = sqdist_to(i, centroids[0]);
        for (std::size_t c = 1; c < centroids.size(); ++c) {
          nearest = std::min(nearest, sqdist_to(i, centroids[c]));
        }
        if (nearest > best_dist) {
          best_dist = nearest;
          best = i;
        }
      }
      centroids.push_back(points.row(best));
    }
  }

  std::vector<std::size_t> assign(n, 0);
  std::size_t reseeds = 0;
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = sqdist_to(i, centroids[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double d = sqdist_to(i, centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;

    std::vector<std::size_t> counts(k, 0);
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t d = 0; d < dim; ++d) sums[assign[i]][d] += points(i, d);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        if (++reseeds > max_reseeds) {
          throw TrainingError("kmeans: empty cluster persisted after " +
                              std::to_string(max_reseeds) + " re-seeds");
        }
        // Move the centroid onto the point farthest from its own centroid.
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = sqdist_to(i, centroids[assign[i]]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centroids[c] = points.row(far);
        continue;
      }
      for (std::size_t d = 0; d < dim; ++d) {
        centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
      }
    }
  }
  return assign;
}

// Normalized mutual information with the arithmetic-mean convention,
// 0 log 0 := 0. Terms are sorted before summation so the result is exactly
// symmetric in its arguments.
inline double nmi(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size() || a.empty()) throw ContractError("nmi: label spans must match");
  const double n = static_cast<double>(a.size());
  std::map<int, std::size_t> ca, cb;
  std::map<std::pair<int, int>, std::size_t> joint;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++ca[a[i]];
    ++cb[b[i]];
    ++joint[{a[i], b[i]}];
  }
  const auto entropy = [n](const std::map<int, std::size_t>& counts) {
    std::vector<double> terms;
    for (const auto& [label, c] : counts) {
      const double p = static_cast<double>(c) / n;
      if (p > 0.0) terms.push_back(-p * std::log(p));
    }
    std::sort(terms.begin(), terms.end());
    return std::accumulate(terms.begin(), terms.end(), 0.0);
  };
  std::vector<double> mi_terms;
  for (const auto& [pair, c] : joint) {
    const double pij = static_cast<double>(c) / n;
    const double pi = static_cast<double>(ca[pair.first]) / n;
    const double pj = static_cast<double>(cb[pair.second]) / n;
    // Split logs so identical partitions reproduce the entropy terms exactly;
    // the inner grouping keeps the term symmetric under argument swap.
    if (pij > 0.0) mi_terms.push_back(pij * (std::log(pij) - (std::log(pi) + std::log(pj))));
  }
  std::sort(mi_terms.begin(), mi_terms.end());
  const double mi = std::accumulate(mi_terms.begin(), mi_terms.end(), 0.0);
  const double ha = entropy(ca), hb = entropy(cb);
  if (ha == 0.0 && hb == 0.0) return 1.0;  // two constant partitions agree trivially
  const double denom = (ha + hb) / 2.0;
  return denom == 0.0 ? 0.0 : mi / denom;
}

inline double nmi(std::span<const std::size_t> a, std::span<const int> b) {
  std::vector<int> ai(a.begin(), a.end());
  return nmi(std::span<const int>(ai), b);
}

// Mean of (b-a)/max(a,b); a = mean intra-cluster distance, b = smallest mean
// distance to another cluster. Singletons contribute 0; a single cluster is
// defined as 0.
inline double silhouette(const Tensor& points, std::span<const std::size_t> assign) {
  if (points.rank() != 2 || points.rows() != assign.size() || assign.empty()) {
    throw ContractError("silhouette: one assignment per point required");
  }
  const std::size_t n = points.rows();
  std::size_t k = 0;
  for (const std::size_t c : assign) k = std::max(k, c + 1);
  std::vector<std::size_t> counts(k, 0);
  for (const std::size_t c : assign) ++counts[c];
  std::size_t nonempty = 0;
  for (const std::size_t c : counts) nonempty += (c > 0);
  if (nonempty < 2) return 0.0;

  const Tensor dist = distance_matrix(points, points);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[assign[i]] <= 1) continue;  // singleton contributes 0
    std::vector<double> mean_to(k, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      mean_to[assign[j]] += dist(i, j);
    }
    double a_val = 0.0, b_val = 0.0;
    bool b_set = false;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      if (c == assign[i]) {
        a_val = mean_to[c] / static_cast<double>(counts[c] - 1);
      } else {
        const double m = mean_to[c] / static_cast<double>(counts[c]);
        if (!b_set || m < b_val) {
          b_val = m;
          b_set = true;
        }
      }
    }
    total += (b_val - a_val) / std::max(a_val, b_val);
  }
  return total / static_cast<double>(n);
}

struct MetricsReport {
  double rank1 = 0.0, rank5 = 0.0, rank10 = 0.0;
  double map = 0.0;
  double nmi = 0.0;
  double silhouette = 0.0;
  std::size_t num_queries = 0;
  std::size_t skipped_queries = 0;

  void validate() const {
    const auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in01(rank1) || !in01(rank5) || !in01(rank10) || !in01(map) || !in01(nmi) ||
        silhouette < -1.0 || silhouette > 1.0 || rank1 > rank5 || rank5 > rank10) {
      throw ContractError("metrics report out of range");
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"rank1", rank1},
                          {"rank5", rank5},
                          {"rank10", rank10},
                          {"map", map},
                          {"nmi", nmi},
                          {"silhouette", silhouette},
                          {"num_queries", num_queries},
                          {"skipped_queries", skipped_queries}};
  }

  static MetricsReport from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.rank1 = j.at("rank1").get<double>();
    r.rank5 = j.at("rank5").get<double>();
    r.rank10 = j.at("rank10").get<double>();
    r.map = j.at("map").get<double>();
    r.nmi = j.at("nmi").get<double>();
    r.silhouette = j.at("silhouette").get<double>();
    r.num_queries = j.at("num_queries").get<std::size_t>();
    r.skipped_queries = j.at("skipped_queries").get<std::size_t>();
    return r;
  }
};

}  // namespace aida
