#pragma once

// Test-support oracles: independent, deliberately naive implementations used
// to check the production paths. They ship with the library so ports to other
// languages can replay the exact same cases from the JSON fixtures.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aida/error.hpp"
#include "aida/metrics.hpp"

namespace aida::oracle {

// Naive per-query ranking with the same exclusion (same identity AND same
// camera) and tie rules (gallery index) as the production metrics.
inline std::vector<std::vector<std::size_t>> brute_force_rank(const RetrievalSplit& split) {
  std::vector<std::vector<std::size_t>> out;
  for (const RetrievalEntry& q : split.query) {
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t g = 0; g < split.gallery.size(); ++g) {
      const RetrievalEntry& cand = split.gallery[g];
      if (cand.identity == q.identity && cand.camera == q.camera) continue;
      double s = 0.0;
      for (std::size_t k = 0; k < q.embedding.size(); ++k) {
        const double d = q.embedding[k] - cand.embedding[k];
        s += d * d;
      }
      order.emplace_back(std::sqrt(s), g);
    }
    std::sort(order.begin(), order.end());
    std::vector<std::size_t> ranked;
    ranked.reserve(order.size());
    for (const auto& [d, g] : order) ranked.push_back(g);
    out.push_back(std::move(ranked));
  }
  return out;
}

// CMC curve recomputed from brute-force ranked lists.
inline CmcResult cmc_from_ranking(const RetrievalSplit& split,
                                  const std::vector<std::vector<std::size_t>>& ranking) {
  CmcResult res;
  std::vector<std::size_t> first_correct;
  std::size_t max_len = 0;
  for (std::size_t q = 0; q < ranking.size(); ++q) {
    std::size_t rank = 0;
    for (std::size_t r = 0; r < ranking[q].size(); ++r) {
      if (split.gallery[ranking[q][r]].identity == split.query[q].identity) {
        rank = r + 1;
        break;
      }
    }
    if (rank == 0) {
      ++res.skipped_queries;
      continue;
    }
    first_correct.push_back(rank);
    max_len = std::max(max_len, ranking[q].size());
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

// Mean AP recomputed from brute-force ranked lists, accumulating precision
// at each correct rank in rank order (same arithmetic as production).
inline double map_from_ranking(const RetrievalSplit& split,
                               const std::vector<std::vector<std::size_t>>& ranking) {
  double total = 0.0;
  std::size_t valid = 0;
  for (std::size_t q = 0; q < ranking.size(); ++q) {
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < ranking[q].size(); ++r) {
      if (split.gallery[ranking[q][r]].identity == split.query[q].identity) {
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

// Exhaustive search over the simplex grid with the given step; K <= 3.
inline std::vector<double> grid_project(std::span<const double> v, double step) {
  if (v.empty() || v.size() > 3) throw ContractError("grid_project supports K in {1,2,3}");
  if (!(step > 0.0) || step > 1.0) throw ContractError("grid_project needs step in (0,1]");
  const auto steps = static_cast<std::size_t>(std::llround(1.0 / step));
  const auto sq = [](double x) { return x * x; };

  std::vector<double> best(v.size(), 0.0);
  double best_dist = -1.0;
  const auto consider = [&](const std::vector<double>& w) {
    double d = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) d += sq(w[i] - v[i]);
    if (best_dist < 0.0 || d < best_dist) {
      best_dist = d;
      best = w;
    }
  };

  if (v.size() == 1) {
    consider({1.0});
  } else if (v.size() == 2) {
    for (std::size_t i = 0; i <= steps; ++i) {
      const double a = static_cast<double>(i) / static_cast<double>(steps);
      consider({a, 1.0 - a});
    }
  } else {
    for (std::size_t i = 0; i <= steps; ++i) {
      for (std::size_t j = 0; i + j <= steps; ++j) {
        const double a = static_cast<double>(i) / static_cast<double>(steps);
        const double b = static_cast<double>(j) / static_cast<double>(steps);
        consider({a, b, 1.0 - a - b});
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Method map: every numbered formula of the method, and each phase of its
// training procedure, mapped to the operation that owns it. Components the
// harness deliberately leaves out are listed with an "excluded" status so the
// map is complete. A test fails if any formula id lacks an owner.
// ---------------------------------------------------------------------------

struct MethodMapRow {
  std::string id;       // "eq1".."eq21", "alg1.*", or an excluded feature
  std::string owner;    // owning operation, empty when excluded
  std::string status;   // "implemented" | "excluded"
};

inline std::vector<MethodMapRow> equation_map() {
  return {
      {"eq1", "synth::generate_domain / make_disjoint", "implemented"},
      {"eq2", "model::extract_features + model::embed", "implemented"},
      {"eq3", "model::l2_normalize", "implemented"},
      {"eq4", "model::embed", "implemented"},
      {"eq5", "model::l2_normalize", "implemented"},
      {"eq6", "losses::id_loss (posteriors via model::classify)", "implemented"},
      {"eq7", "losses::batch_hard_triplet", "implemented"},
      {"eq8", "losses::supervised_loss", "implemented"},
      {"eq9", "msidg::MixWeights (mixture family)", "implemented"},
      {"eq10", "msidg::MixWeights::validate", "implemented"},
      {"eq11", "model::extract_features", "implemented"},
      {"eq12", "msidg::statistics_transfer", "implemented"},
      {"eq13", "msidg::multi_source_mix", "implemented"},
      {"eq14", "msidg::intermediate_embed", "implemented"},
      {"eq15", "losses::pmr_point_loss", "implemented"},
      {"eq16", "losses::relational_loss", "implemented"},
      {"eq17", "losses::pmr_loss", "implemented"},
      {"eq18", "dfc::batch_entropy", "implemented"},
      {"eq19", "dfc::gradient_variance", "implemented"},
      {"eq20", "dfc::update_alpha (simplex_project)", "implemented"},
      {"eq21", "dfc::update_lambda", "implemented"},
      {"alg1.init", "trainer::TrainState / ControllerState::init", "implemented"},
      {"alg1.stage1", "trainer::stage1_supervised", "implemented"},
      {"alg1.stage2", "trainer::stage2_aida", "implemented"},
      {"alg1.target_loop", "trainer::sf_refine", "implemented"},
      {"real_image_datasets", "", "excluded"},
      {"resnet50_imagenet_backbone", "", "excluded"},
      {"dsbn", "", "excluded"},
      {"gem_pooling", "", "excluded"},
      {"sharpness_aware_minimization", "", "excluded"},
      {"published_benchmark_numbers", "", "excluded"},
      {"flops_fps_measurements", "", "excluded"},
  };
}

// ---------------------------------------------------------------------------
// Oracle cases. Each fixture file holds cases with serialized inputs, the
// expected output, the oracle that regenerates it, and a tolerance. "origin"
// is "oracle" when the expected value must be recomputed by the named oracle
// before comparison, "stated" when it is a fixed closed-form value.
// ---------------------------------------------------------------------------

struct OracleCase {
  std::string name;
  std::string kind;       // dispatch key for the fixture runner
  std::string origin;     // "oracle" | "stated"
  double tolerance = 0.0; // > 0 for oracle-backed numeric cases
  nlohmann::json inputs;
  nlohmann::json expected;
};

inline std::vector<OracleCase> load_oracle_cases(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fixture file: " + path);
  nlohmann::json j;
  in >> j;
  if (j.at("schema_version").get<int>() != 1) {
    throw IoError("unsupported fixture schema_version in " + path);
  }
  std::vector<OracleCase> cases;
  for (const nlohmann::json& c : j.at("cases")) {
    OracleCase oc;
    oc.name = c.at("name").get<std::string>();
    oc.kind = c.at("kind").get<std::string>();
    oc.origin = c.at("origin").get<std::string>();
    oc.tolerance = c.at("tolerance").get<double>();
    oc.inputs = c.at("inputs");
    oc.expected = c.at("expected");
    if (oc.origin != "oracle" && oc.origin != "stated") {
      throw IoError("fixture case '" + oc.name + "' has unknown origin '" + oc.origin + "'");
    }
    if (oc.origin == "oracle" && !(oc.tolerance > 0.0)) {
      throw IoError("fixture case '" + oc.name + "' needs a positive tolerance");
    }
    cases.push_back(std::move(oc));
  }
  return cases;
}

}  // namespace aida::oracle
