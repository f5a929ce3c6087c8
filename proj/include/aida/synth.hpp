#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "aida/error.hpp"
#include "aida/rng.hpp"

namespace aida {

// Recipe for one synthetic source (or target) domain. Domain shift is a
// per-dimension affine transform of identity prototypes plus a per-camera
// additive offset, so channel-statistics mixing has a measurable effect and
// the same-camera exclusion rule in retrieval metrics stays meaningful.
struct DomainSpec {
  int domain_id = 0;
  std::size_t num_identities = 1;
  std::size_t samples_per_identity = 2;
  std::size_t num_cameras = 1;
  std::size_t feature_dim = 1;
  std::vector<double> style_scale;   // per-dimension, > 0
  std::vector<double> style_offset;  // per-dimension
  double camera_jitter = 0.0;        // offset magnitude, >= 0
  double noise_sigma = 0.0;          // >= 0
  std::uint64_t seed = 0;

  void validate() const {
    if (num_identities < 1 || samples_per_identity < 1 || num_cameras < 1 || feature_dim < 1) {
      throw ContractError("domain spec counts must be >= 1");
    }
    if (style_scale.size() != feature_dim || style_offset.size() != feature_dim) {
      throw ContractError("style_scale/style_offset must have feature_dim entries");
    }
    for (const double s : style_scale) {
      if (!(s > 0.0)) throw ContractError("style scales must be > 0");
    }
    if (camera_jitter < 0.0 || noise_sigma < 0.0) {
      throw ContractError("camera_jitter and noise_sigma must be >= 0");
    }
  }
};

struct Sample {
  std::vector<double> raw_vector;
  int identity_label = 0;
  int domain_id = 0;
  int camera_id = 0;
};

struct DomainDataset {
  DomainSpec spec;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }

  // Identity labels present, sorted ascending.
  std::vector<int> identity_labels() const {
    std::vector<int> labels;
    for (const Sample& s : samples) labels.push_back(s.identity_label);
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    return labels;
  }
};

// Deterministic given (spec, seed). Each identity gets a standard-normal
// prototype; each sample is style_scale * (prototype + noise) + style_offset
// + a per-camera offset of exact magnitude camera_jitter. Cameras are
// assigned round-robin so every identity spans cameras.
inline DomainDataset generate_domain(const DomainSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "domain-gen", static_cast<std::uint64_t>(spec.domain_id)));

  std::vector<std::vector<double>> prototypes(spec.num_identities);
  for (auto& p : prototypes) {
    p.resize(spec.feature_dim);
    for (double& v : p) v = rng.normal();
  }

  std::vector<std::vector<double>> camera_offsets(spec.num_cameras);
  for (auto& o : camera_offsets) {
    o.assign(spec.feature_dim, 0.0);
    if (spec.camera_jitter > 0.0) {
      double norm_sq = 0.0;
      for (double& v : o) {
        v = rng.normal();
        norm_sq += v * v;
      }
      const double scale = spec.camera_jitter / std::sqrt(norm_sq);
      for (double& v : o) v *= scale;
    }
  }

  DomainDataset ds;
  ds.spec = spec;
  ds.samples.reserve(spec.num_identities * spec.samples_per_identity);
  for (std::size_t id = 0; id < spec.num_identities; ++id) {
    for (std::size_t k = 0; k < spec.samples_per_identity; ++k) {
      Sample s;
      s.identity_label = static_cast<int>(id);
      s.domain_id = spec.domain_id;
      s.camera_id = static_cast<int>(k % spec.num_cameras);
      s.raw_vector.resize(spec.feature_dim);
      for (std::size_t d = 0; d < spec.feature_dim; ++d) {
        const double noisy = prototypes[id][d] + (spec.noise_sigma > 0.0
                                                      ? rng.normal(0.0, spec.noise_sigma)
                                                      : 0.0);
        s.raw_vector[d] = spec.style_scale[d] * noisy + spec.style_offset[d] +
                          camera_offsets[static_cast<std::size_t>(s.camera_id)][d];
      }
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

// Re-indexes identity labels so label ranges of distinct domains are
// disjoint: domain k's labels become [sum of earlier C_j, +C_k) in the order
// the original labels sort. Within-domain identity structure is unchanged,
// and any input labeling (dense, offset, or sparse) is accepted.
inline std::vector<DomainDataset> make_disjoint(std::vector<DomainDataset> domains) {
  if (domains.empty()) throw ContractError("make_disjoint needs at least one domain");
  int offset = 0;
  for (DomainDataset& d : domains) {
    std::map<int, int> remap;
    for (const int label : d.identity_labels()) {
      remap[label] = offset + static_cast<int>(remap.size());
    }
    for (Sample& s : d.samples) s.identity_label = remap.at(s.identity_label);
    offset += static_cast<int>(remap.size());
  }
  return domains;
}

// Total distinct identities across datasets (labels assumed disjoint).
inline std::size_t total_identities(std::span<const DomainDataset> domains) {
  std::size_t n = 0;
  for (const DomainDataset& d : domains) n += d.identity_labels().size();
  return n;
}

// Identity-balanced PK batch: P distinct identities, K_inst instances each,
// so every anchor has positives and negatives. With multiple datasets the P
// identities are spread across domains as evenly as capacity allows, which
// guarantees every domain appears in the batch whenever P >= #domains.
// Deterministic given seed.
inline std::vector<Sample> pk_sample(std::span<const DomainDataset> domains, std::size_t p,
                                     std::size_t k_inst, std::uint64_t seed) {
  if (p < 2 || k_inst < 2) throw ContractError("pk_sample requires P >= 2 and K_inst >= 2");
  Rng rng(derive_seed(seed, "pk-sample"));

  // Per-domain identity pools (restricted to identities with enough instances).
  struct Pool {
    std::size_t domain;
    std::vector<int> ids;
  };
  std::vector<Pool> pools;
  std::size_t capacity = 0;
  for (std::size_t d = 0; d < domains.size(); ++d) {
    Pool pool{d, {}};
    for (const int id : domains[d].identity_labels()) {
      std::size_t count = 0;
      for (const Sample& s : domains[d].samples) count += (s.identity_label == id);
      if (count >= k_inst) pool.ids.push_back(id);
    }
    capacity += pool.ids.size();
    pools.push_back(std::move(pool));
  }
  if (capacity < p) {
    throw SamplingError("pk_sample: need " + std::to_string(p) + " identities with >= " +
                        std::to_string(k_inst) + " instances, only " + std::to_string(capacity) +
                        " available");
  }

  // Quotas: even split, remainder assigned in shuffled domain order, then
  // overflow redistributed to domains with spare identities.
  std::vector<std::size_t> quota(pools.size(), 0);
  std::vector<std::size_t> order(pools.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::size_t remaining = p;
  const std::size_t base = p / pools.size();
  for (std::size_t i : order) {
    quota[i] = std::min(base, pools[i].ids.size());
    remaining -= quota[i];
  }
  for (std::size_t pass = 0; remaining > 0 && pass < p; ++pass) {
    for (std::size_t i : order) {
      if (remaining == 0) break;
      if (quota[i] < pools[i].ids.size()) {
        ++quota[i];
        --remaining;
      }
    }
  }

  std::vector<Sample> batch;
  batch.reserve(p * k_inst);
  for (std::size_t i = 0; i < pools.size(); ++i) {
    Pool& pool = pools[i];
    // Partial Fisher-Yates: pick quota[i] identities without replacement.
    for (std::size_t pick = 0; pick < quota[i]; ++pick) {
      const std::size_t j = pick + static_cast<std::size_t>(rng.below(pool.ids.size() - pick));
      std::swap(pool.ids[pick], pool.ids[j]);
      const int id = pool.ids[pick];

      std::vector<std::size_t> instance_idx;
      const DomainDataset& ds = domains[pool.domain];
      for (std::size_t s = 0; s < ds.samples.size(); ++s) {
        if (ds.samples[s].identity_label == id) instance_idx.push_back(s);
      }
      for (std::size_t pick2 = 0; pick2 < k_inst; ++pick2) {
        const std::size_t j2 =
            pick2 + static_cast<std::size_t>(rng.below(instance_idx.size() - pick2));
        std::swap(instance_idx[pick2], instance_idx[j2]);
        batch.push_back(ds.samples[instance_idx[pick2]]);
      }
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Versioned JSON dataset format.
// Header: {"format_version": 1, "spec": {...}}, then "samples" as arrays in
// field order [identity_label, camera_id, v0, v1, ... v_{feature_dim-1}].
// Floats round-trip at full precision.
// ---------------------------------------------------------------------------

inline constexpr int kDatasetFormatVersion = 1;

inline nlohmann::json spec_to_json(const DomainSpec& s) {
  return nlohmann::json{{"domain_id", s.domain_id},
                        {"num_identities", s.num_identities},
                        {"samples_per_identity", s.samples_per_identity},
                        {"num_cameras", s.num_cameras},
                        {"feature_dim", s.feature_dim},
                        {"style_scale", s.style_scale},
                        {"style_offset", s.style_offset},
                        {"camera_jitter", s.camera_jitter},
                        {"noise_sigma", s.noise_sigma},
                        {"seed", s.seed}};
}

inline DomainSpec spec_from_json(const nlohmann::json& j) {
  DomainSpec s;
  s.domain_id = j.at("domain_id").get<int>();
  s.num_identities = j.at("num_identities").get<std::size_t>();
  s.samples_per_identity = j.at("samples_per_identity").get<std::size_t>();
  s.num_cameras = j.at("num_cameras").get<std::size_t>();
  s.feature_dim = j.at("feature_dim").get<std::size_t>();
  s.style_scale = j.at("style_scale").get<std::vector<double>>();
  s.style_offset = j.at("style_offset").get<std::vector<double>>();
  s.camera_jitter = j.at("camera_jitter").get<double>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

inline nlohmann::json dataset_to_json(const DomainDataset& ds) {
  nlohmann::json samples = nlohmann::json::array();
  for (const Sample& s : ds.samples) {
    nlohmann::json row = nlohmann::json::array();
    row.push_back(s.identity_label);
    row.push_back(s.camera_id);
    for (const double v : s.raw_vector) row.push_back(v);
    samples.push_back(std::move(row));
  }
  return nlohmann::json{{"format_version", kDatasetFormatVersion},
                        {"spec", spec_to_json(ds.spec)},
                        {"samples", std::move(samples)}};
}

inline DomainDataset dataset_from_json(const nlohmann::json& j) {
  const int version = j.at("format_version").get<int>();
  if (version != kDatasetFormatVersion) {
    throw IoError("unsupported dataset format_version " + std::to_string(version));
  }
  DomainDataset ds;
  ds.spec = spec_from_json(j.at("spec"));
  for (const nlohmann::json& row : j.at("samples")) {
    if (row.size() != 2 + ds.spec.feature_dim) {
      throw IoError("dataset sample row has wrong length");
    }
    Sample s;
    s.identity_label = row[0].get<int>();
    s.camera_id = row[1].get<int>();
    s.domain_id = ds.spec.domain_id;
    s.raw_vector.reserve(ds.spec.feature_dim);
    for (std::size_t i = 2; i < row.size(); ++i) s.raw_vector.push_back(row[i].get<double>());
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline void save_dataset(const DomainDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << dataset_to_json(ds).dump(1) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

inline DomainDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset JSON in " + path + ": " + e.what());
  }
  return dataset_from_json(j);
}

}  // namespace aida
