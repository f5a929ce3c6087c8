#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "aida/dfc.hpp"
#include "aida/error.hpp"
#include "aida/losses.hpp"
#include "aida/synth.hpp"
#include "aida/trainer.hpp"

namespace aida {

inline constexpr int kConfigFormatVersion = 1;

namespace detail {

// Strict JSON object view: every key must be consumed, unknown or misspelled
// keys fail fast with the offending name.
class StrictObject {
 public:
  StrictObject(nlohmann::json j, std::string path) : j_(std::move(j)), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be a JSON object");
  }

  bool has(const std::string& key) {
    if (j_.contains(key)) {
      seen_.insert(key);
      return true;
    }
    return false;
  }

  template <typename T>
  T require(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError(path_ + " is missing required key '" + key + "'");
    seen_.insert(key);
    return get_as<T>(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!j_.contains(key)) return fallback;
    seen_.insert(key);
    return get_as<T>(key);
  }

  nlohmann::json raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  // Call after all reads; rejects any key that was never consumed.
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) {
        throw ConfigError("unknown key '" + key + "' in " + path_);
      }
    }
  }

 private:
  template <typename T>
  T get_as(const std::string& key) {
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + " has the wrong type: " + e.what());
    }
  }

  nlohmann::json j_;
  std::string path_;
  std::set<std::string> seen_;
};

// style_scale / style_offset accept a scalar (broadcast) or a full vector.
inline std::vector<double> per_dim(const nlohmann::json& v, std::size_t dim,
                                   const std::string& what) {
  if (v.is_number()) return std::vector<double>(dim, v.get<double>());
  const auto vec = v.get<std::vector<double>>();
  if (vec.size() != dim) {
    throw ConfigError(what + " must be a scalar or a vector of length feature_dim");
  }
  return vec;
}

inline DomainSpec parse_domain_spec(const nlohmann::json& j, const std::string& path,
                                    std::uint64_t fallback_seed, int fallback_id) {
  StrictObject o(j, path);
  DomainSpec s;
  s.domain_id = o.get<int>("domain_id", fallback_id);
  s.num_identities = o.require<std::size_t>("num_identities");
  s.samples_per_identity = o.require<std::size_t>("samples_per_identity");
  s.num_cameras = o.get<std::size_t>("num_cameras", 2);
  s.feature_dim = o.require<std::size_t>("feature_dim");
  s.style_scale = o.has("style_scale") ? per_dim(o.raw("style_scale"), s.feature_dim, path + ".style_scale")
                                       : std::vector<double>(s.feature_dim, 1.0);
  s.style_offset = o.has("style_offset")
                       ? per_dim(o.raw("style_offset"), s.feature_dim, path + ".style_offset")
                       : std::vector<double>(s.feature_dim, 0.0);
  s.camera_jitter = o.get<double>("camera_jitter", 0.0);
  s.noise_sigma = o.get<double>("noise_sigma", 0.0);
  s.seed = o.get<std::uint64_t>("seed", fallback_seed);
  o.finish();
  s.validate();
  return s;
}

}  // namespace detail

struct GenConfig {
  std::vector<DomainSpec> sources;
  DomainSpec target;
  bool has_target = false;
};

struct AdaptConfig {
  std::string target_path;
};

struct AblateConfig {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
};

// Parsed top-level config file. Sections are optional; each command requires
// the ones it uses.
struct RunConfig {
  std::uint64_t seed = 0;
  bool has_gen = false;
  GenConfig gen;
  bool has_train = false;
  std::vector<std::string> train_sources;
  TrainConfig train;
  bool has_adapt = false;
  AdaptConfig adapt;
  AblateConfig ablate;

  // True when the config references any source dataset (spec or file path);
  // the source-free guard in cmd_adapt keys off this.
  bool references_sources() const {
    return (has_gen && !gen.sources.empty()) || !train_sources.empty();
  }
};

inline RunConfig parse_config(const nlohmann::json& j) {
  detail::StrictObject top(j, "config");
  const int version = top.require<int>("format_version");
  if (version != kConfigFormatVersion) {
    throw ConfigError("unsupported config format_version " + std::to_string(version));
  }
  RunConfig cfg;
  cfg.seed = top.get<std::uint64_t>("seed", 0);

  if (top.has("gen")) {
    cfg.has_gen = true;
    detail::StrictObject gen(top.raw("gen"), "gen");
    if (gen.has("sources")) {
      const nlohmann::json sources = gen.raw("sources");
      if (!sources.is_array()) throw ConfigError("gen.sources must be an array");
      for (std::size_t k = 0; k < sources.size(); ++k) {
        cfg.gen.sources.push_back(detail::parse_domain_spec(
            sources[k], "gen.sources[" + std::to_string(k) + "]",
            derive_seed(cfg.seed, "domain", k), static_cast<int>(k)));
      }
    }
    if (gen.has("target")) {
      cfg.gen.has_target = true;
      cfg.gen.target = detail::parse_domain_spec(gen.raw("target"), "gen.target",
                                                 derive_seed(cfg.seed, "target"),
                                                 static_cast<int>(cfg.gen.sources.size()));
    }
    gen.finish();
  }

  if (top.has("train")) {
    cfg.has_train = true;
    detail::StrictObject tr(top.raw("train"), "train");
    cfg.train_sources = tr.get<std::vector<std::string>>("sources", {});
    TrainConfig& t = cfg.train;
    t.seed = cfg.seed;
    t.epochs_sup = tr.get<std::size_t>("epochs_sup", t.epochs_sup);
    t.epochs_aida = tr.get<std::size_t>("epochs_aida", t.epochs_aida);
    t.epochs_sf = tr.get<std::size_t>("epochs_sf", t.epochs_sf);
    t.batch_p = tr.get<std::size_t>("batch_p", t.batch_p);
    t.batch_k = tr.get<std::size_t>("batch_k", t.batch_k);
    t.batches_per_epoch = tr.get<std::size_t>("batches_per_epoch", 0);
    t.lr_sup = tr.get<double>("lr_sup", t.lr_sup);
    t.lr_aida = tr.get<double>("lr_aida", t.lr_aida);
    t.lr_sf = tr.get<double>("lr_sf", t.lr_sf);
    t.adam.beta1 = tr.get<double>("adam_beta1", t.adam.beta1);
    t.adam.beta2 = tr.get<double>("adam_beta2", t.adam.beta2);
    t.adam.eps = tr.get<double>("adam_eps", t.adam.eps);
    t.loss.margin = tr.get<double>("margin", t.loss.margin);
    t.loss.lambda_tri = tr.get<double>("lambda_tri", t.loss.lambda_tri);
    t.loss.lambda_rel = tr.get<double>("lambda_rel", t.loss.lambda_rel);
    const std::string triplet_mode = tr.get<std::string>("triplet_mode", "batch_hard");
    if (triplet_mode == "batch_hard") {
      t.loss.triplet_mode = TripletMode::kBatchHard;
    } else if (triplet_mode == "random") {
      t.loss.triplet_mode = TripletMode::kRandom;
    } else {
      throw ConfigError("train.triplet_mode must be batch_hard|random, got '" + triplet_mode +
                        "'");
    }
    const std::string pair_policy = tr.get<std::string>("pair_policy", "all");
    if (pair_policy == "all") {
      t.loss.pair_policy = PairPolicy::kAllPairs;
    } else if (pair_policy == "sampled") {
      t.loss.pair_policy = PairPolicy::kSampledPairs;
    } else {
      throw ConfigError("train.pair_policy must be all|sampled, got '" + pair_policy + "'");
    }
    t.loss.pair_sample_count = tr.get<std::size_t>("pair_sample_count", t.loss.pair_sample_count);
    t.controller.eta_alpha = tr.get<double>("eta_alpha", t.controller.eta_alpha);
    t.controller.eta_lambda = tr.get<double>("eta_lambda", t.controller.eta_lambda);
    t.controller.lambda_max = tr.get<double>("lambda_max", t.controller.lambda_max);
    t.controller.lambda_init = tr.get<double>("lambda_init", t.controller.lambda_init);
    t.controller.decay = tr.get<double>("normalizer_decay", t.controller.decay);
    t.controller.mode =
        controller_mode_from_string(tr.get<std::string>("controller_mode", "per_domain"));
    t.hidden_dims = tr.get<std::vector<std::size_t>>("hidden_dims", t.hidden_dims);
    t.embed_dim = tr.get<std::size_t>("embed_dim", t.embed_dim);
    t.classify_on_raw = tr.get<bool>("classify_on_raw", false);
    t.use_msidg = tr.get<bool>("use_msidg", true);
    t.use_pmr = tr.get<bool>("use_pmr", true);
    t.use_dfc = tr.get<bool>("use_dfc", true);
    t.sup_on_intermediate = tr.get<bool>("sup_on_intermediate", false);
    t.exclude_own_domain = tr.get<bool>("exclude_own_domain", false);
    t.stats_eps = tr.get<double>("stats_eps", t.stats_eps);
    t.sf_clusters = tr.get<std::size_t>("sf_clusters", t.sf_clusters);
    t.sf_use_pseudo_labels = tr.get<bool>("sf_use_pseudo_labels", false);
    t.sf_pseudo_label_weight = tr.get<double>("sf_pseudo_label_weight", t.sf_pseudo_label_weight);
    t.sf_consistency_weight = tr.get<double>("sf_consistency_weight", t.sf_consistency_weight);
    tr.finish();
    t.validate();
  }

  if (top.has("adapt")) {
    cfg.has_adapt = true;
    detail::StrictObject ad(top.raw("adapt"), "adapt");
    cfg.adapt.target_path = ad.get<std::string>("target", "");
    ad.finish();
  }

  if (top.has("ablate")) {
    detail::StrictObject ab(top.raw("ablate"), "ablate");
    cfg.ablate.seeds = ab.get<std::vector<std::uint64_t>>("seeds", cfg.ablate.seeds);
    ab.finish();
    if (cfg.ablate.seeds.empty()) throw ConfigError("ablate.seeds must not be empty");
  }

  top.finish();
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in " + path + ": " + e.what());
  }
  return parse_config(j);
}

}  // namespace aida
