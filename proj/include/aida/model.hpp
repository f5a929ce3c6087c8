#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "aida/autodiff.hpp"
#include "aida/error.hpp"
#include "aida/rng.hpp"
#include "aida/synth.hpp"
#include "aida/tensor.hpp"

namespace aida {

inline constexpr double kEpsNorm = 1e-12;

struct ModelConfig {
  std::size_t feature_dim = 32;            // raw input width
  std::vector<std::size_t> hidden_dims = {64, 64};  // backbone layers
  std::size_t embed_dim = 32;              // d
  std::size_t num_classes = 1;             // C_total (union label space)
  bool classify_on_raw = false;            // classifier input: raw z instead of normalized
};

struct AffineLayer {
  Tensor w;  // [in, out]
  Tensor b;  // [out]
};

// Backbone (affine layers with ReLU between them), embedding head (one affine
// layer to d), and a single shared classifier over the union label space.
struct ModelParams {
  ModelConfig config;
  std::vector<AffineLayer> backbone;
  AffineLayer head;
  AffineLayer classifier;

  // Visits every parameter tensor in a fixed, documented order; this order
  // defines checkpoint layout and optimizer state alignment.
  template <typename F>
  void for_each_param(F&& f) {
    for (std::size_t i = 0; i < backbone.size(); ++i) {
      f("backbone." + std::to_string(i) + ".w", backbone[i].w);
      f("backbone." + std::to_string(i) + ".b", backbone[i].b);
    }
    f("head.w", head.w);
    f("head.b", head.b);
    f("classifier.w", classifier.w);
    f("classifier.b", classifier.b);
  }

  template <typename F>
  void for_each_param(F&& f) const {
    const_cast<ModelParams*>(this)->for_each_param(
        [&](const std::string& name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }

  std::size_t num_tensors() const { return backbone.size() * 2 + 4; }
};

// He-style init: weights ~ Normal(0, 2/fan_in), biases zero.
inline ModelParams init_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.num_classes < 1 || cfg.embed_dim < 1 || cfg.feature_dim < 1) {
    throw ContractError("model config dimensions must be >= 1");
  }
  Rng rng(derive_seed(seed, "model-init"));
  const auto make_layer = [&](std::size_t in, std::size_t out) {
    AffineLayer layer{Tensor::zeros({in, out}), Tensor::zeros({out})};
    const double stddev = std::sqrt(2.0 / static_cast<double>(in));
    for (std::size_t i = 0; i < layer.w.size(); ++i) layer.w[i] = rng.normal(0.0, stddev);
    return layer;
  };
  ModelParams p;
  p.config = cfg;
  std::size_t in = cfg.feature_dim;
  for (const std::size_t h : cfg.hidden_dims) {
    p.backbone.push_back(make_layer(in, h));
    in = h;
  }
  p.head = make_layer(in, cfg.embed_dim);
  p.classifier = make_layer(cfg.embed_dim, cfg.num_classes);
  return p;
}

// Tape handles for every parameter, in for_each_param order.
struct ModelVars {
  std::vector<std::pair<Var, Var>> backbone;  // (w, b)
  Var head_w, head_b;
  Var cls_w, cls_b;
  std::vector<Var> flat;  // same order as for_each_param
};

inline ModelVars lift(Tape& tape, const ModelParams& params) {
  ModelVars v;
  for (const AffineLayer& layer : params.backbone) {
    Var w = tape.leaf(layer.w), b = tape.leaf(layer.b);
    v.backbone.emplace_back(w, b);
    v.flat.push_back(w);
    v.flat.push_back(b);
  }
  v.head_w = tape.leaf(params.head.w);
  v.head_b = tape.leaf(params.head.b);
  v.cls_w = tape.leaf(params.classifier.w);
  v.cls_b = tape.leaf(params.classifier.b);
  v.flat.insert(v.flat.end(), {v.head_w, v.head_b, v.cls_w, v.cls_b});
  return v;
}

// Raw input batch [B, feature_dim] -> feature map [B, C] (output of the last
// backbone layer; ReLU sits between layers, not after the last one).
inline Var extract_features(Tape& tape, const ModelVars& m, Var x) {
  Var h = x;
  for (std::size_t i = 0; i < m.backbone.size(); ++i) {
    h = add(matmul(h, m.backbone[i].first), m.backbone[i].second);
    if (i + 1 < m.backbone.size()) h = relu(h);
  }
  (void)tape;
  return h;
}

inline Var embed(Tape&, const ModelVars& m, Var f) {
  return add(matmul(f, m.head_w), m.head_b);
}

// Row-normalizes embeddings; throws on degenerate (near-zero) rows.
inline Var l2_normalize(Tape& tape, Var z, double eps_norm = kEpsNorm) {
  Var norms = l2norm_lastaxis(z, true);  // [B, 1]
  const Tensor& n = tape.value(norms);
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (!(n[i] > eps_norm)) {
      throw MathDomainError("degenerate embedding: row " + std::to_string(i) + " has norm " +
                            std::to_string(n[i]));
    }
  }
  return div(z, norms);
}

// Posteriors over the union label space; rows sum to 1.
inline Var classify(Tape&, const ModelVars& m, Var z_hat) {
  return softmax_lastaxis(add(matmul(z_hat, m.cls_w), m.cls_b));
}

// Value-only forward pass: raw vectors -> normalized embeddings [N, d].
inline Tensor embed_batch(const ModelParams& params, const Tensor& raw) {
  Tape tape;
  ModelVars m = lift(tape, params);
  Var x = tape.constant(raw);
  Var z = embed(tape, m, extract_features(tape, m, x));
  return tape.value(l2_normalize(tape, z));
}

inline Tensor samples_to_matrix(std::span<const Sample> samples) {
  if (samples.empty()) throw ContractError("empty sample batch");
  const std::size_t dim = samples[0].raw_vector.size();
  Tensor x = Tensor::zeros({samples.size(), dim});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].raw_vector.size() != dim) throw ContractError("ragged sample batch");
    for (std::size_t j = 0; j < dim; ++j) x(i, j) = samples[i].raw_vector[j];
  }
  return x;
}

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian):
//   8-byte magic "AIDACKPT", uint32 version, uint64 tensor count, then per
//   tensor: uint32 name length, name bytes, uint32 rank, uint64 dims[rank],
//   float64 data. Round-trips bit-exactly.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'A', 'I', 'D', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}
}  // namespace detail

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod(out, kCheckpointVersion);
  detail::write_pod(out, static_cast<std::uint64_t>(params.num_tensors()));
  params.for_each_param([&](const std::string& name, const Tensor& t) {
    detail::write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod(out, static_cast<std::uint32_t>(t.rank()));
    for (const std::size_t d : t.shape()) detail::write_pod(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  });
  if (!out) throw IoError("checkpoint write failed: " + path);
}

// Rebuilds the architecture from tensor names and shapes.
inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw IoError("bad checkpoint magic in " + path);
  }
  const auto version = detail::read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = detail::read_pod<std::uint64_t>(in);

  std::vector<std::pair<std::string, Tensor>> tensors;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_pod<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = detail::read_pod<std::uint32_t>(in);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(static_cast<std::size_t>(detail::read_pod<std::uint64_t>(in)));
    }
    Tensor t = Tensor::zeros(shape);
    in.read(reinterpret_cast<char*>(t.raw().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint: " + path);
    tensors.emplace_back(std::move(name), std::move(t));
  }

  ModelParams p;
  const auto find = [&](const std::string& name) -> Tensor& {
    for (auto& [n, t] : tensors) {
      if (n == name) return t;
    }
    throw IoError("checkpoint missing tensor '" + name + "' in " + path);
  };
  std::size_t layers = 0;
  for (const auto& [n, t] : tensors) {
    if (n.rfind("backbone.", 0) == 0 && n.size() > 2 && n.substr(n.size() - 2) == ".w") ++layers;
  }
  for (std::size_t i = 0; i < layers; ++i) {
    p.backbone.push_back(AffineLayer{find("backbone." + std::to_string(i) + ".w"),
                                     find("backbone." + std::to_string(i) + ".b")});
  }
  p.head = AffineLayer{find("head.w"), find("head.b")};
  p.classifier = AffineLayer{find("classifier.w"), find("classifier.b")};

  p.config.feature_dim = p.backbone.empty() ? p.head.w.rows() : p.backbone.front().w.rows();
  p.config.hidden_dims.clear();
  for (const AffineLayer& l : p.backbone) p.config.hidden_dims.push_back(l.w.cols());
  p.config.embed_dim = p.head.w.cols();
  p.config.num_classes = p.classifier.w.cols();
  return p;
}

}  // namespace aida
