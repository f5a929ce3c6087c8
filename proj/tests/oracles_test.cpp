#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "aida/dfc.hpp"
#include "aida/losses.hpp"
#include "aida/metrics.hpp"
#include "aida/model.hpp"
#include "aida/msidg.hpp"
#include "aida/optimizer.hpp"
#include "aida/oracles.hpp"
#include "aida/synth.hpp"

using namespace aida;
using oracle::OracleCase;

#ifndef AIDA_FIXTURES_DIR
#define AIDA_FIXTURES_DIR "fixtures"
#endif

namespace {

Tensor matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor({rows.size(), rows[0].size()}, std::move(flat));
}

// Regenerates the expected value with the case's oracle, checks the stored
// expected value against it, then checks the production implementation.
void run_case(const OracleCase& c) {
  INFO(c.name);
  const nlohmann::json& in = c.inputs;

  if (c.kind == "population_variance") {
    const auto v = in.at("values").get<std::vector<double>>();
    double mean = 0.0;
    for (const double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double oracle_value = 0.0;
    for (const double x : v) oracle_value += (x - mean) * (x - mean);
    oracle_value /= static_cast<double>(v.size());
    CHECK(std::abs(oracle_value - c.expected.get<double>()) <= c.tolerance);
    Tape t;
    CHECK(std::abs(t.value(variance(t.leaf(Tensor::vector(v)))).item() - oracle_value) <=
          c.tolerance);
    return;
  }
  if (c.kind == "disjoint_labels") {
    const auto counts = in.at("identities").get<std::vector<std::size_t>>();
    // Prefix-sum oracle.
    std::vector<std::vector<int>> oracle_labels;
    int offset = 0;
    for (const std::size_t ck : counts) {
      std::vector<int> range;
      for (std::size_t i = 0; i < ck; ++i) range.push_back(offset + static_cast<int>(i));
      offset += static_cast<int>(ck);
      oracle_labels.push_back(std::move(range));
    }
    CHECK(oracle_labels == c.expected.get<std::vector<std::vector<int>>>());
    std::vector<DomainDataset> domains;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      DomainSpec spec;
      spec.domain_id = static_cast<int>(k);
      spec.num_identities = counts[k];
      spec.samples_per_identity = 2;
      spec.num_cameras = 1;
      spec.feature_dim = 2;
      spec.style_scale = {1.0, 1.0};
      spec.style_offset = {0.0, 0.0};
      spec.seed = k;
      domains.push_back(generate_domain(spec));
    }
    domains = make_disjoint(std::move(domains));
    for (std::size_t k = 0; k < counts.size(); ++k) {
      CHECK(domains[k].identity_labels() == oracle_labels[k]);
    }
    return;
  }
  if (c.kind == "domain_mean_shift") {
    DomainSpec a;
    a.domain_id = 0;
    a.num_identities = in.at("num_identities").get<std::size_t>();
    a.samples_per_identity = in.at("samples_per_identity").get<std::size_t>();
    a.num_cameras = 1;
    a.feature_dim = in.at("feature_dim").get<std::size_t>();
    a.style_scale.assign(a.feature_dim, 1.0);
    a.style_offset.assign(a.feature_dim, 0.0);
    a.noise_sigma = in.at("noise_sigma").get<double>();
    a.seed = in.at("seed").get<std::uint64_t>();
    DomainSpec b = a;
    const double offset = in.at("offset").get<double>();
    b.style_offset.assign(b.feature_dim, offset);
    const DomainDataset da = generate_domain(a), db = generate_domain(b);
    for (std::size_t d = 0; d < a.feature_dim; ++d) {
      double ma = 0.0, mb = 0.0;  // sample-mean oracle
      for (const Sample& s : da.samples) ma += s.raw_vector[d];
      for (const Sample& s : db.samples) mb += s.raw_vector[d];
      const double diff = (mb - ma) / static_cast<double>(da.size());
      const double tol = 3.0 * (1.0 + a.noise_sigma) / std::sqrt(static_cast<double>(da.size()));
      CHECK(std::abs(diff - c.expected.get<double>()) < tol);
    }
    return;
  }
  if (c.kind == "l2_normalize_row") {
    const auto row = in.at("row").get<std::vector<double>>();
    double norm = 0.0;
    for (const double x : row) norm += x * x;
    norm = std::sqrt(norm);
    std::vector<double> oracle_row;
    for (const double x : row) oracle_row.push_back(x / norm);
    const auto want = c.expected.get<std::vector<double>>();
    for (std::size_t i = 0; i < row.size(); ++i) {
      CHECK(std::abs(oracle_row[i] - want[i]) <= c.tolerance);
    }
    Tape t;
    const Tensor& got = t.value(l2_normalize(t, t.leaf(Tensor({1, row.size()}, row))));
    for (std::size_t i = 0; i < row.size(); ++i) {
      CHECK(std::abs(got[i] - oracle_row[i]) <= c.tolerance);
    }
    return;
  }
  if (c.kind == "softmax_row") {
    const auto logits = in.at("logits").get<std::vector<double>>();
    double mx = logits[0], denom = 0.0;
    for (const double l : logits) mx = std::max(mx, l);
    std::vector<double> oracle_row;
    for (const double l : logits) {
      oracle_row.push_back(std::exp(l - mx));
      denom += oracle_row.back();
    }
    for (double& p : oracle_row) p /= denom;
    const auto want = c.expected.get<std::vector<double>>();
    Tape t;
    const Tensor& got = t.value(softmax_lastaxis(t.leaf(Tensor({1, logits.size()}, logits))));
    for (std::size_t i = 0; i < logits.size(); ++i) {
      CHECK(std::abs(oracle_row[i] - want[i]) <= c.tolerance);
      CHECK(std::abs(got[i] - oracle_row[i]) <= c.tolerance);
    }
    return;
  }
  if (c.kind == "channel_stats_column") {
    const auto col = in.at("column").get<std::vector<double>>();
    double mean = 0.0;
    for (const double x : col) mean += x;
    mean /= static_cast<double>(col.size());
    double var = 0.0;
    for (const double x : col) var += (x - mean) * (x - mean);
    const double sigma = std::sqrt(var / static_cast<double>(col.size()));
    CHECK(std::abs(mean - c.expected.at("mu").get<double>()) <= c.tolerance);
    CHECK(std::abs(sigma - c.expected.at("sigma").get<double>()) <= c.tolerance);
    const ChannelStats got = channel_stats(Tensor({col.size(), 1}, col));
    CHECK(std::abs(got.mu[0] - mean) <= c.tolerance);
    CHECK(std::abs(got.sigma[0] - sigma) <= c.tolerance);
    return;
  }
  if (c.kind == "transfer_stats_roundtrip") {
    Rng rng(in.at("seed").get<std::uint64_t>());
    const std::size_t rows = in.at("rows").get<std::size_t>();
    const std::size_t cols = in.at("cols").get<std::size_t>();
    Tensor f = Tensor::zeros({rows, cols});
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.uniform(-2, 2);
    ChannelStats donor;
    for (std::size_t j = 0; j < cols; ++j) {
      donor.mu.push_back(rng.uniform(-3, 3));
      donor.sigma.push_back(rng.uniform(0.2, 2.5));
    }
    const ChannelStats got = channel_stats(
        statistics_transfer(f, donor, in.at("eps").get<double>()));
    double worst = 0.0;  // recompute-stats oracle: deviation from donor
    for (std::size_t j = 0; j < cols; ++j) {
      worst = std::max(worst, std::abs(got.mu[j] - donor.mu[j]));
      worst = std::max(worst, std::abs(got.sigma[j] - donor.sigma[j]));
    }
    CHECK(worst <= c.expected.get<double>() + c.tolerance);
    return;
  }
  if (c.kind == "mix_equivalence") {
    Rng rng(in.at("seed").get<std::uint64_t>());
    const std::size_t rows = in.at("rows").get<std::size_t>();
    const std::size_t cols = in.at("cols").get<std::size_t>();
    const MixWeights alpha{in.at("alpha").get<std::vector<double>>()};
    Tensor f = Tensor::zeros({rows, cols});
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.uniform(-2, 2);
    std::vector<ChannelStats> stats(alpha.alpha.size());
    for (ChannelStats& s : stats) {
      for (std::size_t j = 0; j < cols; ++j) {
        s.mu.push_back(rng.uniform(-3, 3));
        s.sigma.push_back(rng.uniform(0.2, 2.5));
      }
    }
    const Tensor sum_form = multi_source_mix(f, stats, alpha);
    const Tensor agg_form = statistics_transfer(f, aggregate_stats(stats, alpha));
    CHECK(max_abs_diff(sum_form, agg_form) <= c.expected.get<double>() + c.tolerance);
    return;
  }
  if (c.kind == "id_loss_batch") {
    const Tensor post = matrix_from_json(in.at("posteriors"));
    const auto labels = in.at("labels").get<std::vector<int>>();
    double oracle_value = 0.0;  // direct formula
    for (std::size_t i = 0; i < post.rows(); ++i) {
      oracle_value -= std::log(post(i, static_cast<std::size_t>(labels[i])));
    }
    oracle_value /= static_cast<double>(post.rows());
    CHECK(std::abs(oracle_value - c.expected.get<double>()) <= c.tolerance);
    Tape t;
    CHECK(std::abs(t.value(id_loss(t, t.constant(post), labels)).item() - oracle_value) <=
          c.tolerance);
    return;
  }
  if (c.kind == "triplet_batch") {
    const Tensor z = matrix_from_json(in.at("embeddings"));
    const auto labels = in.at("labels").get<std::vector<int>>();
    const double margin = in.at("margin").get<double>();
    double oracle_value = 0.0;  // brute-force mining
    for (std::size_t i = 0; i < z.rows(); ++i) {
      double dp = -1.0, dn = -1.0;
      for (std::size_t j = 0; j < z.rows(); ++j) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < z.cols(); ++k) d2 += (z(i, k) - z(j, k)) * (z(i, k) - z(j, k));
        const double d = std::sqrt(d2);
        if (j != i && labels[j] == labels[i]) dp = std::max(dp, d);
        if (labels[j] != labels[i]) dn = dn < 0 ? d : std::min(dn, d);
      }
      oracle_value += std::max(0.0, dp - dn + margin);
    }
    oracle_value /= static_cast<double>(z.rows());
    CHECK(std::abs(oracle_value - c.expected.get<double>()) <= c.tolerance);
    Tape t;
    CHECK(std::abs(t.value(batch_hard_triplet(t, t.constant(z), labels, margin)).item() -
                   oracle_value) <= c.tolerance);
    return;
  }
  if (c.kind == "pmr_point") {
    const Tensor a = matrix_from_json(in.at("a")), b = matrix_from_json(in.at("b"));
    double oracle_value = 0.0;  // ||u - v||^2 identity
    for (std::size_t i = 0; i < a.rows(); ++i) {
      for (std::size_t j = 0; j < a.cols(); ++j) {
        oracle_value += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
      }
    }
    oracle_value /= static_cast<double>(a.rows());
    CHECK(std::abs(oracle_value - c.expected.get<double>()) <= c.tolerance);
    Tape t;
    CHECK(std::abs(t.value(pmr_point_loss(t, t.constant(a), t.constant(b))).item() -
                   oracle_value) <= c.tolerance);
    return;
  }
  if (c.kind == "relational_pairs") {
    const Tensor a = matrix_from_json(in.at("a")), b = matrix_from_json(in.at("b"));
    const auto pairs = in.at("pairs").get<std::vector<std::pair<std::size_t, std::size_t>>>();
    const auto dist = [](const Tensor& m, std::size_t i, std::size_t j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m.cols(); ++k) s += (m(i, k) - m(j, k)) * (m(i, k) - m(j, k));
      return std::sqrt(s);
    };
    double oracle_value = 0.0;  // brute-force distance table
    for (const auto& [i, j] : pairs) oracle_value += std::abs(dist(a, i, j) - dist(b, i, j));
    oracle_value /= static_cast<double>(pairs.size());
    CHECK(std::abs(oracle_value - c.expected.get<double>()) <= c.tolerance);
    Tape t;
    PairList pl(pairs.begin(), pairs.end());
    CHECK(std::abs(t.value(relational_loss(t, t.constant(a), t.constant(b), pl)).item() -
                   oracle_value) <= c.tolerance);
    return;
  }
  if (c.kind == "batch_entropy") {
    const Tensor post = matrix_from_json(in.at("posteriors"));
    double oracle_value = 0.0;
    for (std::size_t i = 0; i < post.rows(); ++i) {
      for (std::size_t j = 0; j < post.cols(); ++j) {
        if (post(i, j) > 0.0) oracle_value -= post(i, j) * std::log(post(i, j));
      }
    }
    oracle_value /= static_cast<double>(post.rows());
    CHECK(std::abs(oracle_value - c.expected.get<double>()) <= c.tolerance);
    CHECK(std::abs(batch_entropy(post) - oracle_value) <= c.tolerance);
    return;
  }
  if (c.kind == "gradient_variance") {
    const auto comp = in.at("components").get<std::vector<double>>();
    double mean = 0.0;
    for (const double x : comp) mean += x;
    mean /= static_cast<double>(comp.size());
    double oracle_value = 0.0;
    for (const double x : comp) oracle_value += (x - mean) * (x - mean);
    oracle_value /= static_cast<double>(comp.size());
    CHECK(std::abs(oracle_value - c.expected.get<double>()) <= c.tolerance);
    CHECK(std::abs(gradient_variance(std::vector<Tensor>{Tensor::vector(comp)}) - oracle_value) <=
          c.tolerance);
    return;
  }
  if (c.kind == "normalizer_fold_max") {
    const auto signals = in.at("signals").get<std::vector<double>>();
    double fold = 1e-12;  // fold-max oracle
    for (const double s : signals) fold = std::max(fold, s);
    CHECK(std::abs(fold - c.expected.get<double>()) <= c.tolerance);
    ControllerConfig cc;
    cc.decay = in.at("decay").get<double>();
    ControllerState s = ControllerState::init(cc, 2);
    for (const double e : signals) update_normalizers(s, e, e);
    CHECK(std::abs(s.e_max - fold) <= c.tolerance);
    return;
  }
  if (c.kind == "simplex_projection") {
    const auto v = in.at("v").get<std::vector<double>>();
    const auto grid = oracle::grid_project(v, in.at("grid_step").get<double>());
    const auto want = c.expected.get<std::vector<double>>();
    const MixWeights got = simplex_project(v);
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(std::abs(grid[i] - want[i]) <= c.tolerance);
      CHECK(std::abs(got.alpha[i] - grid[i]) <= c.tolerance);
    }
    return;
  }
  if (c.kind == "lambda_update") {
    const double expected = std::clamp(
        in.at("lambda").get<double>() +
            in.at("eta").get<double>() *
                (in.at("e_over_emax").get<double>() + in.at("v_over_vmax").get<double>()),
        0.0, in.at("lambda_max").get<double>());
    CHECK(std::abs(expected - c.expected.get<double>()) <= c.tolerance);
    ControllerConfig cc;
    cc.eta_lambda = in.at("eta").get<double>();
    cc.lambda_max = in.at("lambda_max").get<double>();
    cc.lambda_init = in.at("lambda").get<double>();
    ControllerState s = ControllerState::init(cc, 2);
    s.e_max = 1.0;
    s.v_max = 1.0;
    update_lambda(s, in.at("e_over_emax").get<double>(), in.at("v_over_vmax").get<double>());
    CHECK(std::abs(s.lambda_pmr - expected) <= c.tolerance);
    return;
  }
  if (c.kind == "adam_scalar") {
    const double g = in.at("grad").get<double>(), lr = in.at("lr").get<double>();
    const double b1 = in.at("beta1").get<double>(), b2 = in.at("beta2").get<double>();
    const double eps = in.at("eps").get<double>();
    // Direct one-step formula with bias correction.
    const double mhat = ((1 - b1) * g) / (1 - b1);
    const double vhat = ((1 - b2) * g * g) / (1 - b2);
    const double expected = in.at("param").get<double>() - lr * mhat / (std::sqrt(vhat) + eps);
    CHECK(std::abs(expected - c.expected.get<double>()) <= c.tolerance);
    Tensor p = Tensor::scalar(in.at("param").get<double>());
    AdamConfig ac{b1, b2, eps};
    AdamState st = AdamState::init(std::vector<Tensor>{p});
    std::vector<Tensor*> ptrs = {&p};
    optimizer_step(ptrs, std::vector<Tensor>{Tensor::scalar(g)}, st, lr, ac);
    CHECK(std::abs(p.item() - expected) <= c.tolerance);
    return;
  }
  if (c.kind == "average_precision") {
    RetrievalSplit split;
    const auto parse_entry = [](const nlohmann::json& j) {
      return RetrievalEntry{j.at("embedding").get<std::vector<double>>(),
                            j.at("identity").get<int>(), j.at("camera").get<int>()};
    };
    split.query.push_back(parse_entry(in.at("query")));
    for (const auto& g : in.at("gallery")) split.gallery.push_back(parse_entry(g));
    const double oracle_value =
        oracle::map_from_ranking(split, oracle::brute_force_rank(split));
    CHECK(std::abs(oracle_value - c.expected.get<double>()) <= c.tolerance);
    CHECK(std::abs(mean_ap(split) - oracle_value) <= c.tolerance);
    return;
  }
  if (c.kind == "nmi_pair") {
    const auto a = in.at("a").get<std::vector<int>>();
    const auto b = in.at("b").get<std::vector<int>>();
    // Contingency-table oracle.
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> ca, cb;
    for (std::size_t i = 0; i < a.size(); ++i) {
      joint[{a[i], b[i]}] += 1.0;
      ca[a[i]] += 1.0;
      cb[b[i]] += 1.0;
    }
    const double n = static_cast<double>(a.size());
    double mi = 0.0, ha = 0.0, hb = 0.0;
    for (const auto& [k, v] : joint) mi += v / n * std::log((v / n) / (ca[k.first] / n * cb[k.second] / n));
    for (const auto& [k, v] : ca) ha -= v / n * std::log(v / n);
    for (const auto& [k, v] : cb) hb -= v / n * std::log(v / n);
    const double oracle_value = mi / ((ha + hb) / 2.0);
    CHECK(std::abs(oracle_value - c.expected.get<double>()) <= c.tolerance);
    CHECK(std::abs(nmi(std::span<const int>(a), std::span<const int>(b)) - oracle_value) <=
          c.tolerance);
    return;
  }
  if (c.kind == "silhouette_constructed") {
    const Tensor pts = matrix_from_json(in.at("points"));
    const auto assign = in.at("assignments").get<std::vector<std::size_t>>();
    // Direct-formula oracle.
    double oracle_value = 0.0;
    for (std::size_t i = 0; i < pts.rows(); ++i) {
      double own_sum = 0.0, other_sum = 0.0;
      std::size_t own_cnt = 0, other_cnt = 0;
      for (std::size_t j = 0; j < pts.rows(); ++j) {
        if (i == j) continue;
        double s = 0.0;
        for (std::size_t k = 0; k < pts.cols(); ++k) {
          s += (pts(i, k) - pts(j, k)) * (pts(i, k) - pts(j, k));
        }
        const double d = std::sqrt(s);
        if (assign[j] == assign[i]) {
          own_sum += d;
          ++own_cnt;
        } else {
          other_sum += d;
          ++other_cnt;
        }
      }
      const double av = own_sum / static_cast<double>(own_cnt);
      const double bv = other_sum / static_cast<double>(other_cnt);
      oracle_value += (bv - av) / std::max(av, bv);
    }
    oracle_value /= static_cast<double>(pts.rows());
    CHECK(std::abs(oracle_value - c.expected.get<double>()) <= c.tolerance);
    CHECK(std::abs(silhouette(pts, assign) - oracle_value) <= c.tolerance);
    return;
  }
  if (c.kind == "fd_bound") {
    // The central-difference oracle itself regenerates the gradient; the
    // case asserts the worst relative deviation stays under the tolerance.
    const std::string scenario = in.at("scenario").get<std::string>();
    const double h = in.at("h").get<double>();
    Rng rng(in.at("seed").get<std::uint64_t>());
    double err = 0.0;
    if (scenario == "quadratic") {
      Tensor x = Tensor::zeros({4});
      for (std::size_t i = 0; i < 4; ++i) x[i] = rng.uniform(-2, 2);
      err = finite_diff_check(
          [](Tape&, const std::vector<Var>& p) {
            return add(sum(mul(p[0], p[0])), mul(sum(p[0]), 3.0));
          },
          {x}, h);
    } else if (scenario == "relu_nonkink") {
      Tensor x = Tensor::zeros({6});
      for (std::size_t i = 0; i < 6; ++i) {
        x[i] = rng.uniform(-2, 2);
        if (std::abs(x[i]) < 0.05) x[i] += 0.2;
      }
      err = finite_diff_check(
          [](Tape&, const std::vector<Var>& p) { return sum(relu(p[0])); }, {x}, h);
    } else if (scenario == "supervised_loss" || scenario == "total_loss_two_samples") {
      ModelConfig mcfg;
      mcfg.feature_dim = 3;
      mcfg.hidden_dims = {4};
      mcfg.embed_dim = 3;
      mcfg.num_classes = 2;
      const ModelParams p = init_model(mcfg, rng.next_u64());
      const std::size_t batch = (scenario == "total_loss_two_samples") ? 2 : 4;
      Tensor x = Tensor::zeros({batch, 3});
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1, 1);
      std::vector<int> labels(batch);
      for (std::size_t i = 0; i < batch; ++i) labels[i] = static_cast<int>(i % 2);
      std::vector<Tensor> params;
      p.for_each_param([&](const std::string&, const Tensor& t) { params.push_back(t); });
      const ChannelStats donor{{0.2, -0.3, 0.4, 0.0}, {1.1, 0.7, 1.4, 0.9}};
      // Two samples cannot host a batch-hard triple, so that case runs with
      // the triplet weight zeroed.
      LossConfig lc;
      if (batch == 2) lc.lambda_tri = 0.0;
      err = finite_diff_check(
          [&](Tape& tape, const std::vector<Var>& vars) {
            ModelVars m;
            m.backbone.emplace_back(vars[0], vars[1]);
            m.head_w = vars[2];
            m.head_b = vars[3];
            m.cls_w = vars[4];
            m.cls_b = vars[5];
            Var f = extract_features(tape, m, tape.constant(x));
            Var zh = l2_normalize(tape, embed(tape, m, f));
            const SupervisedLoss sup =
                supervised_loss(tape, classify(tape, m, zh), zh, labels, lc);
            if (scenario == "supervised_loss") return sup.total;
            Var zt = intermediate_embed(tape, m, statistics_transfer(tape, f, donor));
            const PmrLoss pmr = pmr_loss(tape, zh, zt, lc, 0);
            return total_loss(sup.total, pmr.total, 0.3);
          },
          params, h);
    } else {
      FAIL("unknown fd scenario " << scenario);
    }
    CHECK(err <= c.expected.get<double>() + c.tolerance);
    return;
  }
  if (c.kind == "distance_pair") {
    const auto a = in.at("a").get<std::vector<double>>();
    const auto b = in.at("b").get<std::vector<double>>();
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    const double oracle_value = std::sqrt(s);
    CHECK(std::abs(oracle_value - c.expected.get<double>()) <= c.tolerance);
    const Tensor d = distance_matrix(Tensor({1, a.size()}, a), Tensor({1, b.size()}, b));
    CHECK(std::abs(d(0, 0) - oracle_value) <= c.tolerance);
    return;
  }
  FAIL("fixture case '" << c.name << "' has unhandled kind '" << c.kind << "'");
}

}  // namespace

TEST_CASE("all fixture cases regenerate and pass") {
  const auto cases = oracle::load_oracle_cases(std::string(AIDA_FIXTURES_DIR) +
                                               "/oracle_cases.json");
  REQUIRE(cases.size() >= 20);
  for (const OracleCase& c : cases) run_case(c);
}

TEST_CASE("brute force ranking edge cases") {
  SECTION("empty gallery gives empty lists") {
    RetrievalSplit s;
    s.query.push_back(RetrievalEntry{{0.0, 0.0}, 1, 0});
    const auto ranking = oracle::brute_force_rank(s);
    REQUIRE(ranking.size() == 1);
    CHECK(ranking[0].empty());
  }
  SECTION("single-item gallery: rank 1 or excluded") {
    RetrievalSplit s;
    s.query.push_back(RetrievalEntry{{0.0, 0.0}, 1, 0});
    s.gallery.push_back(RetrievalEntry{{1.0, 0.0}, 1, 1});
    CHECK(oracle::brute_force_rank(s)[0].size() == 1);
    s.gallery[0].camera = 0;  // same identity, same camera -> excluded
    CHECK(oracle::brute_force_rank(s)[0].empty());
  }
}

TEST_CASE("grid projection oracle") {
  SECTION("a point on the simplex is its own projection") {
    const std::vector<double> v = {0.25, 0.5, 0.25};
    const auto g = oracle::grid_project(v, 1e-2);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(g[i] - v[i]) < 1e-2);
  }
  SECTION("halving the step halves the worst-case error") {
    // The grid resolution bounds the error; compare two refinements against
    // the closed-form projection.
    const std::vector<double> v = {0.31231, 0.40001, 0.45177};
    const MixWeights exact = simplex_project(v);
    const auto coarse = oracle::grid_project(v, 2e-2);
    const auto fine = oracle::grid_project(v, 1e-2);
    double err_coarse = 0.0, err_fine = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      err_coarse = std::max(err_coarse, std::abs(coarse[i] - exact.alpha[i]));
      err_fine = std::max(err_fine, std::abs(fine[i] - exact.alpha[i]));
    }
    CHECK(err_fine <= err_coarse + 1e-12);
    CHECK(err_coarse <= 2 * 2e-2);
    CHECK(err_fine <= 2 * 1e-2);
  }
  SECTION("rejects unsupported sizes") {
    CHECK_THROWS_AS(oracle::grid_project(std::vector<double>{1, 2, 3, 4}, 1e-2), ContractError);
  }
}

TEST_CASE("method map covers every formula exactly once") {
  const auto rows = oracle::equation_map();
  std::set<std::string> ids;
  std::size_t implemented = 0;
  for (const auto& r : rows) {
    CHECK(ids.insert(r.id).second);  // no duplicate ids
    if (r.status == "implemented") {
      CHECK(!r.owner.empty());
      ++implemented;
    } else {
      CHECK(r.status == "excluded");
      CHECK(r.owner.empty());
    }
  }
  for (int eq = 1; eq <= 21; ++eq) {
    const std::string id = "eq" + std::to_string(eq);
    INFO(id);
    CHECK(ids.contains(id));
  }
  CHECK(ids.contains("alg1.init"));
  CHECK(ids.contains("alg1.stage1"));
  CHECK(ids.contains("alg1.stage2"));
  CHECK(ids.contains("alg1.target_loop"));
  CHECK(implemented == 25);  // 21 formulas + 4 procedure phases
  // Deliberately excluded features are marked.
  CHECK(ids.contains("resnet50_imagenet_backbone"));
  CHECK(ids.contains("sharpness_aware_minimization"));
}

TEST_CASE("fixture schema is validated") {
  const auto path = std::filesystem::temp_directory_path() / "aida_bad_fixture.json";
  {
    std::ofstream out(path);
    out << R"({"schema_version": 1, "cases": [{"name": "x", "kind": "k", "origin": "bogus",
            "tolerance": 1e-3, "inputs": {}, "expected": 0}]})";
  }
  CHECK_THROWS_AS(oracle::load_oracle_cases(path.string()), IoError);
  std::filesystem::remove(path);
}
