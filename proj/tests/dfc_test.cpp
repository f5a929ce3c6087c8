#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "aida/dfc.hpp"
#include "aida/oracles.hpp"
#include "aida/rng.hpp"

using namespace aida;

TEST_CASE("batch entropy") {
  SECTION("one-hot rows give exactly zero") {
    CHECK(batch_entropy(Tensor::matrix({{1, 0, 0}, {0, 0, 1}})) == 0.0);
  }
  SECTION("uniform rows give ln C") {
    const std::size_t c = 7;
    Tensor p = Tensor::full({3, c}, 1.0 / static_cast<double>(c));
    CHECK(std::abs(batch_entropy(p) - std::log(static_cast<double>(c))) < 1e-12);
  }
  SECTION("half-half row gives ln 2") {
    CHECK(batch_entropy(Tensor::matrix({{0.5, 0.5}})) == Catch::Approx(0.693147).margin(1e-6));
  }
  SECTION("negative probabilities and bad row sums are rejected") {
    CHECK_THROWS_AS(batch_entropy(Tensor::matrix({{1.2, -0.2}})), ContractError);
    CHECK_THROWS_AS(batch_entropy(Tensor::matrix({{0.4, 0.4}})), ContractError);
  }
  SECTION("always within [0, ln C]") {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t c = 2 + static_cast<std::size_t>(rng.below(6));
      Tensor p = Tensor::zeros({4, c});
      for (std::size_t i = 0; i < 4; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          p(i, j) = -std::log(1.0 - rng.uniform());
          sum += p(i, j);
        }
        for (std::size_t j = 0; j < c; ++j) p(i, j) /= sum;
      }
      const double e = batch_entropy(p);
      CHECK(e >= 0.0);
      CHECK(e <= std::log(static_cast<double>(c)) + 1e-12);
    }
  }
}

TEST_CASE("gradient variance") {
  SECTION("constant components give zero") {
    const std::vector<Tensor> grads = {Tensor::full({3}, 2.5), Tensor::full({2, 2}, 2.5)};
    CHECK(gradient_variance(grads) == 0.0);
  }
  SECTION("two components [1,3] give 1") {
    const std::vector<Tensor> grads = {Tensor::vector({1, 3})};
    CHECK(gradient_variance(grads) == Catch::Approx(1.0).margin(1e-15));
  }
  SECTION("scaling by c scales variance by c^2") {
    Rng rng(3);
    Tensor g = Tensor::zeros({8});
    for (std::size_t i = 0; i < 8; ++i) g[i] = rng.uniform(-1, 1);
    const double v = gradient_variance(std::vector<Tensor>{g});
    for (std::size_t i = 0; i < 8; ++i) g[i] *= 3.0;
    CHECK(gradient_variance(std::vector<Tensor>{g}) == Catch::Approx(9.0 * v).margin(1e-12));
  }
  SECTION("empty set is rejected") {
    CHECK_THROWS_AS(gradient_variance(std::vector<Tensor>{}), ContractError);
  }
}

TEST_CASE("running normalizers") {
  ControllerConfig cfg;
  cfg.decay = 0.9;
  ControllerState s = ControllerState::init(cfg, 3);
  update_normalizers(s, 2.0, 4.0);
  CHECK(s.e_max == 2.0);
  CHECK(s.v_max == 4.0);
  SECTION("small signals decay the maxima") {
    update_normalizers(s, 0.1, 0.1);
    CHECK(s.e_max == Catch::Approx(1.8));
    CHECK(s.v_max == Catch::Approx(3.6));
  }
  SECTION("large signals replace the maxima") {
    update_normalizers(s, 5.0, 9.0);
    CHECK(s.e_max == 5.0);
    CHECK(s.v_max == 9.0);
  }
  SECTION("decay = 1 yields the running maximum (fold-max oracle)") {
    ControllerConfig c1;
    c1.decay = 1.0;
    ControllerState t = ControllerState::init(c1, 2);
    Rng rng(17);
    double fold_max_e = 1e-12, fold_max_v = 1e-12;
    for (int i = 0; i < 100; ++i) {
      const double e = rng.uniform(0, 3), v = rng.uniform(0, 3);
      update_normalizers(t, e, v);
      fold_max_e = std::max(fold_max_e, e);
      fold_max_v = std::max(fold_max_v, v);
      CHECK(t.e_max == fold_max_e);
      CHECK(t.v_max == fold_max_v);
    }
  }
}

TEST_CASE("simplex projection") {
  SECTION("points on the simplex are fixed") {
    const std::vector<double> v = {0.2, 0.5, 0.3};
    const MixWeights w = simplex_project(v);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(w.alpha[i] - v[i]) < 1e-15);
  }
  SECTION("uniform overweight shrinks to the center") {
    const MixWeights w = simplex_project(std::vector<double>{0.5, 0.5, 0.5});
    for (const double a : w.alpha) CHECK(a == Catch::Approx(1.0 / 3.0).margin(1e-15));
  }
  SECTION("a dominant coordinate hits the corner") {
    const MixWeights w = simplex_project(std::vector<double>{2.0, 0.0, 0.0});
    CHECK(w.alpha[0] == Catch::Approx(1.0).margin(1e-15));
    CHECK(w.alpha[1] == 0.0);
    CHECK(w.alpha[2] == 0.0);
  }
  SECTION("output satisfies the constraints and matches the grid oracle") {
    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<double> v = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
      const MixWeights w = simplex_project(v);
      double sum = 0.0;
      for (const double a : w.alpha) {
        CHECK(a >= 0.0);
        sum += a;
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
      const std::vector<double> g = oracle::grid_project(v, 1e-3);
      for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(w.alpha[i] - g[i]) < 2e-3);
    }
  }
}

TEST_CASE("alpha updates") {
  ControllerConfig cfg;
  cfg.eta_alpha = 0.05;

  SECTION("literal rule is the identity on the simplex") {
    cfg.mode = ControllerMode::kLiteral;
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
      ControllerState s = ControllerState::init(cfg, 4);
      std::vector<double> a = {rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()};
      const double sum = std::accumulate(a.begin(), a.end(), 0.0);
      for (double& x : a) x /= sum;
      s.alpha = a;
      update_normalizers(s, rng.uniform(0, 2), rng.uniform(0, 2));
      update_alpha(s, rng.uniform(0, 2), {}, rng.uniform(0, 2));
      for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(s.alpha[i] - a[i]) < 1e-12);
    }
  }
  SECTION("per-domain mode with equal signals leaves alpha unchanged") {
    cfg.mode = ControllerMode::kPerDomain;
    ControllerState s = ControllerState::init(cfg, 3);
    update_normalizers(s, 1.0, 1.0);
    const std::vector<double> equal = {0.7, 0.7, 0.7};
    update_alpha(s, 0.7, equal, 0.5);
    for (const double a : s.alpha) CHECK(a == Catch::Approx(1.0 / 3.0).margin(1e-12));
  }
  SECTION("per-domain mode pushes weight away from the noisiest domain") {
    cfg.mode = ControllerMode::kPerDomain;
    ControllerState s = ControllerState::init(cfg, 3);
    update_normalizers(s, 1.5, 1.0);
    const std::vector<double> entropies = {0.5, 1.5, 0.5};
    update_alpha(s, 1.5, entropies, 0.2);
    CHECK(s.alpha[1] < 1.0 / 3.0);
    CHECK(s.alpha[0] > 1.0 / 3.0);
    CHECK(s.alpha[0] == Catch::Approx(s.alpha[2]).margin(1e-12));
    // Projection oracle on the shifted vector.
    std::vector<double> shifted(3);
    for (std::size_t k = 0; k < 3; ++k) {
      shifted[k] = 1.0 / 3.0 - cfg.eta_alpha * (entropies[k] / s.e_max + 0.2 / s.v_max);
    }
    const std::vector<double> g = oracle::grid_project(shifted, 1e-3);
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(s.alpha[k] - g[k]) < 2e-3);
  }
  SECTION("mismatched per-domain signal size is rejected") {
    cfg.mode = ControllerMode::kPerDomain;
    ControllerState s = ControllerState::init(cfg, 3);
    update_normalizers(s, 1.0, 1.0);
    CHECK_THROWS_AS(update_alpha(s, 1.0, std::vector<double>{1.0, 2.0}, 0.5), ContractError);
  }
}

TEST_CASE("lambda updates") {
  ControllerConfig cfg;
  cfg.eta_lambda = 0.05;
  cfg.lambda_max = 1.0;
  cfg.lambda_init = 0.1;

  SECTION("clips at the upper bound") {
    ControllerState s = ControllerState::init(cfg, 2);
    s.lambda_pmr = cfg.lambda_max;
    update_normalizers(s, 1.0, 1.0);
    update_lambda(s, 1.0, 1.0);
    CHECK(s.lambda_pmr == cfg.lambda_max);
  }
  SECTION("worked increment 0.1 + 0.05*(0.5+0.5)") {
    ControllerState s = ControllerState::init(cfg, 2);
    update_normalizers(s, 2.0, 2.0);
    update_lambda(s, 1.0, 1.0);  // E/E_max = V/V_max = 0.5
    CHECK(s.lambda_pmr == Catch::Approx(0.15).margin(1e-12));
  }
  SECTION("zero signals leave lambda unchanged") {
    ControllerState s = ControllerState::init(cfg, 2);
    update_normalizers(s, 1.0, 1.0);
    update_lambda(s, 0.0, 0.0);
    CHECK(s.lambda_pmr == cfg.lambda_init);
  }
  SECTION("random update streams never leave the bounds") {
    Rng rng(404);
    for (int run = 0; run < 50; ++run) {
      ControllerState s = ControllerState::init(cfg, 2);
      for (int step = 0; step < 200; ++step) {
        const double e = rng.uniform(0, 4), v = rng.uniform(0, 4);
        update_normalizers(s, e, v);
        update_lambda(s, e, v);
        CHECK(s.lambda_pmr >= 0.0);
        CHECK(s.lambda_pmr <= cfg.lambda_max);
      }
    }
  }
}

TEST_CASE("controller config validation") {
  ControllerConfig bad;
  bad.decay = 0.0;
  CHECK_THROWS_AS(ControllerState::init(bad, 2), ContractError);
  bad = ControllerConfig{};
  bad.lambda_init = 2.0;
  CHECK_THROWS_AS(ControllerState::init(bad, 2), ContractError);
  CHECK_THROWS_AS(controller_mode_from_string("nope"), ConfigError);
}
