#include <doctest.h>

#include <cmath>
#include <nlohmann/json.hpp>
#include <random>

#include "dro/error.hpp"
#include "dro/losses.hpp"
#include "oracles.hpp"

using namespace dro;
using doctest::Approx;

TEST_CASE("entropy examples") {
  CHECK(losses::entropy(std::vector<double>{0.5, 0.5}) == Approx(0.693147).epsilon(1e-6));
  CHECK(losses::entropy(std::vector<double>{1.0, 0.0}) == 0.0);
  CHECK(losses::entropy(std::vector<double>{0.75, 0.25}) == Approx(0.562335).epsilon(1e-6));
  CHECK_THROWS_AS(losses::entropy(std::vector<double>{0.7, 0.7}), DomainError);
  CHECK_THROWS_AS(losses::entropy(std::vector<double>{1.2, -0.2}), DomainError);
}

TEST_CASE("marginal and conditional entropy examples") {
  CHECK(losses::marginal_entropy(Matrix{{1, 0}, {0, 1}}) == Approx(0.693147).epsilon(1e-6));
  CHECK(losses::marginal_entropy(Matrix{{0.5, 0.5}, {0.5, 0.5}}) == Approx(0.693147).epsilon(1e-6));
  CHECK(losses::marginal_entropy(Matrix{{0.9, 0.1}, {0.5, 0.5}}) == Approx(0.610864).epsilon(1e-6));
  CHECK(losses::conditional_entropy(Matrix{{1, 0}, {0, 1}}) == 0.0);
  CHECK(losses::conditional_entropy(Matrix{{0.5, 0.5}, {0.5, 0.5}}) == Approx(0.693147).epsilon(1e-6));
  CHECK(losses::conditional_entropy(Matrix{{0.9, 0.1}, {0.5, 0.5}}) == Approx(0.509115).epsilon(1e-6));
  CHECK_THROWS_AS(losses::marginal_entropy(Matrix(0, 2)), DomainError);
  CHECK_THROWS_AS(losses::conditional_entropy(Matrix(0, 2)), DomainError);
}

TEST_CASE("clustering loss examples") {
  CHECK(losses::clustering_loss(Matrix{{1, 0}, {0, 1}}, 1.0) == Approx(-0.693147).epsilon(1e-6));
  CHECK(std::abs(losses::clustering_loss(Matrix{{0.5, 0.5}, {0.5, 0.5}}, 1.0)) < 1e-15);
  CHECK(losses::clustering_loss(Matrix{{0.9, 0.1}, {0.5, 0.5}}, 4.0) == Approx(1.425596).epsilon(1e-6));
}

TEST_CASE("sat penalty examples") {
  const Matrix onehot{{1, 0}, {0, 1}};
  const Matrix uniform{{0.5, 0.5}, {0.5, 0.5}};
  CHECK(losses::sat_penalty(onehot, onehot) == 0.0);
  CHECK(losses::sat_penalty(onehot, uniform) == Approx(0.693147).epsilon(1e-6));
  CHECK(losses::sat_penalty(uniform, uniform) == Approx(0.693147).epsilon(1e-6));
  CHECK_THROWS_AS(losses::sat_penalty(onehot, Matrix{{0.5, 0.5}}), ShapeError);
}

TEST_CASE("sat penalty clamps zero probabilities and reports them") {
  std::size_t clamped = 0;
  const double v = losses::sat_penalty(Matrix{{1, 0}}, Matrix{{0, 1}}, &clamped);
  CHECK(clamped == 1);
  CHECK(v == Approx(-std::log(1e-12)));
}

TEST_CASE("total loss examples") {
  losses::LossWeights w{0.0, 4.0};
  const auto a = losses::total_loss(0.132, 0.6, 0.152, w);
  CHECK(a.l_total == a.r_sat);
  w = {0.7, 1.0};
  CHECK(losses::total_loss(0.0, 0.4, 0.4, w).l_total == 0.0);
  w = {1.0, 1.0};
  CHECK(losses::total_loss(0.5, 0.693, 0.1, w).l_total == Approx(-0.093).epsilon(1e-12));
  const auto b = losses::total_loss(0.1, 0.6, 0.05, {0.4, 4.0});
  CHECK(b.lambda == 0.4);
  CHECK(b.mu == 4.0);
  CHECK_THROWS_AS(losses::total_loss(NAN, 0.1, 0.1, w), DomainError);
}

TEST_CASE("loss weights validation") {
  CHECK_THROWS_AS((losses::LossWeights{-0.1, 4.0}.validate()), ConfigError);
  CHECK_THROWS_AS((losses::LossWeights{0.1, INFINITY}.validate()), ConfigError);
  CHECK_NOTHROW((losses::LossWeights{0.1, -1.0}.validate()));
}

TEST_CASE("breakdown json round trip uses flat keys") {
  const auto b = losses::total_loss(0.25, 0.6, 0.01, {0.4, 4.0});
  const auto j = losses::to_json(b);
  for (const char* key : {"r_sat", "h_y", "h_y_given_x", "l_total", "lambda", "mu"}) CHECK(j.contains(key));
  CHECK(losses::breakdown_from_json(nlohmann::json::parse(j.dump())) == b);
}

TEST_CASE("entropy functions match naive oracles and invariants on random matrices") {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 2 + rng() % 4;
    const Matrix p = oracle::random_probabilities(1 + rng() % 20, k, rng);
    const double hy = losses::marginal_entropy(p);
    const double hyx = losses::conditional_entropy(p);
    CHECK(hy == Approx(oracle::marginal_entropy(p)).epsilon(1e-12));
    CHECK(hyx == Approx(oracle::conditional_entropy(p)).epsilon(1e-12));
    CHECK(hyx >= -1e-15);
    CHECK(hyx <= hy + 1e-12);
    CHECK(hy <= std::log(static_cast<double>(k)) + 1e-12);
    CHECK(std::abs(losses::sat_penalty(p, p) - hyx) < 1e-9);
  }
}

TEST_CASE("losses are invariant to simultaneous row permutation") {
  std::mt19937_64 rng(3);
  const Matrix p = oracle::random_probabilities(8, 3, rng);
  const Matrix q = oracle::random_probabilities(8, 3, rng);
  const std::vector<std::size_t> perm = {7, 2, 5, 0, 1, 6, 3, 4};
  const Matrix pp = p.select_rows(perm), qp = q.select_rows(perm);
  CHECK(losses::marginal_entropy(pp) == Approx(losses::marginal_entropy(p)).epsilon(1e-14));
  CHECK(losses::conditional_entropy(pp) == Approx(losses::conditional_entropy(p)).epsilon(1e-14));
  CHECK(losses::sat_penalty(pp, qp) == Approx(losses::sat_penalty(p, q)).epsilon(1e-14));
  CHECK(losses::clustering_loss(pp, 4.0) == Approx(losses::clustering_loss(p, 4.0)).epsilon(1e-12));
}

TEST_CASE("differentiable forms return the same values and correct dL/dP") {
  std::mt19937_64 rng(19);
  const Matrix p = oracle::random_probabilities(5, 3, rng);
  const Matrix q = oracle::random_probabilities(5, 3, rng);
  auto check_grad = [&](const nn::LossValue& lv, const std::function<double(const Matrix&)>& f) {
    Matrix x = p;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double keep = x.values()[i];
      x.values()[i] = keep + 1e-5;
      const double up = f(x);
      x.values()[i] = keep - 1e-5;
      const double down = f(x);
      x.values()[i] = keep;
      CHECK(oracle::relative_error(lv.d_probs.values()[i], (up - down) / 2e-5) < 1e-5);
    }
  };
  // Perturbing single entries leaves the simplex, so the oracles below are
  // the unconstrained formulas.
  auto me = [](const Matrix& m) { return oracle::marginal_entropy(m); };
  auto ce = [](const Matrix& m) { return oracle::conditional_entropy(m); };
  const auto lme = losses::marginal_entropy_loss(p);
  CHECK(lme.value == Approx(losses::marginal_entropy(p)).epsilon(1e-14));
  check_grad(lme, me);
  const auto lce = losses::conditional_entropy_loss(p);
  CHECK(lce.value == Approx(losses::conditional_entropy(p)).epsilon(1e-14));
  check_grad(lce, ce);
  const auto lcl = losses::clustering_objective(p, 3.0);
  CHECK(lcl.value == Approx(losses::clustering_loss(p, 3.0)).epsilon(1e-14));
  check_grad(lcl, [&](const Matrix& m) { return -(me(m) - 3.0 * ce(m)); });
  const auto lsat = losses::sat_objective(q, p);
  CHECK(lsat.value == Approx(losses::sat_penalty(q, p)).epsilon(1e-14));
  check_grad(lsat, [&](const Matrix& m) { return oracle::cross_entropy(q, m); });
}
