#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "grid_oracle.hpp"
#include "hiermeta/error.hpp"
#include "hiermeta/rng.hpp"
#include "hiermeta/stage2.hpp"
#include "hiermeta/stage3.hpp"

#include <cmath>
#include <numbers>
#include <string>

using namespace hiermeta;

namespace {

std::vector<stage3::CohortEstimate> make(const std::vector<double>& b, const std::vector<double>& v) {
  std::vector<stage3::CohortEstimate> out;
  for (std::size_t i = 0; i < b.size(); ++i) out.push_back({"c" + std::to_string(i + 1), b[i], v[i]});
  return out;
}

std::vector<stage3::CohortEstimate> random_inputs(std::uint64_t seed, int I) {
  rng::Stream rs(seed, 3);
  const double eta = 0.3 + 1.5 * rs.uniform();
  std::vector<double> b, v;
  for (int i = 0; i < I; ++i) {
    v.push_back(0.1 + 1.5 * rs.uniform());
    b.push_back(-3.0 + eta * rs.normal() + std::sqrt(v.back()) * rs.normal());
  }
  return make(b, v);
}

}  // namespace

TEST_CASE("single cohort returns its own estimate") {
  const auto g = stage3::pool_across_cohorts(make({-2.5}, {0.4}));
  CHECK(g.beta_global == doctest::Approx(-2.5));
  CHECK(g.se_global == doctest::Approx(std::sqrt(0.4)));
  CHECK(g.eta2_hat == 0.0);
  CHECK(g.cohort_weights(0) == doctest::Approx(1.0));
}

TEST_CASE("identical estimates give zero heterogeneity") {
  const auto g = stage3::pool_across_cohorts(make({1.0, 1.0, 1.0, 1.0}, {0.2, 0.5, 1.0, 2.0}));
  CHECK(g.beta_global == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(g.eta2_hat == 0.0);
  CHECK(g.converged);
}

TEST_CASE("eta2 = 0 reduces to fixed-effect inverse-variance pooling") {
  const std::vector<double> b{-1.0, -1.2, -0.9}, v{1.0, 2.0, 4.0};
  const auto g = stage3::pool_across_cohorts(make(b, v));
  REQUIRE(g.eta2_hat == 0.0);
  double sw = 0.0, swb = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    sw += 1.0 / v[i];
    swb += b[i] / v[i];
  }
  CHECK(g.beta_global == doctest::Approx(swb / sw).epsilon(1e-12));
  CHECK(g.se_global == doctest::Approx(std::sqrt(1.0 / sw)).epsilon(1e-12));
  CHECK(g.cohort_weights.sum() == doctest::Approx(1.0));
}

TEST_CASE("pseudo-likelihood is the product of normal densities") {
  const auto in = make({0.5, -1.0}, {0.3, 0.6});
  const double beta = 0.1, eta2 = 0.2;
  double expect = 0.0;
  for (const auto& c : in) {
    const double t = c.variance + eta2;
    expect += -0.5 * (std::log(2.0 * std::numbers::pi * t) + (c.beta - beta) * (c.beta - beta) / t);
  }
  CHECK(stage3::pseudo_loglik(beta, eta2, in) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("matches a two-dimensional grid search") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto in = random_inputs(seed, 6);
    Eigen::VectorXd b(6), v(6);
    for (int i = 0; i < 6; ++i) b(i) = in[i].beta, v(i) = in[i].variance;
    const auto g = stage3::pool_across_cohorts(in);
    const double range = b.maxCoeff() - b.minCoeff();
    const auto grid = testing::grid_maximize(b, Eigen::MatrixXd(v.asDiagonal()), 2.0 * range * range + 1.0);
    CAPTURE(seed);
    CHECK(std::abs(g.beta_global - grid.beta) < std::max(1e-3, grid.beta_step));
    CHECK(std::abs(g.eta2_hat - grid.phi) < std::max(1e-3, grid.phi_step));
    CHECK(g.log_pl >= grid.value - 1e-9);
  }
}

TEST_CASE("coincides with the stage II engine on a diagonal block") {
  for (std::uint64_t seed = 20; seed < 26; ++seed) {
    const auto in = random_inputs(seed, 6);
    EffectBlock blk;
    blk.b_hat.resize(6);
    blk.gamma = Eigen::MatrixXd::Zero(6, 6);
    blk.j = 1.0;
    for (int i = 0; i < 6; ++i) blk.b_hat(i) = in[i].beta, blk.gamma(i, i) = in[i].variance;
    stage2::ConvergenceOptions o2;
    o2.tol_beta = o2.tol_phi = 1e-12;
    o2.phi_max_factor = 1e4;
    stage3::Options o3;
    o3.tol_beta = o3.tol_eta2 = 1e-12;
    o3.eta2_max_factor = 1e4;
    const auto s2 = stage2::pool_within_cohort(blk, o2);
    const auto s3 = stage3::pool_across_cohorts(in, o3);
    CAPTURE(seed);
    CHECK(std::abs(s2.beta_hat - s3.beta_global) < 1e-8);
    CHECK(std::abs(s2.phi_hat - s3.eta2_hat) < 1e-8);
    CHECK(std::abs(s2.se_beta - s3.se_global) < 1e-8);
  }
}

TEST_CASE("very imprecise cohort gets negligible weight") {
  const auto g = stage3::pool_across_cohorts(make({-2.0, -2.2, 50.0}, {0.1, 0.1, 1e12}));
  CHECK(g.cohort_weights(2) < 1e-10);
  CHECK(std::abs(g.beta_global + 2.1) < 1e-6);
}

TEST_CASE("non-positive variance is rejected by cohort id") {
  try {
    stage3::pool_across_cohorts(make({1.0, 2.0}, {0.5, 0.0}));
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("c2") != std::string::npos);
  }
  CHECK_THROWS_AS(stage3::pool_across_cohorts({}), ValidationError);
}

TEST_CASE("DerSimonian-Laird matches the moment formula") {
  const std::vector<double> b{-1.0, -3.0, -2.0, 0.5}, v{0.2, 0.3, 0.25, 0.4};
  double sw = 0.0, sw2 = 0.0, swb = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    sw += 1.0 / v[i];
    sw2 += 1.0 / (v[i] * v[i]);
    swb += b[i] / v[i];
  }
  double q = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) q += (b[i] - swb / sw) * (b[i] - swb / sw) / v[i];
  const double expect = std::max(0.0, (q - 3.0) / (sw - sw2 / sw));
  double q_out = 0.0;
  CHECK(stage3::dersimonian_laird(make(b, v), &q_out) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(q_out == doctest::Approx(q).epsilon(1e-12));
  const auto g = stage3::pool_across_cohorts(make(b, v));
  CHECK(g.eta2_dersimonian_laird == doctest::Approx(expect).epsilon(1e-12));
  CHECK(g.eta2_hat > 0.0);
  CHECK(std::isfinite(g.se_eta2));
  CHECK(g.se_eta2 > 0.0);
}

TEST_CASE("profile likelihood peaks at the estimate") {
  const auto in = random_inputs(99, 8);
  const auto g = stage3::pool_across_cohorts(in);
  const double at = stage3::profile_loglik(g.eta2_hat, in);
  CHECK(at >= stage3::profile_loglik(g.eta2_hat + 1e-3, in));
  if (g.eta2_hat > 1e-3) CHECK(at >= stage3::profile_loglik(g.eta2_hat - 1e-3, in));
}
