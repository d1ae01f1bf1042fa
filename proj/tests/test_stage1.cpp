#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hiermeta/error.hpp"
#include "hiermeta/rng.hpp"
#include "hiermeta/stage1.hpp"
#include "support.hpp"

#include <cmath>
#include <numeric>

using namespace hiermeta;

namespace {

// 3x3 inverse by cofactors, independent of any factorization.
Eigen::Matrix3d cofactor_inverse(const Eigen::Matrix3d& m) {
  Eigen::Matrix3d c;
  c(0, 0) = m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1);
  c(0, 1) = -(m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0));
  c(0, 2) = m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0);
  c(1, 0) = -(m(0, 1) * m(2, 2) - m(0, 2) * m(2, 1));
  c(1, 1) = m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0);
  c(1, 2) = -(m(0, 0) * m(2, 1) - m(0, 1) * m(2, 0));
  c(2, 0) = m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1);
  c(2, 1) = -(m(0, 0) * m(1, 2) - m(0, 2) * m(1, 0));
  c(2, 2) = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  const double det = m(0, 0) * c(0, 0) + m(0, 1) * c(0, 1) + m(0, 2) * c(0, 2);
  return c.transpose() / det;
}

CohortData from_columns(const Eigen::VectorXd& a, const Eigen::VectorXd& s, const Eigen::MatrixXd& y) {
  return CohortData("c", a, s, y, BoolMatrix::Constant(y.rows(), y.cols(), true),
                    testing::names(static_cast<int>(y.cols())));
}

}  // namespace

TEST_CASE("noiseless linear data is fitted exactly") {
  const Eigen::VectorXd a = Eigen::VectorXd::LinSpaced(12, 0.0, 3.0);
  Eigen::VectorXd s(12);
  for (int j = 0; j < 12; ++j) s(j) = std::sin(j);
  const Eigen::VectorXd y = (2.0 + 3.0 * a.array()).matrix();
  const auto fit = stage1::fit_endpoint(from_columns(a, s, y), 0);
  CHECK(fit.theta(0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(fit.theta(1) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(std::abs(fit.theta(2)) < 1e-12);
  CHECK(fit.sigma2 < 1e-20);
  CHECK(fit.n_observed == 12);
}

TEST_CASE("constant exposure is a singular design") {
  const Eigen::VectorXd a = Eigen::VectorXd::Constant(10, 1.5);
  const Eigen::VectorXd s = Eigen::VectorXd::LinSpaced(10, 0, 1);
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(10, 3, 7);
  CHECK_THROWS_AS(stage1::fit_endpoint(from_columns(a, s, y), 0), NumericalError);
  CHECK_THROWS_AS(stage1::run(from_columns(a, s, y)), NumericalError);
  // Propensity collinear with exposure.
  const Eigen::VectorXd a2 = Eigen::VectorXd::LinSpaced(10, 0, 1);
  CHECK_THROWS_AS(stage1::fit_endpoint(from_columns(a2, 2.0 * a2, y), 0), NumericalError);
}

TEST_CASE("normal-equations oracle with cofactor inverse") {
  const auto d = testing::random_cohort(17, 50, Eigen::Vector2d(1.5, -0.5), testing::chol(testing::exchangeable(2, 0.3)));
  for (Eigen::Index k = 0; k < 2; ++k) {
    Eigen::Matrix3d xtx = Eigen::Matrix3d::Zero();
    Eigen::Vector3d xty = Eigen::Vector3d::Zero();
    for (Eigen::Index j = 0; j < 50; ++j) {
      const Eigen::Vector3d x(1.0, d.exposure()(j), d.propensity()(j));
      xtx += x * x.transpose();
      xty += x * d.responses()(j, k);
    }
    const Eigen::Vector3d oracle = cofactor_inverse(xtx) * xty;
    const auto fit = stage1::fit_endpoint(d, k);
    CHECK((fit.theta - oracle).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("insufficient data is a validation error") {
  // The constructor already refuses n_k < 4, so build a valid cohort and
  // check the guard on the index instead.
  const auto d = testing::random_cohort(1, 10, Eigen::Vector2d(1, 1), Eigen::Matrix2d::Identity());
  CHECK_THROWS_AS(stage1::fit_endpoint(d, 2), ValidationError);
}

TEST_CASE("identical response columns give perfect residual correlation") {
  const auto base = testing::random_cohort(4, 40, Eigen::Vector2d(1, 1), Eigen::Matrix2d::Identity());
  Eigen::MatrixXd y = base.responses();
  y.col(1) = y.col(0);
  const auto d = base.with_responses(y);
  const auto r = stage1::run(d);
  CHECK(r.residual.sigma(0, 1) == doctest::Approx(r.residual.sigma(0, 0)).epsilon(1e-12));
  CHECK(r.residual.sigma(1, 1) == doctest::Approx(r.residual.sigma(0, 0)).epsilon(1e-12));
}

TEST_CASE("independent noise: residual covariance near zero at J = 10000") {
  const int J = 10000;
  const auto d = testing::random_cohort(5, J, Eigen::Vector2d(1, 2), Eigen::Matrix2d::Identity());
  const auto fits = stage1::fit_endpoints(d);
  const auto rc = stage1::estimate_residual_covariance(d, fits);
  // Var(e1 e2) = 1 for independent unit normals.
  const double mcse = 1.0 / std::sqrt(static_cast<double>(J));
  CHECK(std::abs(rc.sigma(0, 1)) < 3.0 * mcse);
}

TEST_CASE("disjoint observation sets give zero covariance and a warning") {
  const int J = 12;
  const auto base = testing::random_cohort(6, J, Eigen::Vector2d(1, 2), Eigen::Matrix2d::Identity());
  BoolMatrix obs = BoolMatrix::Constant(J, 2, true);
  for (int j = 0; j < J; ++j) obs(j, j % 2) = false;
  const CohortData d("c", base.exposure(), base.propensity(), base.responses(), obs, testing::names(2));
  const auto r = stage1::run(d);
  CHECK(r.residual.sigma(0, 1) == 0.0);
  CHECK(r.block.gamma(0, 1) == 0.0);
  bool warned = false;
  for (const auto& w : r.residual.warnings) warned |= w.find("never jointly observed") != std::string::npos;
  CHECK(warned);
}

TEST_CASE("complete-data Gamma reduces to the OLS variance") {
  const auto d = testing::random_cohort(8, 120, Eigen::Vector3d(1, 2, 3), testing::chol(testing::exchangeable(3, 0.5)));
  const auto r = stage1::run(d);
  Eigen::Matrix3d xtx = Eigen::Matrix3d::Zero();
  for (Eigen::Index j = 0; j < d.n_individuals(); ++j) {
    const Eigen::Vector3d x(1.0, d.exposure()(j), d.propensity()(j));
    xtx += x * x.transpose();
  }
  const double inv_aa = cofactor_inverse(xtx)(1, 1);
  for (Eigen::Index k = 0; k < 3; ++k) {
    const double ols = r.fits[k].sigma2 * inv_aa;
    CHECK(std::abs(r.block.gamma(k, k) / r.block.j - ols) <= 1e-10 * ols);
    for (Eigen::Index l = 0; l < 3; ++l) {
      const double expect = r.residual.sigma(k, l) * cofactor_inverse(r.design.omega)(1, 1);
      CHECK(std::abs(r.block.gamma(k, l) - expect) <= 1e-10 * std::abs(expect));
    }
  }
  CHECK((r.block.gamma - r.block.gamma.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("full theta covariance block matches the exposure element") {
  const auto d = testing::random_cohort(9, 80, Eigen::Vector2d(1, 2), testing::chol(testing::exchangeable(2, 0.4)), 0.3);
  const auto r = stage1::run(d);
  const Eigen::Matrix3d oinv = cofactor_inverse(r.design.omega);
  const auto block = stage1::theta_covariance_block(r.residual, oinv, r.block.j, 0, 1);
  CHECK(block(1, 1) == doctest::Approx(r.block.gamma(0, 1)).epsilon(1e-10));
  const double n1 = d.n_observed(0), n2 = d.n_observed(1), n12 = d.pairwise_counts()(0, 1);
  CHECK(block(0, 2) == doctest::Approx(r.residual.sigma(0, 1) * oinv(0, 2) * r.block.j * n12 / (n1 * n2)));
}

TEST_CASE("missingness factor bound") {
  const auto d = testing::random_cohort(10, 60, Eigen::Vector3d(1, 2, 3), Eigen::Matrix3d::Identity(), 0.35);
  const auto f = stage1::missingness_factor(d.pairwise_counts());
  for (Eigen::Index k = 0; k < 3; ++k) {
    for (Eigen::Index l = 0; l < 3; ++l) {
      const double bound = 1.0 / std::max(d.n_observed(k), d.n_observed(l));
      CHECK(f(k, l) <= bound * (1.0 + 1e-15));
    }
  }
  // Endpoint 0 is complete, so every other set is nested in it.
  CHECK(f(0, 1) == doctest::Approx(1.0 / d.n_observed(0)).epsilon(1e-15));
}

TEST_CASE("scale equivariance") {
  const auto d = testing::random_cohort(12, 90, Eigen::Vector3d(1, 2, 3), testing::chol(testing::exchangeable(3, 0.5)), 0.2);
  const double c = -2.5;
  Eigen::MatrixXd y = d.responses();
  y.col(1) *= c;
  const auto r0 = stage1::run(d);
  const auto r1 = stage1::run(d.with_responses(y));
  CHECK(r1.block.b_hat(1) == doctest::Approx(c * r0.block.b_hat(1)).epsilon(1e-10));
  CHECK(r1.fits[1].sigma2 == doctest::Approx(c * c * r0.fits[1].sigma2).epsilon(1e-10));
  CHECK(r1.block.gamma(1, 1) == doctest::Approx(c * c * r0.block.gamma(1, 1)).epsilon(1e-10));
  CHECK(r1.block.gamma(0, 1) == doctest::Approx(c * r0.block.gamma(0, 1)).epsilon(1e-10));
  CHECK(r1.block.gamma(0, 2) == doctest::Approx(r0.block.gamma(0, 2)).epsilon(1e-12));
}

TEST_CASE("row order does not matter") {
  const auto d = testing::random_cohort(13, 70, Eigen::Vector3d(1, 2, 3), testing::chol(testing::exchangeable(3, 0.5)), 0.25);
  std::vector<Eigen::Index> order(70);
  std::iota(order.begin(), order.end(), 0);
  rng::Stream rs(99, 0);
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rs.next_u64() % (i + 1)]);
  const auto r0 = stage1::run(d);
  const auto r1 = stage1::run(d.permute_rows(order));
  CHECK((r0.block.b_hat - r1.block.b_hat).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((r0.block.gamma - r1.block.gamma).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(r0.block.n_pairwise == r1.block.n_pairwise);
}

TEST_CASE("zero residual covariance gives zero Gamma") {
  stage1::ResidualCovariance rc;
  rc.sigma = Eigen::Matrix2d::Identity();
  rc.n_pairwise = CountMatrix::Constant(2, 2, 10);
  const auto block = stage1::theta_covariance_block(rc, Eigen::Matrix3d::Identity(), 10.0, 0, 1);
  CHECK(block.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("resimulation: model-based covariance under MCAR missingness") {
  // Smaller than the acceptance run; same construction.
  const int J = 200, R = 2000;
  const Eigen::Matrix2d L = testing::chol(testing::exchangeable(2, 0.6));
  std::vector<double> b1(R), b2(R);
  double model = 0.0;
  for (int r = 0; r < R; ++r) {
    const auto d = testing::random_cohort(2024, J, Eigen::Vector2d(1, 1), L, 0.3, static_cast<std::uint64_t>(r));
    const auto s1 = stage1::run(d);
    b1[r] = s1.block.b_hat(0);
    b2[r] = s1.block.b_hat(1);
    model += s1.block.gamma(0, 1) / s1.block.j / R;
  }
  const double m1 = std::accumulate(b1.begin(), b1.end(), 0.0) / R;
  const double m2 = std::accumulate(b2.begin(), b2.end(), 0.0) / R;
  double cov = 0.0, m4 = 0.0;
  for (int r = 0; r < R; ++r) cov += (b1[r] - m1) * (b2[r] - m2) / (R - 1);
  for (int r = 0; r < R; ++r) {
    const double p = (b1[r] - m1) * (b2[r] - m2) - cov;
    m4 += p * p / (R - 1);
  }
  const double mcse = std::sqrt(m4 / R);
  CHECK(std::abs(cov - model) < 3.0 * mcse);
}
