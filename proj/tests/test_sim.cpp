#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hiermeta/error.hpp"
#include "hiermeta/sim.hpp"

#include <cmath>

using namespace hiermeta;

TEST_CASE("tau2 = 0 gives every endpoint the true effect") {
  const auto s = sim::Scenario::exchangeable(4, 0.0, 50, 1, 0.5, 3);
  Eigen::VectorXd b;
  sim::generate_dataset(s, 0, &b);
  CHECK((b.array() == 3.0).all());
}

TEST_CASE("datasets are bit-identical for the same seed and replicate") {
  const auto s = sim::Scenario::exchangeable(3, 0.25, 100, 10, 0.5, 9);
  const auto a = sim::generate_dataset(s, 4);
  const auto b = sim::generate_dataset(s, 4);
  const auto c = sim::generate_dataset(s, 5);
  CHECK(a.responses() == b.responses());
  CHECK(a.exposure() == b.exposure());
  CHECK(a.responses() != c.responses());
}

TEST_CASE("identity residual covariance gives uncorrelated endpoints") {
  const auto s = sim::Scenario::exchangeable(2, 0.0, 100000, 1, 0.0, 1);
  const auto d = sim::generate_dataset(s, 0);
  // Remove the shared regression part before correlating.
  Eigen::MatrixXd e = d.responses();
  for (Eigen::Index j = 0; j < e.rows(); ++j) {
    for (Eigen::Index k = 0; k < 2; ++k) e(j, k) -= 3.0 * d.exposure()(j) + d.propensity()(j);
  }
  const Eigen::VectorXd u = e.col(0).array() - e.col(0).mean();
  const Eigen::VectorXd v = e.col(1).array() - e.col(1).mean();
  CHECK(std::abs(u.dot(v) / std::sqrt(u.squaredNorm() * v.squaredNorm())) < 0.01);
}

TEST_CASE("one replicate leaves the empirical SE undefined") {
  const auto s = sim::Scenario::exchangeable(3, 0.25, 200, 1, 0.5, 2);
  sim::RunOptions o;
  o.methods = {sim::Method::kTwoStage};
  const auto r = sim::run_scenario(s, o);
  const auto& m = r.get(sim::Method::kTwoStage);
  CHECK(m.replicates_ok == 1);
  CHECK_FALSE(m.ese_defined());
  CHECK(std::isfinite(m.ase));
}

TEST_CASE("grid has one row per cell and method") {
  sim::GridConfig g;
  g.reps = 2;
  g.n = 60;
  sim::RunOptions o;
  o.onestage.restarts = 0;
  o.onestage.compute_se = true;
  const auto rep = sim::run_table1_grid(g, o);
  REQUIRE(rep.cells.size() == 9);
  for (const auto& c : rep.cells) CHECK(c.metrics.size() == 2);
  const auto csv = sim::grid_to_csv(rep);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 18);
  g.reps = 0;
  CHECK_THROWS_AS(sim::run_table1_grid(g, o), ValidationError);
}

TEST_CASE("results do not depend on the thread count") {
  const auto s = sim::Scenario::exchangeable(3, 0.5, 150, 40, 0.5, 17);
  sim::RunOptions one, many;
  one.threads = 1;
  many.threads = 4;
  one.onestage.restarts = many.onestage.restarts = 0;
  const auto a = sim::run_scenario(s, one);
  const auto b = sim::run_scenario(s, many);
  for (std::size_t m = 0; m < a.outcomes.size(); ++m) {
    for (std::size_t r = 0; r < a.outcomes[m].size(); ++r) {
      CHECK(a.outcomes[m][r].estimate == b.outcomes[m][r].estimate);
      CHECK(a.outcomes[m][r].se == b.outcomes[m][r].se);
    }
  }
  CHECK(a.metrics[0].cp == b.metrics[0].cp);
}

TEST_CASE("summary statistics") {
  std::vector<sim::ReplicateOutcome> o{{true, 3.1, 0.1, {}}, {true, 2.9, 0.2, {}}, {false, 0, 0, "x"}, {true, 3.6, 0.1, {}}};
  const auto m = sim::summarize(sim::Method::kTwoStage, o, 3.0);
  CHECK(m.replicates_ok == 3);
  CHECK(m.failures == 1);
  CHECK(m.ebias == doctest::Approx(0.2));
  CHECK(m.ase == doctest::Approx(0.4 / 3.0));
  CHECK(m.cp == doctest::Approx(2.0 / 3.0));
  const double mean = 9.6 / 3.0;
  const double var = ((3.1 - mean) * (3.1 - mean) + (2.9 - mean) * (2.9 - mean) + (3.6 - mean) * (3.6 - mean)) / 2.0;
  CHECK(m.ese == doctest::Approx(std::sqrt(var)));
}

TEST_CASE("scenario validation and method names") {
  auto s = sim::Scenario::exchangeable(3, 0.1, 100, 1, 0.5, 1);
  s.sigma(0, 1) = 5.0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  CHECK(sim::parse_method("one-stage") == sim::Method::kOneStage);
  CHECK(sim::method_name(sim::Method::kTwoStage) == "two-stage");
  CHECK_THROWS_AS(sim::parse_method("three"), ValidationError);
  CHECK(sim::cell_seed(42, 0) != sim::cell_seed(42, 1));
}
