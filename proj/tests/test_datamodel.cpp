#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hiermeta/datamodel.hpp"
#include "hiermeta/error.hpp"
#include "support.hpp"

#include <cmath>
#include <functional>
#include <string>

using namespace hiermeta;

namespace {

CsvSchema schema() {
  CsvSchema s;
  s.exposure_column = "alcohol";
  s.propensity_column = "ps";
  return s;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("complete file loads with every cell observed") {
  const std::string text =
      "alcohol,ps,wisc_viq,wisc_piq\n"
      "0.0,0.2,101,99\n"
      "0.5,0.4,95,97\n"
      "1.0,0.6,90,92\n"
      "1.5,0.7,88,85\n";
  const auto d = parse_cohort_csv(text, schema(), "seattle");
  CHECK(d.cohort_id() == "seattle");
  CHECK(d.n_individuals() == 4);
  CHECK(d.n_endpoints() == 2);
  CHECK(d.is_complete());
  CHECK(d.endpoint_names() == std::vector<std::string>{"wisc_viq", "wisc_piq"});
  CHECK(d.responses()(2, 1) == 92.0);
  CHECK(d.exposure()(3) == 1.5);
  CHECK(d.pairwise_counts()(0, 1) == 4);
}

TEST_CASE("empty cell marks one observation missing") {
  const std::string text =
      "alcohol,ps,wisc_viq,wisc_piq\n"
      "0.0,0.2,101,99\n"
      "0.5,0.4,95,\n"
      "1.0,0.6,90,92\n"
      "1.5,0.7,88,85\n"
      "2.0,0.8,80,NA\n"
      "2.5,0.9,79,81\n";
  const auto d = parse_cohort_csv(text, schema());
  CHECK_FALSE(d.observed()(1, 1));
  CHECK_FALSE(d.observed()(4, 1));
  CHECK(std::isnan(d.responses()(1, 1)));
  CHECK(d.n_observed(1) == 4);
  CHECK(d.n_observed(0) == 6);
  CHECK(d.pairwise_counts()(0, 1) == 4);
}

TEST_CASE("missing exposure names the row") {
  const std::string text =
      "alcohol,ps,y\n"
      "0.0,0.2,1\n"
      ",0.4,2\n";
  const auto msg = message_of([&] { parse_cohort_csv(text, schema()); });
  CHECK(msg.find("alcohol") != std::string::npos);
  CHECK(msg.find("line 3") != std::string::npos);
  CHECK_THROWS_AS(parse_cohort_csv(text, schema()), ValidationError);
}

TEST_CASE("ragged row is a parse error with its line number") {
  const std::string text =
      "alcohol,ps,y\n"
      "0.0,0.2,1\n"
      "0.1,0.3,2\n"
      "0.2,0.4\n";
  try {
    parse_cohort_csv(text, schema());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
}

TEST_CASE("unparseable number is a parse error") {
  const std::string text = "alcohol,ps,y\n0.0,0.2,abc\n";
  CHECK_THROWS_AS(parse_cohort_csv(text, schema()), ParseError);
}

TEST_CASE("endpoint with fewer than four observations is rejected by name") {
  const std::string text =
      "alcohol,ps,good,sparse\n"
      "0.0,0.2,1,1\n"
      "0.1,0.3,2,\n"
      "0.2,0.4,3,2\n"
      "0.3,0.5,4,3\n"
      "0.4,0.6,5,\n";
  const auto msg = message_of([&] { parse_cohort_csv(text, schema()); });
  CHECK(msg.find("sparse") != std::string::npos);
  CHECK_THROWS_AS(parse_cohort_csv(text, schema()), ValidationError);
}

TEST_CASE("schema options: endpoints, ignore, tokens, delimiter, quotes") {
  const std::string text =
      "\xEF\xBB\xBFid;alcohol;ps;\"a;b\";c;d\n"
      "1;0;0.1;1;.;9\n"
      "2;1;0.2;2;3;9\n"
      "3;2;0.3;3;4;9\n"
      "4;3;0.4;4;5;9\n"
      "5;4;0.5;5;6;9\n";
  CsvSchema s = schema();
  s.delimiter = ';';
  s.ignore_columns = {"id", "d"};
  s.missing_tokens = {"."};
  const auto d = parse_cohort_csv(text, s);
  REQUIRE(d.n_endpoints() == 2);
  CHECK(d.endpoint_names()[0] == "a;b");
  CHECK_FALSE(d.observed()(0, 1));

  s.endpoint_columns = {"c"};
  CHECK(parse_cohort_csv(text, s).n_endpoints() == 1);
  s.endpoint_columns = {"nope"};
  CHECK_THROWS_AS(parse_cohort_csv(text, s), ValidationError);
}

TEST_CASE("load_cohort_csv uses the file stem as cohort id") {
  const auto d = load_cohort_csv(std::string(HIERMETA_TEST_DATA_DIR) + "/tiny.csv", schema());
  CHECK(d.cohort_id() == "tiny");
  CHECK(d.n_individuals() == 6);
  CHECK_THROWS_AS(load_cohort_csv("/nonexistent/file.csv", schema()), ValidationError);
}

TEST_CASE("zero-overlap pair is flagged, not rejected") {
  const int J = 8;
  Eigen::MatrixXd y = Eigen::MatrixXd::Random(J, 2);
  BoolMatrix obs = BoolMatrix::Constant(J, 2, true);
  for (int j = 0; j < 4; ++j) obs(j, 1) = false;
  for (int j = 4; j < 8; ++j) obs(j, 0) = false;
  const CohortData d("c", Eigen::VectorXd::LinSpaced(J, 0, 1), Eigen::VectorXd::LinSpaced(J, 1, 0).array().sqrt(),
                     y, obs, testing::names(2));
  CHECK(d.pairwise_counts()(0, 1) == 0);
  CHECK(d.warnings().size() == 1);
}

TEST_CASE("standardize applies the affine map with divisor n-1") {
  // Endpoints need four observations, so {0, 1, 2} is padded with its mean.
  Eigen::MatrixXd y(5, 1);
  y << 0, 1, 2, 1, 7;
  BoolMatrix obs = BoolMatrix::Constant(5, 1, true);
  obs(4, 0) = false;
  const CohortData d("c", Eigen::VectorXd::LinSpaced(5, 0, 1), Eigen::VectorXd::Zero(5), y, obs, {"e"});
  const auto [s, rec] = standardize_responses(d);
  const double sd = std::sqrt(2.0 / 3.0);
  CHECK(rec.original_mean(0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(rec.original_sd(0) == doctest::Approx(sd).epsilon(1e-14));
  CHECK(s.responses()(0, 0) == doctest::Approx(100.0 - 15.0 / sd).epsilon(1e-12));
  CHECK(s.responses()(1, 0) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(s.responses()(2, 0) == doctest::Approx(100.0 + 15.0 / sd).epsilon(1e-12));
  CHECK(std::isnan(s.responses()(4, 0)));
}

TEST_CASE("standardized endpoints have mean 100 and SD 15 on observed cells") {
  const auto d = testing::random_cohort(3, 200, Eigen::Vector3d(1, 2, 3),
                                        testing::chol(testing::exchangeable(3, 0.4, 25.0)), 0.3);
  const auto [s, rec] = standardize_responses(d);
  for (Eigen::Index k = 0; k < 3; ++k) {
    double sum = 0.0, ss = 0.0;
    long n = 0;
    for (Eigen::Index j = 0; j < s.n_individuals(); ++j) {
      if (!s.observed()(j, k)) continue;
      sum += s.responses()(j, k);
      ++n;
    }
    const double mean = sum / n;
    for (Eigen::Index j = 0; j < s.n_individuals(); ++j) {
      if (s.observed()(j, k)) ss += (s.responses()(j, k) - mean) * (s.responses()(j, k) - mean);
    }
    CHECK(std::abs(mean - 100.0) < 1e-10);
    CHECK(std::abs(std::sqrt(ss / (n - 1)) - 15.0) < 1e-10);
  }
  CHECK((s.observed().array() == d.observed().array()).all());
}

TEST_CASE("standardization round trip and identity case") {
  const auto d = testing::random_cohort(5, 60, Eigen::Vector2d(1, -1), Eigen::Matrix2d::Identity() * 7.0, 0.2);
  const auto [s, rec] = standardize_responses(d);
  const auto back = rec.invert(s);
  for (Eigen::Index j = 0; j < d.n_individuals(); ++j) {
    for (Eigen::Index k = 0; k < 2; ++k) {
      if (!d.observed()(j, k)) continue;
      CHECK(std::abs(back.responses()(j, k) - d.responses()(j, k)) <= 1e-9 * std::abs(d.responses()(j, k)));
    }
  }
  const auto [twice, rec2] = standardize_responses(s);
  CHECK((twice.responses() - s.responses()).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(rec2.original_mean(0) == doctest::Approx(100.0));
}

TEST_CASE("constant endpoint cannot be standardized") {
  Eigen::MatrixXd y = Eigen::MatrixXd::Constant(5, 2, 5.0);
  y.col(0) << 1, 2, 3, 4, 5;
  const CohortData d("c", Eigen::VectorXd::LinSpaced(5, 0, 1), Eigen::VectorXd::Zero(5), y,
                     BoolMatrix::Constant(5, 2, true), {"ok", "flat"});
  const auto msg = message_of([&] { standardize_responses(d); });
  CHECK(msg.find("flat") != std::string::npos);
}

TEST_CASE("standardizing after deletion uses observed cells only") {
  const auto full = testing::random_cohort(9, 50, Eigen::Vector2d(1, 1), Eigen::Matrix2d::Identity(), 0.0);
  BoolMatrix obs = full.observed();
  obs(7, 1) = false;
  const CohortData deleted(full.cohort_id(), full.exposure(), full.propensity(), full.responses(), obs,
                           full.endpoint_names());
  const auto [s, rec] = standardize_responses(deleted);
  Eigen::VectorXd kept(49);
  for (int j = 0, i = 0; j < 50; ++j) {
    if (j != 7) kept(i++) = full.responses()(j, 1);
  }
  CHECK(rec.original_mean(1) == doctest::Approx(kept.mean()).epsilon(1e-13));
  CHECK(std::isnan(s.responses()(7, 1)));
}

TEST_CASE("construction is idempotent and rows/endpoints can be permuted") {
  const auto d = testing::random_cohort(11, 30, Eigen::Vector3d(1, 2, 3), Eigen::Matrix3d::Identity(), 0.1);
  const CohortData again(d.cohort_id(), d.exposure(), d.propensity(), d.responses(), d.observed(),
                         d.endpoint_names());
  CHECK(again.pairwise_counts() == d.pairwise_counts());
  CHECK((again.observed().array() == d.observed().array()).all());
  const auto sel = d.select_endpoints({2, 0});
  CHECK(sel.endpoint_names() == std::vector<std::string>{"y3", "y1"});
  CHECK(sel.n_observed(0) == d.n_observed(2));
}

TEST_CASE("effect block validation") {
  EffectBlock b;
  b.b_hat = Eigen::Vector2d(1, 2);
  b.gamma = Eigen::Matrix2d::Identity();
  b.j = 10;
  CHECK_NOTHROW(b.validate());
  b.gamma(0, 1) = 0.5;
  CHECK_THROWS_AS(b.validate(), ValidationError);
  b.gamma(1, 0) = 0.5;
  CHECK_NOTHROW(b.validate());
  b.gamma(1, 1) = 0.0;
  CHECK_THROWS_AS(b.validate(), ValidationError);
}
