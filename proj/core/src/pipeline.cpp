#include "hiermeta/pipeline.hpp"

#include "hiermeta/error.hpp"
#include "hiermeta/rng.hpp"

#include <cmath>

namespace hiermeta::pipeline {

namespace {

template <class F>
void guarded(CohortAnalysis& out, const std::string& method, F&& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    out.failures.push_back({out.cohort_id, method, e.what(), "validation"});
  } catch (const Error& e) {
    out.failures.push_back({out.cohort_id, method, e.what(), "numerical"});
  }
}

struct CohortSpec {
  const char* id;
  std::vector<const char*> endpoints;
  double effect;
  double raw_mean;
  double raw_sd;
};

const std::vector<CohortSpec>& specs() {
  static const std::vector<CohortSpec> s{
      {"Seattle", {"WISC Verbal IQ", "WISC Performance IQ"}, -1.5, 100.0, 15.0},
      {"Atlanta 1", {"K-ABC Simultaneous processing", "K-ABC Sequential processing"}, -4.0, 100.0, 15.0},
      {"Atlanta 2", {"DAS Verbal", "DAS Nonverbal", "DAS Spatial"}, -2.0, 50.0, 10.0},
      {"Pittsburgh 1",
       {"SB Verbal reasoning", "SB Abstract reasoning", "SB Quantitative reasoning", "SB Short-term memory"},
       -4.5, 50.0, 8.0},
      {"Pittsburgh 2",
       {"SB Verbal reasoning", "SB Abstract reasoning", "SB Quantitative reasoning", "SB Short-term memory"},
       -1.5, 50.0, 8.0},
      {"Detroit", {"WISC Verbal IQ", "WISC Performance IQ", "WISC Freedom from distractibility"}, -5.0, 10.0, 3.0},
  };
  return s;
}

}  // namespace

bool MetaAnalysis::any_unconverged() const {
  for (const auto& c : cohorts) {
    if (c.two_stage && !c.two_stage->converged) return true;
    if (c.one_stage && !c.one_stage->converged) return true;
  }
  if (two_stage_global && !two_stage_global->converged) return true;
  if (one_stage_global && !one_stage_global->converged) return true;
  return false;
}

CohortAnalysis analyze_cohort(const CohortData& data, const AnalysisOptions& opts) {
  CohortAnalysis out;
  out.cohort_id = data.cohort_id();
  std::optional<CohortData> scaled;
  guarded(out, "stage1", [&] {
    if (opts.standardize) {
      auto [s, record] = standardize_responses(data);
      scaled.emplace(std::move(s));
      out.standardization = std::move(record);
    } else {
      scaled.emplace(data);
    }
    out.stage1 = stage1::run(*scaled);
  });
  if (!scaled) return out;
  if (opts.two_stage && out.stage1) {
    guarded(out, "two-stage", [&] { out.two_stage = stage2::pool_within_cohort(out.stage1->block, opts.stage2); });
  }
  if (opts.one_stage) {
    guarded(out, "one-stage", [&] { out.one_stage = onestage::fit_onestage(*scaled, opts.onestage); });
  }
  return out;
}

std::vector<stage3::CohortEstimate> two_stage_estimates(const std::vector<CohortAnalysis>& cohorts) {
  std::vector<stage3::CohortEstimate> out;
  for (const auto& c : cohorts) {
    if (c.two_stage) out.push_back({c.cohort_id, c.two_stage->beta_hat, c.two_stage->se_beta * c.two_stage->se_beta});
  }
  return out;
}

std::vector<stage3::CohortEstimate> one_stage_estimates(const std::vector<CohortAnalysis>& cohorts) {
  std::vector<stage3::CohortEstimate> out;
  for (const auto& c : cohorts) {
    if (c.one_stage && std::isfinite(c.one_stage->se_tilde)) {
      out.push_back({c.cohort_id, c.one_stage->beta_tilde, c.one_stage->se_tilde * c.one_stage->se_tilde});
    }
  }
  return out;
}

MetaAnalysis analyze_cohorts(const std::vector<CohortData>& cohorts, const AnalysisOptions& opts) {
  MetaAnalysis out;
  for (const auto& c : cohorts) {
    out.cohorts.push_back(analyze_cohort(c, opts));
    const auto& f = out.cohorts.back().failures;
    out.failures.insert(out.failures.end(), f.begin(), f.end());
  }
  auto pool = [&](const std::vector<stage3::CohortEstimate>& est, const std::string& method,
                  std::optional<stage3::GlobalPooled>& dst) {
    if (est.empty()) {
      out.failures.push_back({"global", method, "no cohort produced an estimate", "validation"});
      return;
    }
    try {
      dst = stage3::pool_across_cohorts(est, opts.stage3);
    } catch (const ValidationError& e) {
      out.failures.push_back({"global", method, e.what(), "validation"});
    } catch (const Error& e) {
      out.failures.push_back({"global", method, e.what(), "numerical"});
    }
  };
  if (opts.two_stage) pool(two_stage_estimates(out.cohorts), "two-stage", out.two_stage_global);
  if (opts.one_stage) pool(one_stage_estimates(out.cohorts), "one-stage", out.one_stage_global);
  return out;
}

std::vector<CohortData> synthetic_cohorts(const FixtureOptions& opts) {
  if (opts.n_per_cohort < 10) throw ValidationError("fixture needs at least 10 individuals per cohort");
  if (!(opts.missing_rate >= 0.0 && opts.missing_rate < 0.5)) {
    throw ValidationError("fixture missing rate must lie in [0, 0.5)");
  }
  constexpr double kResidualSd = 13.0;
  constexpr double kResidualCorrelation = 0.6;
  constexpr double kEndpointSd = 0.75;

  std::vector<CohortData> out;
  const auto& all = specs();
  for (std::size_t c = 0; c < all.size(); ++c) {
    const auto& spec = all[c];
    rng::Stream stream(opts.seed, c);
    const int J = opts.n_per_cohort;
    const int K = static_cast<int>(spec.endpoints.size());

    Eigen::VectorXd effect(K), slope(K);
    for (int k = 0; k < K; ++k) {
      effect(k) = spec.effect + kEndpointSd * stream.normal();
      slope(k) = -6.0 + 2.0 * stream.normal();
    }
    Eigen::MatrixXd corr = Eigen::MatrixXd::Constant(K, K, kResidualCorrelation);
    corr.diagonal().setOnes();
    const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(corr * kResidualSd * kResidualSd).matrixL();

    Eigen::VectorXd a(J), s(J);
    Eigen::MatrixXd y(J, K);
    BoolMatrix observed = BoolMatrix::Constant(J, K, true);
    Eigen::VectorXd e(K);
    for (int j = 0; j < J; ++j) {
      const double u = stream.normal();
      a(j) = stream.uniform() < 0.3 ? 0.0 : std::exp(-1.6 + 0.8 * stream.normal());
      s(j) = 1.0 / (1.0 + std::exp(-(-1.0 + 2.0 * a(j) + 0.8 * u)));
      for (int k = 0; k < K; ++k) e(k) = stream.normal();
      const Eigen::VectorXd err = L * e;
      for (int k = 0; k < K; ++k) {
        const double iq = 100.0 + effect(k) * a(j) + slope(k) * s(j) + err(k);
        y(j, k) = spec.raw_mean + spec.raw_sd * (iq - 100.0) / 15.0;
        if (k > 0 && stream.uniform() < opts.missing_rate) observed(j, k) = false;
      }
    }
    std::vector<std::string> names(spec.endpoints.begin(), spec.endpoints.end());
    out.emplace_back(spec.id, std::move(a), std::move(s), std::move(y), std::move(observed), std::move(names));
  }
  return out;
}

}  // namespace hiermeta::pipeline
