#pragma once

#include "hiermeta/datamodel.hpp"
#include "hiermeta/onestage.hpp"
#include "hiermeta/stage1.hpp"
#include "hiermeta/stage2.hpp"
#include "hiermeta/stage3.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hiermeta::pipeline {

struct AnalysisOptions {
  /// Rescale every endpoint to mean 100, SD 15 before fitting.
  bool standardize = true;
  bool two_stage = true;
  bool one_stage = false;
  stage2::ConvergenceOptions stage2;
  onestage::Options onestage;
  stage3::Options stage3;
};

struct Failure {
  std::string cohort_id;
  std::string method;
  std::string message;
  /// "validation" or "numerical".
  std::string kind;
};

/// Everything computed for one cohort. A method that failed leaves its
/// optional empty and adds an entry to `failures`.
struct CohortAnalysis {
  std::string cohort_id;
  std::optional<StandardizationRecord> standardization;
  std::optional<stage1::Stage1Result> stage1;
  std::optional<stage2::CohortPooled> two_stage;
  std::optional<onestage::OneStageFit> one_stage;
  std::vector<Failure> failures;
};

struct MetaAnalysis {
  std::vector<CohortAnalysis> cohorts;
  std::optional<stage3::GlobalPooled> two_stage_global;
  std::optional<stage3::GlobalPooled> one_stage_global;
  std::vector<Failure> failures;

  /// True when some fit that produced a result did not converge.
  bool any_unconverged() const;
};

CohortAnalysis analyze_cohort(const CohortData& data, const AnalysisOptions& opts = {});

/// Cohorts are analyzed independently; a failing cohort is listed and the
/// rest are still pooled.
MetaAnalysis analyze_cohorts(const std::vector<CohortData>& cohorts, const AnalysisOptions& opts = {});

/// Cross-cohort inputs from the cohorts that produced a two-stage (or
/// one-stage) estimate.
std::vector<stage3::CohortEstimate> two_stage_estimates(const std::vector<CohortAnalysis>& cohorts);
std::vector<stage3::CohortEstimate> one_stage_estimates(const std::vector<CohortAnalysis>& cohorts);

struct FixtureOptions {
  std::uint64_t seed = 2024;
  int n_per_cohort = 400;
  /// Fraction of endpoint cells deleted completely at random (never the
  /// first endpoint). 0 gives the complete balanced fixture.
  double missing_rate = 0.0;
};

/// Six synthetic cohorts laid out like the IQ application: 2, 2, 3, 4, 4
/// and 3 endpoints, exposure in ounces of absolute alcohol per day and a
/// propensity score in (0, 1). Responses are on raw subtest scales.
std::vector<CohortData> synthetic_cohorts(const FixtureOptions& opts = {});

}  // namespace hiermeta::pipeline
