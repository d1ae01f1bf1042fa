#pragma once

#include "hiermeta/stage2.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace hiermeta::stage3 {

/// One cohort's pooled estimate and its sampling variance.
struct CohortEstimate {
  std::string cohort_id;
  double beta = 0.0;
  double variance = 0.0;
};

struct Options {
  double tol_beta = 1e-8;
  double tol_eta2 = 1e-8;
  int max_iterations = 500;
  double eta2_search_tol = 1e-10;
  /// eta^2 is searched on [0, max(factor * max_i V_i, (max beta_i - min beta_i)^2)].
  double eta2_max_factor = 100.0;
};

struct GlobalPooled {
  double beta_global = 0.0;
  double se_global = 0.0;
  double eta2_hat = 0.0;
  /// From the curvature of the profile log-likelihood in eta^2; NaN when the
  /// curvature is not negative.
  double se_eta2 = 0.0;
  /// Method-of-moments (DerSimonian-Laird) eta^2, for comparison.
  double eta2_dersimonian_laird = 0.0;
  double q_statistic = 0.0;
  double log_pl = 0.0;
  Eigen::VectorXd cohort_weights;
  std::vector<CohortEstimate> inputs;
  int iterations = 0;
  bool converged = false;
  std::vector<stage2::TracePoint> trace;
};

/// Log pseudo-likelihood of independent N(beta, V_i + eta2) estimates.
double pseudo_loglik(double beta, double eta2, const std::vector<CohortEstimate>& estimates);

/// Same likelihood maximized over beta for fixed eta2.
double profile_loglik(double eta2, const std::vector<CohortEstimate>& estimates);

double dersimonian_laird(const std::vector<CohortEstimate>& estimates, double* q = nullptr);

/// Random-effects pooling across cohorts: alternating inverse-variance beta
/// steps and maximum-likelihood eta^2 steps, started from eta^2 = 0.
///
/// Throws ValidationError on empty input or a non-positive variance.
GlobalPooled pool_across_cohorts(const std::vector<CohortEstimate>& estimates,
                                 const Options& opts = {});

}  // namespace hiermeta::stage3
