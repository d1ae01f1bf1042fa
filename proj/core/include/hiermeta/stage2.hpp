#pragma once

#include "hiermeta/datamodel.hpp"

#include <string>
#include <vector>

namespace hiermeta::stage2 {

/// How the beta-step combines the K estimates.
enum class WeightScheme {
  /// Inverse of diag(J^{-1} Gamma_kk + phi). Weights are always nonnegative.
  kDiagonal,
  /// Generalized least squares with the full Psi(phi)^{-1}. Weights can be
  /// negative; exposed as a diagnostic.
  kFullInverse,
};

struct ConvergenceOptions {
  double tol_beta = 1e-8;
  double tol_phi = 1e-8;
  int max_iterations = 500;
  /// Width at which the phi line search stops.
  double phi_search_tol = 1e-10;
  /// phi is searched on [0, phi_max_factor * max_k J^{-1} Gamma_kk].
  double phi_max_factor = 100.0;
  WeightScheme weights = WeightScheme::kDiagonal;
};

struct TracePoint {
  enum class Step { kBeta, kPhi };
  Step step = Step::kBeta;
  double beta = 0.0;
  double phi = 0.0;
  double log_pl = 0.0;
};

struct CohortPooled {
  double beta_hat = 0.0;
  double se_beta = 0.0;
  /// se from the diagonal of Psi only, for comparison with `se_beta`.
  double se_naive = 0.0;
  double phi_hat = 0.0;
  double phi_max = 0.0;
  Eigen::VectorXd weights;
  int iterations = 0;
  bool converged = false;
  WeightScheme scheme = WeightScheme::kDiagonal;
  std::vector<TracePoint> trace;
  std::vector<std::string> warnings;
};

struct WeightedEstimate {
  double beta = 0.0;
  Eigen::VectorXd weights;
};

/// Psi(phi) = J^{-1} Gamma + phi I.
Eigen::MatrixXd psi(const EffectBlock& block, double phi);

/// Log Gaussian pseudo-likelihood of B_hat ~ N(beta 1, Psi(phi)).
/// Throws NumericalError when Psi(phi) is not positive definite.
double pseudo_loglik(double beta, double phi, const EffectBlock& block);

/// Inverse-variance weights w_k proportional to 1 / (J^{-1} Gamma_kk + phi).
/// Throws NumericalError when a diagonal variance is not positive.
WeightedEstimate weighted_beta(double phi, const EffectBlock& block);

/// Full-matrix weights Psi^{-1} 1 / (1' Psi^{-1} 1). Throws NumericalError
/// when Psi(phi) is singular.
WeightedEstimate gls_beta(double phi, const EffectBlock& block);

/// w' Psi(phi) w: the variance of the linear combination w' B_hat.
double linear_variance(const Eigen::VectorXd& weights, const EffectBlock& block, double phi);

/// Alternates beta- and phi-steps from phi = 0 until both changes fall below
/// their tolerances. Non-convergence is reported through `converged`.
CohortPooled pool_within_cohort(const EffectBlock& block, const ConvergenceOptions& opts = {});

}  // namespace hiermeta::stage2
