#pragma once

#include "hiermeta/datamodel.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hiermeta::onestage {

/// Parameters of the joint model
///   Y_jk = alpha_k + B_k A_j + gamma_k S_j + E_jk,
///   B_k ~ N(beta, phi) independently, shared by every individual,
///   E_j ~ N(0, Sigma).
struct Params {
  Eigen::VectorXd alpha;
  Eigen::VectorXd gamma;
  double beta = 0.0;
  double phi = 0.0;
  Eigen::MatrixXd sigma;
};

/// Exact marginal log-likelihood of all observed cells after integrating out
/// B. Cells of the same endpoint share B_k, so the stacked covariance is
/// blockdiag_j(Sigma[O_j, O_j]) + phi * Z Z' with Z_(jk),k = A_j.
///
/// Throws NumericalError when Sigma (restricted to an observed pattern) is
/// not positive definite or phi < 0.
double marginal_loglik(const Params& params, const CohortData& data);

struct Options {
  /// Random restarts in addition to the warm start.
  int restarts = 5;
  /// Restart spread: each start scales the warm-start parameters by a
  /// factor drawn uniformly from [1 - spread, 1 + spread].
  double restart_spread = 0.5;
  std::uint64_t seed = 20240601;
  int max_endpoints = 12;
  int max_iterations = 1000;
  double gradient_tol = 1e-5;
  /// Pin phi (e.g. at 0) instead of estimating it.
  std::optional<double> fixed_phi;
  /// Skip the finite-difference standard error (used by fast paths).
  bool compute_se = true;
};

struct OneStageFit {
  double beta_tilde = 0.0;
  /// From the observed information: curvature of the profile log-likelihood
  /// in beta (Schur complement of a central-difference Hessian).
  double se_tilde = 0.0;
  /// sqrt of [(X' V^{-1} X)^{-1}]_beta at the optimum, ignoring variance
  /// parameter uncertainty.
  double se_model = 0.0;
  double phi_tilde = 0.0;
  Eigen::MatrixXd sigma_tilde;
  /// (alpha_1, tau_2..tau_K, gamma_1, zeta_2..zeta_K), tau_r = alpha_r - alpha_1,
  /// zeta_r = gamma_r - gamma_1.
  Eigen::VectorXd fixed_effects;
  Eigen::VectorXd alpha;
  Eigen::VectorXd gamma;
  double loglik = 0.0;
  bool converged = false;
  int restarts_run = 0;
  int evaluations = 0;
  std::vector<std::string> endpoint_names;

  Params params() const { return {alpha, gamma, beta_tilde, phi_tilde, sigma_tilde}; }
};

/// Maximum likelihood fit. Fixed effects are profiled out by generalized
/// least squares; (Sigma, phi) are searched by BFGS over a log-Cholesky
/// factor of Sigma and sqrt(phi), started from the two-stage estimates and
/// from `restarts` perturbed copies.
OneStageFit fit_onestage(const CohortData& data, const Options& opts = {});

}  // namespace hiermeta::onestage
