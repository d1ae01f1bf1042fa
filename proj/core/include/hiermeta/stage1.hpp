#pragma once

#include "hiermeta/datamodel.hpp"

#include <string>
#include <vector>

namespace hiermeta::stage1 {

/// Residual covariance across endpoints. Off-diagonal entries come from the
/// rows where both endpoints are observed, so the matrix need not satisfy
/// Cauchy-Schwarz; such pairs are listed in `warnings`.
struct ResidualCovariance {
  Eigen::MatrixXd sigma;
  CountMatrix n_pairwise;
  std::vector<std::string> warnings;
};

/// Omega_hat = sum_j X_j X_j' / J over all individuals, X_j = (1, A_j, S_j).
struct DesignMoment {
  Eigen::Matrix3d omega = Eigen::Matrix3d::Zero();
};

/// Least squares over the rows where endpoint `k` is observed. The residual
/// variance uses divisor n_k (maximum likelihood).
///
/// Throws ValidationError when n_k < 4 and NumericalError when the design is
/// rank deficient (singular values below 1e-10 of the largest).
EndpointFit fit_endpoint(const CohortData& data, Eigen::Index k);

std::vector<EndpointFit> fit_endpoints(const CohortData& data);

/// sigma_kk = RSS_k / n_k, sigma_kl = sum over jointly observed rows of the
/// residual products / n_kl. Pairs with n_kl = 0 get 0 and a warning.
ResidualCovariance estimate_residual_covariance(const CohortData& data,
                                                const std::vector<EndpointFit>& fits);

DesignMoment design_moment(const CohortData& data);

/// n_kl / (n_k n_l), the scalar missingness adjustment applied to each pair.
Eigen::MatrixXd missingness_factor(const CountMatrix& n_pairwise);

/// Full 3x3 covariance of sqrt(J)(theta_k - theta_k0) and sqrt(J)(theta_l - theta_l0):
/// sigma_kl * Omega^{-1} * J n_kl / (n_k n_l).
Eigen::Matrix3d theta_covariance_block(const ResidualCovariance& rescov,
                                       const Eigen::Matrix3d& omega_inverse, double j,
                                       Eigen::Index k, Eigen::Index l);

/// Assembles the effect block: exposure coefficients and the exposure
/// element of every theta covariance block. Throws NumericalError when
/// Omega_hat is singular.
EffectBlock effect_covariance(const CohortData& data, const std::vector<EndpointFit>& fits,
                              const ResidualCovariance& rescov);

struct Stage1Result {
  std::vector<EndpointFit> fits;
  ResidualCovariance residual;
  DesignMoment design;
  EffectBlock block;
  std::vector<std::string> warnings;

  /// sqrt(J^{-1} Gamma_kk), the model-based standard error of B_hat_k.
  Eigen::VectorXd effect_se() const;
};

Stage1Result run(const CohortData& data);

}  // namespace hiermeta::stage1
