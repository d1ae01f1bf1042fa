#include "hiermeta/stage1.hpp"

#include "hiermeta/error.hpp"

#include <fmt/core.h>

#include <cmath>

namespace hiermeta::stage1 {

namespace {

constexpr double kRankTolerance = 1e-10;

Eigen::Vector3d design_row(const CohortData& data, Eigen::Index j) {
  return {1.0, data.exposure()(j), data.propensity()(j)};
}

// Solves the symmetric 3x3 system through an SVD; returns false when the
// numerical rank is below 3.
bool solve_normal_equations(const Eigen::Matrix3d& xtx, const Eigen::Vector3d& xty,
                            Eigen::Vector3d& out) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(xtx, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(2) <= kRankTolerance * sv(0)) return false;
  out = svd.solve(xty);
  return true;
}

bool invert_3x3(const Eigen::Matrix3d& m, Eigen::Matrix3d& out) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(2) <= kRankTolerance * sv(0)) return false;
  out = svd.matrixV() * sv.cwiseInverse().asDiagonal() * svd.matrixU().transpose();
  out = 0.5 * (out + out.transpose());
  return true;
}

}  // namespace

EndpointFit fit_endpoint(const CohortData& data, Eigen::Index k) {
  if (k < 0 || k >= data.n_endpoints()) throw ValidationError("endpoint index out of range");
  const auto& name = data.endpoint_names()[k];
  const long n_k = data.n_observed(k);
  if (n_k < kMinObservedPerEndpoint) {
    throw ValidationError(fmt::format("endpoint '{}': insufficient data ({} observations)", name, n_k));
  }
  Eigen::Matrix3d xtx = Eigen::Matrix3d::Zero();
  Eigen::Vector3d xty = Eigen::Vector3d::Zero();
  for (Eigen::Index j = 0; j < data.n_individuals(); ++j) {
    if (!data.observed()(j, k)) continue;
    const Eigen::Vector3d x = design_row(data, j);
    xtx.noalias() += x * x.transpose();
    xty.noalias() += x * data.responses()(j, k);
  }
  EndpointFit fit;
  fit.endpoint = k;
  fit.n_observed = n_k;
  if (!solve_normal_equations(xtx, xty, fit.theta)) {
    throw NumericalError(fmt::format("endpoint '{}': singular design (exposure or propensity "
                                     "constant or collinear)",
                                     name));
  }
  double rss = 0.0;
  for (Eigen::Index j = 0; j < data.n_individuals(); ++j) {
    if (!data.observed()(j, k)) continue;
    const double r = data.responses()(j, k) - design_row(data, j).dot(fit.theta);
    rss += r * r;
  }
  fit.sigma2 = rss / static_cast<double>(n_k);
  return fit;
}

std::vector<EndpointFit> fit_endpoints(const CohortData& data) {
  std::vector<EndpointFit> fits;
  fits.reserve(static_cast<std::size_t>(data.n_endpoints()));
  for (Eigen::Index k = 0; k < data.n_endpoints(); ++k) fits.push_back(fit_endpoint(data, k));
  return fits;
}

ResidualCovariance estimate_residual_covariance(const CohortData& data,
                                                const std::vector<EndpointFit>& fits) {
  const auto J = data.n_individuals();
  const auto K = data.n_endpoints();
  if (static_cast<Eigen::Index>(fits.size()) != K) {
    throw ValidationError("residual covariance needs one fit per endpoint");
  }
  Eigen::MatrixXd resid = Eigen::MatrixXd::Zero(J, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index j = 0; j < J; ++j) {
      if (data.observed()(j, k)) {
        resid(j, k) = data.responses()(j, k) - design_row(data, j).dot(fits[k].theta);
      }
    }
  }
  // Unobserved residuals are zero, so the cross product sums only over
  // jointly observed rows.
  const Eigen::MatrixXd cross = resid.transpose() * resid;

  ResidualCovariance out;
  out.n_pairwise = data.pairwise_counts();
  out.sigma = Eigen::MatrixXd::Zero(K, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    out.sigma(k, k) = cross(k, k) / static_cast<double>(out.n_pairwise(k, k));
    for (Eigen::Index l = 0; l < k; ++l) {
      const long n_kl = out.n_pairwise(k, l);
      if (n_kl == 0) {
        out.warnings.push_back(fmt::format("endpoints '{}' and '{}' are never jointly observed; "
                                           "residual covariance set to 0",
                                           data.endpoint_names()[l], data.endpoint_names()[k]));
        continue;
      }
      const double s = cross(k, l) / static_cast<double>(n_kl);
      out.sigma(k, l) = s;
      out.sigma(l, k) = s;
    }
  }
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index l = 0; l < k; ++l) {
      const double bound = std::sqrt(out.sigma(k, k) * out.sigma(l, l));
      if (std::abs(out.sigma(k, l)) > bound * (1.0 + 1e-8)) {
        out.warnings.push_back(fmt::format(
            "residual covariance of '{}' and '{}' exceeds the Cauchy-Schwarz bound",
            data.endpoint_names()[l], data.endpoint_names()[k]));
      }
    }
  }
  return out;
}

DesignMoment design_moment(const CohortData& data) {
  DesignMoment m;
  for (Eigen::Index j = 0; j < data.n_individuals(); ++j) {
    const Eigen::Vector3d x = design_row(data, j);
    m.omega.noalias() += x * x.transpose();
  }
  m.omega /= static_cast<double>(data.n_individuals());
  return m;
}

Eigen::MatrixXd missingness_factor(const CountMatrix& n_pairwise) {
  const auto K = n_pairwise.rows();
  Eigen::MatrixXd f(K, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index l = 0; l < K; ++l) {
      f(k, l) = static_cast<double>(n_pairwise(k, l)) /
                (static_cast<double>(n_pairwise(k, k)) * static_cast<double>(n_pairwise(l, l)));
    }
  }
  return f;
}

Eigen::Matrix3d theta_covariance_block(const ResidualCovariance& rescov,
                                       const Eigen::Matrix3d& omega_inverse, double j,
                                       Eigen::Index k, Eigen::Index l) {
  const double n_kl = static_cast<double>(rescov.n_pairwise(k, l));
  const double n_k = static_cast<double>(rescov.n_pairwise(k, k));
  const double n_l = static_cast<double>(rescov.n_pairwise(l, l));
  return rescov.sigma(k, l) * omega_inverse * (j * n_kl / (n_k * n_l));
}

EffectBlock effect_covariance(const CohortData& data, const std::vector<EndpointFit>& fits,
                              const ResidualCovariance& rescov) {
  const auto K = data.n_endpoints();
  const double J = static_cast<double>(data.n_individuals());
  Eigen::Matrix3d omega_inv;
  if (!invert_3x3(design_moment(data).omega, omega_inv)) {
    throw NumericalError(fmt::format("cohort '{}': design moment matrix is singular",
                                     data.cohort_id()));
  }
  EffectBlock block;
  block.j = J;
  block.n_pairwise = rescov.n_pairwise;
  block.endpoint_names = data.endpoint_names();
  block.b_hat.resize(K);
  block.gamma.resize(K, K);
  for (Eigen::Index k = 0; k < K; ++k) {
    block.b_hat(k) = fits[k].exposure_effect();
    for (Eigen::Index l = 0; l <= k; ++l) {
      const double g = theta_covariance_block(rescov, omega_inv, J, k, l)(1, 1);
      block.gamma(k, l) = g;
      block.gamma(l, k) = g;
    }
  }
  return block;
}

Eigen::VectorXd Stage1Result::effect_se() const {
  return (block.gamma.diagonal() / block.j).cwiseSqrt();
}

Stage1Result run(const CohortData& data) {
  Stage1Result r;
  r.fits = fit_endpoints(data);
  r.residual = estimate_residual_covariance(data, r.fits);
  r.design = design_moment(data);
  r.block = effect_covariance(data, r.fits, r.residual);
  r.warnings = data.warnings();
  r.warnings.insert(r.warnings.end(), r.residual.warnings.begin(), r.residual.warnings.end());
  return r;
}

}  // namespace hiermeta::stage1
