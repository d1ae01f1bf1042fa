#include "hiermeta/stage2.hpp"

#include "hiermeta/error.hpp"
#include "hiermeta/scalar_search.hpp"

#include <fmt/core.h>

#include <cmath>
#include <limits>
#include <numbers>

namespace hiermeta::stage2 {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_pl_or_neg_inf(double beta, double phi, const EffectBlock& block) {
  try {
    return pseudo_loglik(beta, phi, block);
  } catch (const NumericalError&) {
    return kNegInf;
  }
}

// d/dphi of the log pseudo-likelihood: (|Psi^{-1} r|^2 - tr Psi^{-1}) / 2.
double phi_score(double beta, double phi, const EffectBlock& block) {
  const Eigen::LLT<Eigen::MatrixXd> llt(psi(block, phi));
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::quiet_NaN();
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(block.size(), block.size()));
  const Eigen::VectorXd u = inv * (block.b_hat.array() - beta).matrix();
  return 0.5 * (u.squaredNorm() - inv.trace());
}

}  // namespace

Eigen::MatrixXd psi(const EffectBlock& block, double phi) {
  Eigen::MatrixXd p = block.gamma / block.j;
  p.diagonal().array() += phi;
  return p;
}

double pseudo_loglik(double beta, double phi, const EffectBlock& block) {
  const auto K = block.size();
  const Eigen::LLT<Eigen::MatrixXd> llt(psi(block, phi));
  if (llt.info() != Eigen::Success) {
    throw NumericalError(fmt::format("Psi(phi = {}) is not positive definite", phi));
  }
  const Eigen::VectorXd resid = block.b_hat.array() - beta;
  const Eigen::VectorXd z = llt.matrixL().solve(resid);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double ll = -0.5 * (static_cast<double>(K) * std::log(2.0 * std::numbers::pi) + log_det +
                            z.squaredNorm());
  if (!std::isfinite(ll)) {
    throw NumericalError(fmt::format("pseudo-likelihood not finite at phi = {}", phi));
  }
  return ll;
}

WeightedEstimate weighted_beta(double phi, const EffectBlock& block) {
  const Eigen::VectorXd var = block.gamma.diagonal() / block.j + Eigen::VectorXd::Constant(block.size(), phi);
  for (Eigen::Index k = 0; k < var.size(); ++k) {
    if (!(var(k) > 0.0)) {
      throw NumericalError(fmt::format("variance of estimate {} is not positive ({})", k, var(k)));
    }
  }
  WeightedEstimate out;
  out.weights = var.cwiseInverse();
  out.weights /= out.weights.sum();
  out.beta = out.weights.dot(block.b_hat);
  return out;
}

WeightedEstimate gls_beta(double phi, const EffectBlock& block) {
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(psi(block, phi));
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw NumericalError(fmt::format("Psi(phi = {}) cannot be inverted", phi));
  }
  const Eigen::VectorXd u = ldlt.solve(Eigen::VectorXd::Ones(block.size()));
  const double denom = u.sum();
  if (!(std::abs(denom) > 0.0) || !std::isfinite(denom)) {
    throw NumericalError("1' Psi^{-1} 1 is zero");
  }
  WeightedEstimate out;
  out.weights = u / denom;
  out.beta = out.weights.dot(block.b_hat);
  return out;
}

double linear_variance(const Eigen::VectorXd& weights, const EffectBlock& block, double phi) {
  return weights.dot(psi(block, phi) * weights);
}

CohortPooled pool_within_cohort(const EffectBlock& block, const ConvergenceOptions& opts) {
  if (block.size() == 0) throw ValidationError("cannot pool an empty effect block");
  block.validate();

  auto beta_step = [&](double phi) {
    return opts.weights == WeightScheme::kDiagonal ? weighted_beta(phi, block)
                                                   : gls_beta(phi, block);
  };

  CohortPooled out;
  out.scheme = opts.weights;
  out.phi_max = opts.phi_max_factor * (block.gamma.diagonal() / block.j).maxCoeff();

  double phi = 0.0;
  WeightedEstimate est = beta_step(phi);
  out.trace.push_back({TracePoint::Step::kBeta, est.beta, phi, log_pl_or_neg_inf(est.beta, phi, block)});

  for (int it = 1; it <= opts.max_iterations; ++it) {
    const double beta = est.beta;
    auto profile = [&](double p) { return log_pl_or_neg_inf(beta, p, block); };
    ScalarMaximum m = golden_section_maximize(profile, 0.0, out.phi_max, opts.phi_search_tol);
    if (m.x > 0.0 && m.x < out.phi_max) {
      const double polished = polish_stationary_point([&](double p) { return phi_score(beta, p, block); }, m.x,
                                                      0.0, out.phi_max, 1e-5 * (1.0 + m.x));
      const double v = profile(polished);
      // Values within rounding of each other: trust the derivative.
      if (v >= m.value - 1e-12 * (1.0 + std::abs(m.value))) m.x = polished, m.value = v;
    }
    // Never move to a worse point than the current phi.
    const double current = profile(phi);
    if (current > m.value + 1e-13 * (1.0 + std::abs(m.value))) {
      m.x = phi;
      m.value = current;
    }
    const double phi_next = m.x;
    out.trace.push_back({TracePoint::Step::kPhi, beta, phi_next, m.value});

    est = beta_step(phi_next);
    out.trace.push_back(
        {TracePoint::Step::kBeta, est.beta, phi_next, log_pl_or_neg_inf(est.beta, phi_next, block)});

    const bool done =
        std::abs(est.beta - beta) < opts.tol_beta && std::abs(phi_next - phi) < opts.tol_phi;
    phi = phi_next;
    out.iterations = it;
    if (done) {
      out.converged = true;
      break;
    }
  }

  out.beta_hat = est.beta;
  out.phi_hat = phi;
  out.weights = est.weights;
  const double var = linear_variance(out.weights, block, phi);
  if (!(var > 0.0)) {
    throw NumericalError(fmt::format("robust variance w' Psi w = {} is not positive", var));
  }
  out.se_beta = std::sqrt(var);
  const Eigen::VectorXd diag = block.gamma.diagonal() / block.j;
  out.se_naive = std::sqrt(out.weights.cwiseAbs2().dot(diag + Eigen::VectorXd::Constant(diag.size(), phi)));
  if (out.phi_max > 0.0 && phi >= out.phi_max * (1.0 - 1e-9)) {
    out.warnings.push_back(fmt::format("phi reached its search bound {}", out.phi_max));
  }
  if (!out.converged) {
    out.warnings.push_back(fmt::format("no convergence after {} iterations", opts.max_iterations));
  }
  return out;
}

}  // namespace hiermeta::stage2
