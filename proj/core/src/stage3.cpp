#include "hiermeta/stage3.hpp"

#include "hiermeta/error.hpp"
#include "hiermeta/scalar_search.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace hiermeta::stage3 {

namespace {

struct Weighted {
  double beta = 0.0;
  double total = 0.0;
  Eigen::VectorXd weights;
};

Weighted inverse_variance(const std::vector<CohortEstimate>& est, double eta2) {
  Weighted w;
  w.weights.resize(static_cast<Eigen::Index>(est.size()));
  for (std::size_t i = 0; i < est.size(); ++i) {
    w.weights(static_cast<Eigen::Index>(i)) = 1.0 / (est[i].variance + eta2);
  }
  w.total = w.weights.sum();
  w.weights /= w.total;
  for (std::size_t i = 0; i < est.size(); ++i) {
    w.beta += w.weights(static_cast<Eigen::Index>(i)) * est[i].beta;
  }
  return w;
}

}  // namespace

double pseudo_loglik(double beta, double eta2, const std::vector<CohortEstimate>& estimates) {
  double ll = 0.0;
  for (const auto& e : estimates) {
    const double v = e.variance + eta2;
    if (!(v > 0.0)) return -std::numeric_limits<double>::infinity();
    const double r = e.beta - beta;
    ll -= 0.5 * (std::log(2.0 * std::numbers::pi * v) + r * r / v);
  }
  return ll;
}

double profile_loglik(double eta2, const std::vector<CohortEstimate>& estimates) {
  for (const auto& e : estimates) {
    if (!(e.variance + eta2 > 0.0)) return -std::numeric_limits<double>::infinity();
  }
  return pseudo_loglik(inverse_variance(estimates, eta2).beta, eta2, estimates);
}

double dersimonian_laird(const std::vector<CohortEstimate>& estimates, double* q) {
  const Weighted fe = inverse_variance(estimates, 0.0);
  double q_stat = 0.0;
  double sum_w = 0.0;
  double sum_w2 = 0.0;
  for (const auto& e : estimates) {
    const double w = 1.0 / e.variance;
    q_stat += w * (e.beta - fe.beta) * (e.beta - fe.beta);
    sum_w += w;
    sum_w2 += w * w;
  }
  if (q) *q = q_stat;
  const double df = static_cast<double>(estimates.size()) - 1.0;
  const double denom = sum_w - sum_w2 / sum_w;
  if (!(denom > 0.0)) return 0.0;
  return std::max(0.0, (q_stat - df) / denom);
}

GlobalPooled pool_across_cohorts(const std::vector<CohortEstimate>& estimates, const Options& opts) {
  if (estimates.empty()) throw ValidationError("no cohort estimates to pool");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  double max_v = 0.0;
  for (const auto& e : estimates) {
    if (!std::isfinite(e.beta)) {
      throw ValidationError(fmt::format("cohort '{}': estimate is not finite", e.cohort_id));
    }
    if (!(e.variance > 0.0) || !std::isfinite(e.variance)) {
      throw ValidationError(
          fmt::format("cohort '{}': variance must be positive, got {}", e.cohort_id, e.variance));
    }
    lo = std::min(lo, e.beta);
    hi = std::max(hi, e.beta);
    max_v = std::max(max_v, e.variance);
  }
  const double eta2_max = std::max(opts.eta2_max_factor * max_v, (hi - lo) * (hi - lo));

  GlobalPooled out;
  out.inputs = estimates;
  double eta2 = 0.0;
  Weighted w = inverse_variance(estimates, eta2);
  out.trace.push_back({stage2::TracePoint::Step::kBeta, w.beta, eta2, pseudo_loglik(w.beta, eta2, estimates)});
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const double beta = w.beta;
    auto f = [&](double e2) { return pseudo_loglik(beta, e2, estimates); };
    ScalarMaximum m = golden_section_maximize(f, 0.0, eta2_max, opts.eta2_search_tol);
    if (m.x > 0.0 && m.x < eta2_max) {
      auto score = [&](double e2) {
        double g = 0.0;
        for (const auto& e : estimates) {
          const double t = e.variance + e2;
          g += (e.beta - beta) * (e.beta - beta) / (t * t) - 1.0 / t;
        }
        return 0.5 * g;
      };
      const double polished = polish_stationary_point(score, m.x, 0.0, eta2_max, 1e-5 * (1.0 + m.x));
      const double v = f(polished);
      if (v >= m.value - 1e-12 * (1.0 + std::abs(m.value))) m.x = polished, m.value = v;
    }
    const double current = f(eta2);
    if (current > m.value + 1e-13 * (1.0 + std::abs(m.value))) {
      m.x = eta2;
      m.value = current;
    }
    out.trace.push_back({stage2::TracePoint::Step::kPhi, beta, m.x, m.value});
    w = inverse_variance(estimates, m.x);
    out.trace.push_back({stage2::TracePoint::Step::kBeta, w.beta, m.x, pseudo_loglik(w.beta, m.x, estimates)});
    const bool done = std::abs(w.beta - beta) < opts.tol_beta && std::abs(m.x - eta2) < opts.tol_eta2;
    eta2 = m.x;
    out.iterations = it;
    if (done) {
      out.converged = true;
      break;
    }
  }

  out.beta_global = w.beta;
  out.eta2_hat = eta2;
  out.cohort_weights = w.weights;
  out.se_global = 1.0 / std::sqrt(w.total);
  out.log_pl = pseudo_loglik(w.beta, eta2, estimates);
  out.eta2_dersimonian_laird = dersimonian_laird(estimates, &out.q_statistic);

  // Central second difference of the profile log-likelihood. eta^2 may step
  // below zero as long as every V_i + eta^2 stays positive.
  double min_v = std::numeric_limits<double>::infinity();
  double mean_v = 0.0;
  for (const auto& e : estimates) {
    min_v = std::min(min_v, e.variance);
    mean_v += e.variance / static_cast<double>(estimates.size());
  }
  const double h = std::min(1e-4 * (eta2 + mean_v), 0.5 * (eta2 + min_v));
  const double curvature = (profile_loglik(eta2 + h, estimates) - 2.0 * profile_loglik(eta2, estimates) +
                            profile_loglik(eta2 - h, estimates)) /
                           (h * h);
  out.se_eta2 = curvature < 0.0 ? 1.0 / std::sqrt(-curvature)
                                : std::numeric_limits<double>::quiet_NaN();
  return out;
}

}  // namespace hiermeta::stage3
