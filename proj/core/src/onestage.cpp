#include "hiermeta/onestage.hpp"

#include "hiermeta/error.hpp"
#include "hiermeta/quasi_newton.hpp"
#include "hiermeta/rng.hpp"
#include "hiermeta/stage1.hpp"
#include "hiermeta/stage2.hpp"

#include <fmt/core.h>

#include <cmath>
#include <limits>
#include <map>
#include <numbers>

namespace hiermeta::onestage {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Sufficient statistics of the individuals sharing one missingness pattern.
struct PatternStats {
  std::vector<Eigen::Index> obs;
  double n = 0, s1 = 0, s2 = 0, a1 = 0, as = 0, a2 = 0;
  Eigen::VectorXd y1, sy, ay;
  Eigen::MatrixXd yy;
};

std::vector<PatternStats> collect_patterns(const CohortData& data) {
  const auto K = data.n_endpoints();
  std::map<std::uint32_t, PatternStats> groups;
  for (Eigen::Index j = 0; j < data.n_individuals(); ++j) {
    std::uint32_t mask = 0;
    for (Eigen::Index k = 0; k < K; ++k) {
      if (data.observed()(j, k)) mask |= (1u << k);
    }
    if (mask == 0) continue;
    auto [it, inserted] = groups.try_emplace(mask);
    PatternStats& g = it->second;
    if (inserted) {
      for (Eigen::Index k = 0; k < K; ++k) {
        if (mask & (1u << k)) g.obs.push_back(k);
      }
      const auto m = static_cast<Eigen::Index>(g.obs.size());
      g.y1 = g.sy = g.ay = Eigen::VectorXd::Zero(m);
      g.yy = Eigen::MatrixXd::Zero(m, m);
    }
    const double a = data.exposure()(j);
    const double s = data.propensity()(j);
    Eigen::VectorXd y(static_cast<Eigen::Index>(g.obs.size()));
    for (std::size_t i = 0; i < g.obs.size(); ++i) {
      y(static_cast<Eigen::Index>(i)) = data.responses()(j, g.obs[i]);
    }
    g.n += 1;
    g.s1 += s;
    g.s2 += s * s;
    g.a1 += a;
    g.as += a * s;
    g.a2 += a * a;
    g.y1 += y;
    g.sy += s * y;
    g.ay += a * y;
    g.yy.noalias() += y * y.transpose();
  }
  std::vector<PatternStats> out;
  for (auto& [mask, g] : groups) out.push_back(std::move(g));
  return out;
}

// Quadratic forms in R^{-1} = blockdiag(Sigma[O_j, O_j]^{-1}) and the
// random-slope design Z.
struct Accumulated {
  Eigen::MatrixXd xrx;  // p x p
  Eigen::VectorXd xry;  // p
  double yry = 0.0;
  Eigen::MatrixXd c;    // K x K, Z' R^{-1} Z
  Eigen::MatrixXd zrx;  // K x p
  Eigen::VectorXd zry;  // K
  double logdet_r = 0.0;
  double n_cells = 0.0;
};

bool accumulate(const std::vector<PatternStats>& patterns, const Eigen::MatrixXd& sigma,
                Accumulated& acc) {
  const auto K = sigma.rows();
  const auto p = 2 * K + 1;
  acc.xrx = Eigen::MatrixXd::Zero(p, p);
  acc.xry = Eigen::VectorXd::Zero(p);
  acc.yry = 0.0;
  acc.c = Eigen::MatrixXd::Zero(K, K);
  acc.zrx = Eigen::MatrixXd::Zero(K, p);
  acc.zry = Eigen::VectorXd::Zero(K);
  acc.logdet_r = 0.0;
  acc.n_cells = 0.0;
  const Eigen::Index bcol = 2 * K;

  Eigen::MatrixXd pk(K, K);
  Eigen::VectorXd pk1(K);
  for (const auto& g : patterns) {
    const auto m = static_cast<Eigen::Index>(g.obs.size());
    Eigen::MatrixXd sub(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index b = 0; b < m; ++b) sub(a, b) = sigma(g.obs[a], g.obs[b]);
    }
    const Eigen::LLT<Eigen::MatrixXd> llt(sub);
    if (llt.info() != Eigen::Success) return false;
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    if (!std::isfinite(logdet)) return false;
    const Eigen::MatrixXd P = llt.solve(Eigen::MatrixXd::Identity(m, m));
    const Eigen::VectorXd p1 = P.rowwise().sum();

    pk.setZero();
    pk1.setZero();
    Eigen::VectorXd py1 = Eigen::VectorXd::Zero(K), psy = Eigen::VectorXd::Zero(K),
                    pay = Eigen::VectorXd::Zero(K);
    const Eigen::VectorXd Py1 = P * g.y1, Psy = P * g.sy, Pay = P * g.ay;
    for (Eigen::Index a = 0; a < m; ++a) {
      const auto ka = g.obs[a];
      pk1(ka) = p1(a);
      py1(ka) = Py1(a);
      psy(ka) = Psy(a);
      pay(ka) = Pay(a);
      for (Eigen::Index b = 0; b < m; ++b) pk(ka, g.obs[b]) = P(a, b);
    }

    acc.xrx.block(0, 0, K, K) += g.n * pk;
    acc.xrx.block(0, K, K, K) += g.s1 * pk;
    acc.xrx.block(K, 0, K, K) += g.s1 * pk;
    acc.xrx.block(K, K, K, K) += g.s2 * pk;
    acc.xrx.block(0, bcol, K, 1) += g.a1 * pk1;
    acc.xrx.block(K, bcol, K, 1) += g.as * pk1;
    acc.xrx.block(bcol, 0, 1, K) += g.a1 * pk1.transpose();
    acc.xrx.block(bcol, K, 1, K) += g.as * pk1.transpose();
    acc.xrx(bcol, bcol) += g.a2 * p1.sum();

    acc.xry.segment(0, K) += py1;
    acc.xry.segment(K, K) += psy;
    acc.xry(bcol) += Pay.sum();
    acc.yry += (P.cwiseProduct(g.yy)).sum();

    acc.c += g.a2 * pk;
    acc.zrx.block(0, 0, K, K) += g.a1 * pk;
    acc.zrx.block(0, K, K, K) += g.as * pk;
    acc.zrx.col(bcol) += g.a2 * pk1;
    acc.zry += pay;

    acc.logdet_r += g.n * logdet;
    acc.n_cells += g.n * static_cast<double>(m);
  }
  return true;
}

// Quadratic forms in V^{-1} = R^{-1} - phi R^{-1} Z M^{-1} Z' R^{-1},
// M = I + phi Z' R^{-1} Z.
struct Marginal {
  Eigen::MatrixXd xvx;
  Eigen::VectorXd xvy;
  double yvy = 0.0;
  double logdet_v = 0.0;
  double n_cells = 0.0;
};

bool marginalize(const Accumulated& acc, double phi, Marginal& out) {
  out.n_cells = acc.n_cells;
  if (phi == 0.0) {
    out.xvx = acc.xrx;
    out.xvy = acc.xry;
    out.yvy = acc.yry;
    out.logdet_v = acc.logdet_r;
    return true;
  }
  Eigen::MatrixXd M = phi * acc.c;
  M.diagonal().array() += 1.0;
  const Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) return false;
  const Eigen::MatrixXd mzx = llt.solve(acc.zrx);
  const Eigen::VectorXd mzy = llt.solve(acc.zry);
  out.xvx = acc.xrx - phi * acc.zrx.transpose() * mzx;
  out.xvy = acc.xry - phi * acc.zrx.transpose() * mzy;
  out.yvy = acc.yry - phi * acc.zry.dot(mzy);
  out.logdet_v = acc.logdet_r + 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return std::isfinite(out.logdet_v);
}

double gaussian_loglik(const Marginal& mg, double quad) {
  return -0.5 * (mg.n_cells * std::log(2.0 * std::numbers::pi) + mg.logdet_v + quad);
}

double quad_at(const Marginal& mg, const Eigen::VectorXd& b) {
  return mg.yvy - 2.0 * b.dot(mg.xvy) + b.dot(mg.xvx * b);
}

// Variance parameterization: lower-triangular factor of Sigma with log
// diagonal (row-major), then sqrt(phi) unless phi is pinned.
struct Layout {
  Eigen::Index K = 0;
  bool free_phi = true;

  Eigen::Index n_sigma() const { return K * (K + 1) / 2; }
  Eigen::Index size() const { return n_sigma() + (free_phi ? 1 : 0); }

  Eigen::MatrixXd sigma(const Eigen::VectorXd& theta) const {
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(K, K);
    Eigen::Index t = 0;
    for (Eigen::Index i = 0; i < K; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) L(i, j) = (i == j) ? std::exp(theta(t++)) : theta(t++);
    }
    return L * L.transpose();
  }

  double phi(const Eigen::VectorXd& theta, double pinned) const {
    if (!free_phi) return pinned;
    const double t = theta(n_sigma());
    return t * t;
  }

  Eigen::VectorXd encode(const Eigen::MatrixXd& sigma, double phi) const {
    Eigen::VectorXd theta(size());
    const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    const Eigen::MatrixXd L = llt.matrixL();
    Eigen::Index t = 0;
    for (Eigen::Index i = 0; i < K; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) theta(t++) = (i == j) ? std::log(L(i, i)) : L(i, j);
    }
    if (free_phi) theta(t) = std::sqrt(std::max(phi, 0.0));
    return theta;
  }
};

struct ProfileResult {
  double loglik = -kInf;
  Eigen::VectorXd b;
  Marginal mg;
};

bool profile(const std::vector<PatternStats>& patterns, const Eigen::MatrixXd& sigma, double phi,
             ProfileResult& out) {
  Accumulated acc;
  if (!accumulate(patterns, sigma, acc)) return false;
  if (!marginalize(acc, phi, out.mg)) return false;
  const Eigen::LLT<Eigen::MatrixXd> llt(out.mg.xvx);
  if (llt.info() != Eigen::Success) return false;
  out.b = llt.solve(out.mg.xvy);
  out.loglik = gaussian_loglik(out.mg, out.mg.yvy - out.b.dot(out.mg.xvy));
  return std::isfinite(out.loglik);
}

// Log-likelihood with beta held fixed and the other fixed effects profiled.
double loglik_fixed_beta(const std::vector<PatternStats>& patterns, const Eigen::MatrixXd& sigma,
                         double phi, double beta) {
  Accumulated acc;
  Marginal mg;
  if (!accumulate(patterns, sigma, acc) || !marginalize(acc, phi, mg)) return -kInf;
  const auto q = mg.xvx.rows() - 1;
  const Eigen::LLT<Eigen::MatrixXd> llt(mg.xvx.topLeftCorner(q, q));
  if (llt.info() != Eigen::Success) return -kInf;
  Eigen::VectorXd b(q + 1);
  b.head(q) = llt.solve(mg.xvy.head(q) - mg.xvx.topRightCorner(q, 1) * beta);
  b(q) = beta;
  return gaussian_loglik(mg, quad_at(mg, b));
}

Eigen::VectorXd pack_fixed(const Params& p) {
  const auto K = p.alpha.size();
  Eigen::VectorXd b(2 * K + 1);
  b << p.alpha, p.gamma, p.beta;
  return b;
}

}  // namespace

double marginal_loglik(const Params& params, const CohortData& data) {
  const auto K = data.n_endpoints();
  if (params.alpha.size() != K || params.gamma.size() != K || params.sigma.rows() != K ||
      params.sigma.cols() != K) {
    throw ValidationError("one-stage parameters do not match the number of endpoints");
  }
  if (!(params.phi >= 0.0)) throw NumericalError("phi must be nonnegative");
  if (K > 31) throw ValidationError("too many endpoints for the one-stage model");
  Accumulated acc;
  Marginal mg;
  if (!accumulate(collect_patterns(data), params.sigma, acc)) {
    throw NumericalError("Sigma is not positive definite on an observed pattern");
  }
  if (!marginalize(acc, params.phi, mg)) throw NumericalError("marginal covariance is not positive definite");
  return gaussian_loglik(mg, quad_at(mg, pack_fixed(params)));
}

OneStageFit fit_onestage(const CohortData& data, const Options& opts) {
  const auto K = data.n_endpoints();
  if (K < 1) throw ValidationError("one-stage fit needs at least one endpoint");
  if (K > opts.max_endpoints) {
    throw ValidationError(fmt::format("one-stage fit has {} endpoints ({} variance parameters); "
                                      "the cap is {} endpoints",
                                      K, K * (K + 1) / 2 + 1, opts.max_endpoints));
  }
  if (opts.fixed_phi && !(*opts.fixed_phi >= 0.0)) throw ValidationError("fixed phi must be >= 0");

  // Two-stage warm start. fit_endpoints also checks per-endpoint rank.
  const stage1::Stage1Result s1 = stage1::run(data);
  Eigen::MatrixXd sigma0 = s1.residual.sigma;
  if (Eigen::LLT<Eigen::MatrixXd>(sigma0).info() != Eigen::Success) {
    sigma0 = Eigen::MatrixXd(s1.residual.sigma.diagonal().asDiagonal());
  }
  for (Eigen::Index k = 0; k < K; ++k) {
    if (!(sigma0(k, k) > 0.0)) sigma0(k, k) = 1e-8;
  }
  const double mean_sampling_var = (s1.block.gamma.diagonal() / s1.block.j).mean();
  double phi0 = 0.0;
  if (opts.fixed_phi) {
    phi0 = *opts.fixed_phi;
  } else {
    try {
      phi0 = stage2::pool_within_cohort(s1.block).phi_hat;
    } catch (const Error&) {
      phi0 = 0.0;
    }
  }

  const auto patterns = collect_patterns(data);
  const Layout layout{K, !opts.fixed_phi.has_value()};
  const double pinned = opts.fixed_phi.value_or(0.0);
  int evaluations = 0;
  auto objective = [&](const Eigen::VectorXd& theta) {
    ++evaluations;
    ProfileResult pr;
    if (!profile(patterns, layout.sigma(theta), layout.phi(theta, pinned), pr)) return kInf;
    return -pr.loglik;
  };

  QuasiNewtonOptions qn;
  qn.max_iterations = opts.max_iterations;
  qn.gradient_tol = opts.gradient_tol;

  const Eigen::VectorXd warm = layout.encode(sigma0, phi0);
  QuasiNewtonResult best = minimize_bfgs(objective, warm, qn);
  int runs = 1;

  // Restarts perturb the factor entries and sqrt(phi); a zero phi start is
  // replaced by a small positive base so the restarts explore phi > 0.
  Eigen::VectorXd base = warm;
  if (layout.free_phi && base(layout.n_sigma()) == 0.0) {
    base(layout.n_sigma()) = std::sqrt(0.5 * std::max(mean_sampling_var, 1e-12));
  }
  for (int r = 0; r < opts.restarts; ++r) {
    rng::Stream stream(opts.seed, static_cast<std::uint64_t>(r));
    Eigen::VectorXd start = base;
    for (Eigen::Index i = 0, t = 0; i < K; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j, ++t) {
        const double factor = 1.0 + opts.restart_spread * (2.0 * stream.uniform() - 1.0);
        // Diagonal entries are stored on the log scale.
        start(t) = (i == j) ? base(t) + std::log(factor) : base(t) * factor;
      }
    }
    if (layout.free_phi) {
      const auto t = layout.n_sigma();
      start(t) = base(t) * (1.0 + opts.restart_spread * (2.0 * stream.uniform() - 1.0));
    }
    QuasiNewtonResult res = minimize_bfgs(objective, start, qn);
    ++runs;
    if (std::isfinite(res.f) && (!std::isfinite(best.f) || res.f < best.f)) best = std::move(res);
  }
  if (!std::isfinite(best.f)) {
    throw NumericalError(fmt::format("cohort '{}': one-stage likelihood could not be evaluated",
                                     data.cohort_id()));
  }

  OneStageFit fit;
  fit.endpoint_names = data.endpoint_names();
  fit.restarts_run = runs;
  fit.sigma_tilde = layout.sigma(best.x);
  fit.phi_tilde = layout.phi(best.x, pinned);
  ProfileResult pr;
  if (!profile(patterns, fit.sigma_tilde, fit.phi_tilde, pr)) {
    throw NumericalError("one-stage optimum is not a valid parameter point");
  }
  fit.loglik = pr.loglik;
  fit.alpha = pr.b.segment(0, K);
  fit.gamma = pr.b.segment(K, K);
  fit.beta_tilde = pr.b(2 * K);
  fit.fixed_effects.resize(2 * K);
  fit.fixed_effects(0) = fit.alpha(0);
  fit.fixed_effects(K) = fit.gamma(0);
  for (Eigen::Index r = 1; r < K; ++r) {
    fit.fixed_effects(r) = fit.alpha(r) - fit.alpha(0);
    fit.fixed_effects(K + r) = fit.gamma(r) - fit.gamma(0);
  }
  fit.converged = best.converged;
  {
    const Eigen::MatrixXd cov = pr.mg.xvx.inverse();
    fit.se_model = std::sqrt(cov(2 * K, 2 * K));
  }

  fit.se_tilde = fit.se_model;
  if (opts.compute_se) {
    // Hessian of l(beta, theta) with alpha and gamma profiled; the Schur
    // complement of the variance block is the profile curvature in beta.
    Eigen::VectorXd z(best.x.size() + 1);
    z << fit.beta_tilde, best.x;
    auto neg_ll = [&](const Eigen::VectorXd& v) {
      const Eigen::VectorXd theta = v.tail(v.size() - 1);
      return -loglik_fixed_beta(patterns, layout.sigma(theta), layout.phi(theta, pinned), v(0));
    };
    const Eigen::MatrixXd info = numeric_hessian(neg_ll, z, 1e-4);
    const auto d = info.rows() - 1;
    double schur = info(0, 0);
    if (d > 0) {
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info.bottomRightCorner(d, d));
      const Eigen::VectorXd ev = es.eigenvalues();
      const double cutoff = 1e-8 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
      const Eigen::VectorXd u = es.eigenvectors().transpose() * info.bottomLeftCorner(d, 1);
      for (Eigen::Index i = 0; i < d; ++i) {
        if (ev(i) > cutoff) schur -= u(i) * u(i) / ev(i);
      }
    }
    evaluations += static_cast<int>((d + 1) * (d + 1) * 2 + 1);
    if (schur > 0.0 && std::isfinite(schur)) fit.se_tilde = 1.0 / std::sqrt(schur);
  }
  fit.evaluations = evaluations;
  return fit;
}

}  // namespace hiermeta::onestage
