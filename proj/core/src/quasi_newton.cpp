#include "hiermeta/quasi_newton.hpp"

#include <cmath>
#include <limits>

namespace hiermeta {

Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double rel_step, int* evaluations) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * (1.0 + std::abs(x(i)));
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  if (evaluations) *evaluations += static_cast<int>(2 * x.size());
  return g;
}

Eigen::MatrixXd numeric_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                                const Eigen::VectorXd& x, double rel_step) {
  const auto n = x.size();
  Eigen::VectorXd h(n);
  for (Eigen::Index i = 0; i < n; ++i) h(i) = rel_step * (1.0 + std::abs(x(i)));
  Eigen::MatrixXd H(n, n);
  const double f0 = f(x);
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    xp(i) = x(i) + h(i);
    const double fp = f(xp);
    xp(i) = x(i) - h(i);
    const double fm = f(xp);
    xp(i) = x(i);
    H(i, i) = (fp - 2.0 * f0 + fm) / (h(i) * h(i));
    for (Eigen::Index j = 0; j < i; ++j) {
      auto at = [&](double si, double sj) {
        xp(i) = x(i) + si * h(i);
        xp(j) = x(j) + sj * h(j);
        const double v = f(xp);
        xp(i) = x(i);
        xp(j) = x(j);
        return v;
      };
      const double v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h(i) * h(j));
      H(i, j) = v;
      H(j, i) = v;
    }
  }
  return H;
}

QuasiNewtonResult minimize_bfgs(const std::function<double(const Eigen::VectorXd&)>& f,
                                Eigen::VectorXd x0, const QuasiNewtonOptions& opts) {
  const auto n = x0.size();
  QuasiNewtonResult r;
  r.x = std::move(x0);
  r.f = f(r.x);
  r.evaluations = 1;
  if (!std::isfinite(r.f)) return r;

  Eigen::VectorXd g = numeric_gradient(f, r.x, opts.fd_step, &r.evaluations);
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);
  bool fresh = true;

  for (r.iterations = 0; r.iterations < opts.max_iterations; ++r.iterations) {
    r.gradient_norm = g.lpNorm<Eigen::Infinity>();
    if (r.gradient_norm < opts.gradient_tol) {
      r.converged = true;
      break;
    }
    Eigen::VectorXd dir = -Hinv * g;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      Hinv.setIdentity();
      fresh = true;
      dir = -g;
      slope = -g.squaredNorm();
    }
    if (fresh) {
      // Keep the first trial step modest in parameter space.
      const double len = dir.lpNorm<Eigen::Infinity>();
      if (len > 1.0) {
        dir /= len;
        slope /= len;
      }
    }

    double step = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = r.x + step * dir;
      f_new = f(x_new);
      ++r.evaluations;
      if (std::isfinite(f_new) && f_new <= r.f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!fresh) {
        Hinv.setIdentity();
        fresh = true;
        continue;
      }
      break;
    }

    const Eigen::VectorXd g_new = numeric_gradient(f, x_new, opts.fd_step, &r.evaluations);
    const Eigen::VectorXd s = x_new - r.x;
    const Eigen::VectorXd y = g_new - g;
    const double improvement = r.f - f_new;
    r.x = x_new;
    g = g_new;
    const double f_old = r.f;
    r.f = f_new;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) Hinv *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) +
             rho * s * s.transpose();
      fresh = false;
    }
    if (improvement < opts.f_rel_tol * (1.0 + std::abs(f_old))) {
      r.gradient_norm = g.lpNorm<Eigen::Infinity>();
      r.converged = true;
      ++r.iterations;
      break;
    }
  }
  r.gradient_norm = g.lpNorm<Eigen::Infinity>();
  return r;
}

}  // namespace hiermeta
