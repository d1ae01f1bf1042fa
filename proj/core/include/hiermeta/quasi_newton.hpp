#pragma once

#include <Eigen/Dense>

#include <functional>

namespace hiermeta {

struct QuasiNewtonOptions {
  int max_iterations = 1000;
  /// Converged when the infinity norm of the gradient drops below this.
  double gradient_tol = 1e-6;
  /// ... or when an iteration improves f by less than f_rel_tol * (1 + |f|).
  double f_rel_tol = 1e-14;
  /// Relative central-difference step.
  double fd_step = 1e-6;
};

struct QuasiNewtonResult {
  Eigen::VectorXd x;
  double f = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// BFGS minimization with central-difference gradients and Armijo
/// backtracking. `f` may return +inf outside its domain; the line search
/// backs away from such points.
QuasiNewtonResult minimize_bfgs(const std::function<double(const Eigen::VectorXd&)>& f,
                                Eigen::VectorXd x0, const QuasiNewtonOptions& opts = {});

/// Central-difference gradient with per-coordinate step `rel_step * (1 + |x_i|)`.
Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double rel_step, int* evaluations = nullptr);

/// Central-difference Hessian with per-coordinate step `rel_step * (1 + |x_i|)`.
Eigen::MatrixXd numeric_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                                const Eigen::VectorXd& x, double rel_step);

}  // namespace hiermeta
