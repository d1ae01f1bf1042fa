#pragma once

#include "hiermeta/datamodel.hpp"
#include "hiermeta/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace testing {

inline std::vector<std::string> names(int K) {
  std::vector<std::string> out;
  for (int k = 0; k < K; ++k) out.push_back("y" + std::to_string(k + 1));
  return out;
}

/// Linear-model cohort: Y_jk = alpha_k + b_k A_j + g_k S_j + e_jk with
/// residual Cholesky factor L and cells deleted with probability `missing`
/// (endpoint 0 is never deleted).
inline hiermeta::CohortData random_cohort(std::uint64_t seed, int J, const Eigen::VectorXd& b,
                                          const Eigen::MatrixXd& L, double missing = 0.0,
                                          std::uint64_t stream = 0) {
  hiermeta::rng::Stream rs(seed, stream);
  const int K = static_cast<int>(b.size());
  Eigen::VectorXd a(J), s(J), e(K);
  Eigen::MatrixXd y(J, K);
  hiermeta::BoolMatrix obs = hiermeta::BoolMatrix::Constant(J, K, true);
  for (int j = 0; j < J; ++j) {
    a(j) = rs.normal(1.0, 0.7);
    s(j) = rs.uniform();
    for (int k = 0; k < K; ++k) e(k) = rs.normal();
    const Eigen::VectorXd err = L * e;
    for (int k = 0; k < K; ++k) {
      y(j, k) = 1.0 + 0.5 * k + b(k) * a(j) + (2.0 - k) * s(j) + err(k);
      if (k > 0 && rs.uniform() < missing) obs(j, k) = false;
    }
  }
  return hiermeta::CohortData("test", a, s, y, obs, names(K));
}

inline Eigen::MatrixXd exchangeable(int K, double rho, double var = 1.0) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(K, K, rho * var);
  m.diagonal().setConstant(var);
  return m;
}

inline Eigen::MatrixXd chol(const Eigen::MatrixXd& m) { return Eigen::LLT<Eigen::MatrixXd>(m).matrixL(); }

/// Random symmetric positive definite matrix with diagonal near `scale`.
inline Eigen::MatrixXd random_spd(hiermeta::rng::Stream& rs, int K, double scale, double corr = 0.6) {
  Eigen::MatrixXd g(K, K);
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) g(i, j) = rs.normal();
  }
  Eigen::MatrixXd m = g * g.transpose() / K;
  const Eigen::VectorXd d = m.diagonal().cwiseSqrt().cwiseInverse();
  m = d.asDiagonal() * m * d.asDiagonal();
  m = corr * m + (1.0 - corr) * Eigen::MatrixXd::Identity(K, K);
  for (int i = 0; i < K; ++i) {
    const double s = scale * (0.5 + rs.uniform());
    m.row(i) *= std::sqrt(s);
    m.col(i) *= std::sqrt(s);
  }
  return m;
}

}  // namespace testing
