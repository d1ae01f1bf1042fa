#pragma once

#include "hiermeta/config.hpp"
#include "hiermeta/datamodel.hpp"
#include "hiermeta/onestage.hpp"
#include "hiermeta/stage2.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hiermeta::sim {

/// One cell of the Monte Carlo design. Outcomes follow
///   Y_jk = alpha_k + beta_k X_j + gamma_k Z_j + E_jk,  beta_k ~ N(beta_true, tau2),
/// with X_j, Z_j standard normal and E_j ~ N(0, sigma).
struct Scenario {
  int K = 3;
  double tau2 = 0.25;
  int n = 500;
  int reps = 1000;
  double beta_true = 3.0;
  double alpha = 0.0;
  double gamma = 1.0;
  Eigen::MatrixXd sigma;
  std::uint64_t seed = 1;

  /// Unit variances with common correlation `rho`.
  static Scenario exchangeable(int K, double tau2, int n, int reps, double rho, std::uint64_t seed);

  /// Throws ValidationError on K < 1, n < 4, reps < 1, tau2 < 0 or a sigma
  /// that is not symmetric positive definite.
  void validate() const;
};

enum class Method { kTwoStage, kOneStage };

std::string method_name(Method m);
/// Accepts "two-stage" and "one-stage"; throws ValidationError otherwise.
Method parse_method(const std::string& s);

/// Draws replicate `rep`. The stream is keyed by (scenario seed, rep), so
/// datasets do not depend on execution order. Also returns the drawn
/// endpoint effects when `effects` is non-null.
CohortData generate_dataset(const Scenario& s, int rep, Eigen::VectorXd* effects = nullptr);

struct MethodMetrics {
  Method method = Method::kTwoStage;
  int replicates_ok = 0;
  int failures = 0;
  double ebias = 0.0;
  double ase = 0.0;
  /// NaN when fewer than two replicates succeeded.
  double ese = 0.0;
  double cp = 0.0;
  double ebias_mcse = 0.0;
  double ase_mcse = 0.0;
  double ese_mcse = 0.0;
  double cp_mcse = 0.0;
  bool ese_defined() const;
};

struct ReplicateOutcome {
  bool ok = false;
  double estimate = 0.0;
  double se = 0.0;
  std::string error;
};

struct ScenarioResult {
  Scenario scenario;
  std::vector<MethodMetrics> metrics;
  /// Per method, per replicate; kept for diagnostics.
  std::vector<std::vector<ReplicateOutcome>> outcomes;

  const MethodMetrics& get(Method m) const;
};

struct RunOptions {
  std::vector<Method> methods{Method::kTwoStage, Method::kOneStage};
  /// 0 uses the hardware concurrency.
  unsigned threads = 0;
  stage2::ConvergenceOptions stage2;
  onestage::Options onestage;
};

/// Aggregates per-replicate outcomes in index order.
MethodMetrics summarize(Method method, const std::vector<ReplicateOutcome>& outcomes,
                        double beta_true);

ScenarioResult run_scenario(const Scenario& s, const RunOptions& opts = {});

/// Settings for the (tau2, K) grid.
struct GridConfig {
  std::vector<double> tau2{0.10, 0.25, 0.50};
  std::vector<int> K{10, 5, 3};
  int n = 500;
  int reps = 1000;
  double rho = 0.5;
  double beta_true = 3.0;
  double alpha = 0.0;
  double gamma = 1.0;
  std::uint64_t seed = 42;

  /// Reads keys tau2, K, n, reps, rho, beta, alpha, gamma, seed.
  static GridConfig from_config(const KeyValueConfig& cfg);
};

/// Seed for grid cell `index` derived from the grid seed.
std::uint64_t cell_seed(std::uint64_t grid_seed, std::uint64_t index);

struct GridReport {
  GridConfig config;
  std::vector<ScenarioResult> cells;
};

/// Runs every (tau2, K) cell; throws ValidationError when reps < 1.
GridReport run_table1_grid(const GridConfig& grid, const RunOptions& opts = {});

/// One row per (cell, method); NaN values are written as NA.
std::string grid_to_csv(const GridReport& report);
/// Aligned text table in the layout of the published results table.
std::string grid_to_text(const GridReport& report);

}  // namespace hiermeta::sim
