#include "hiermeta/sim.hpp"

#include "hiermeta/error.hpp"
#include "hiermeta/rng.hpp"
#include "hiermeta/stage1.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

namespace hiermeta::sim {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt_num(double v, int digits = 6) {
  if (!std::isfinite(v)) return "NA";
  return fmt::format("{:.{}f}", v, digits);
}

}  // namespace

Scenario Scenario::exchangeable(int K, double tau2, int n, int reps, double rho, std::uint64_t seed) {
  Scenario s;
  s.K = K;
  s.tau2 = tau2;
  s.n = n;
  s.reps = reps;
  s.seed = seed;
  s.sigma = Eigen::MatrixXd::Constant(std::max(K, 0), std::max(K, 0), rho);
  s.sigma.diagonal().setOnes();
  return s;
}

void Scenario::validate() const {
  if (K < 1) throw ValidationError("scenario needs K >= 1");
  if (n < 4) throw ValidationError("scenario needs n >= 4");
  if (reps < 1) throw ValidationError("scenario needs reps >= 1");
  if (!(tau2 >= 0.0)) throw ValidationError("scenario needs tau2 >= 0");
  if (sigma.rows() != K || sigma.cols() != K) throw ValidationError("scenario sigma must be K x K");
  if (!sigma.isApprox(sigma.transpose(), 1e-12)) throw ValidationError("scenario sigma is not symmetric");
  if (Eigen::LLT<Eigen::MatrixXd>(sigma).info() != Eigen::Success) {
    throw ValidationError("scenario sigma is not positive definite");
  }
}

std::string method_name(Method m) { return m == Method::kTwoStage ? "two-stage" : "one-stage"; }

Method parse_method(const std::string& s) {
  if (s == "two-stage" || s == "two_stage") return Method::kTwoStage;
  if (s == "one-stage" || s == "one_stage") return Method::kOneStage;
  throw ValidationError(fmt::format("unknown method '{}'", s));
}

CohortData generate_dataset(const Scenario& s, int rep, Eigen::VectorXd* effects) {
  s.validate();
  rng::Stream stream(s.seed, static_cast<std::uint64_t>(rep));
  const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(s.sigma).matrixL();
  Eigen::VectorXd beta(s.K);
  const double tau = std::sqrt(s.tau2);
  for (int k = 0; k < s.K; ++k) beta(k) = s.tau2 == 0.0 ? s.beta_true : stream.normal(s.beta_true, tau);

  Eigen::VectorXd x(s.n), z(s.n);
  Eigen::MatrixXd y(s.n, s.K);
  Eigen::VectorXd e(s.K);
  for (int j = 0; j < s.n; ++j) {
    x(j) = stream.normal();
    z(j) = stream.normal();
    for (int k = 0; k < s.K; ++k) e(k) = stream.normal();
    const Eigen::VectorXd err = L * e;
    for (int k = 0; k < s.K; ++k) y(j, k) = s.alpha + beta(k) * x(j) + s.gamma * z(j) + err(k);
  }
  if (effects) *effects = beta;
  std::vector<std::string> names;
  for (int k = 0; k < s.K; ++k) names.push_back(fmt::format("y{}", k + 1));
  return CohortData(fmt::format("sim-K{}-rep{}", s.K, rep), std::move(x), std::move(z), std::move(y),
                    BoolMatrix::Constant(s.n, s.K, true), std::move(names));
}

bool MethodMetrics::ese_defined() const { return std::isfinite(ese); }

const MethodMetrics& ScenarioResult::get(Method m) const {
  for (const auto& mm : metrics) {
    if (mm.method == m) return mm;
  }
  throw ValidationError(fmt::format("scenario result has no {} metrics", method_name(m)));
}

MethodMetrics summarize(Method method, const std::vector<ReplicateOutcome>& outcomes, double beta_true) {
  MethodMetrics m;
  m.method = method;
  double sum_est = 0.0, sum_se = 0.0;
  int covered = 0;
  for (const auto& o : outcomes) {
    if (!o.ok) {
      ++m.failures;
      continue;
    }
    ++m.replicates_ok;
    sum_est += o.estimate;
    sum_se += o.se;
    if (std::abs(o.estimate - beta_true) <= 1.96 * o.se) ++covered;
  }
  const int n = m.replicates_ok;
  if (n == 0) {
    m.ebias = m.ase = m.ese = m.cp = kNaN;
    m.ebias_mcse = m.ase_mcse = m.ese_mcse = m.cp_mcse = kNaN;
    return m;
  }
  const double mean_est = sum_est / n;
  m.ebias = mean_est - beta_true;
  m.ase = sum_se / n;
  m.cp = static_cast<double>(covered) / n;
  m.cp_mcse = std::sqrt(m.cp * (1.0 - m.cp) / n);
  if (n < 2) {
    m.ese = m.ebias_mcse = m.ase_mcse = m.ese_mcse = kNaN;
    return m;
  }
  double ss_est = 0.0, ss_se = 0.0;
  for (const auto& o : outcomes) {
    if (!o.ok) continue;
    ss_est += (o.estimate - mean_est) * (o.estimate - mean_est);
    ss_se += (o.se - m.ase) * (o.se - m.ase);
  }
  m.ese = std::sqrt(ss_est / (n - 1));
  m.ebias_mcse = m.ese / std::sqrt(static_cast<double>(n));
  m.ase_mcse = std::sqrt(ss_se / (n - 1)) / std::sqrt(static_cast<double>(n));
  m.ese_mcse = m.ese / std::sqrt(2.0 * (n - 1));
  return m;
}

ScenarioResult run_scenario(const Scenario& s, const RunOptions& opts) {
  s.validate();
  if (opts.methods.empty()) throw ValidationError("no methods requested");
  const std::size_t reps = static_cast<std::size_t>(s.reps);
  ScenarioResult result;
  result.scenario = s;
  result.outcomes.assign(opts.methods.size(), std::vector<ReplicateOutcome>(reps));

  auto work = [&](std::size_t rep) {
    CohortData data = generate_dataset(s, static_cast<int>(rep));
    for (std::size_t mi = 0; mi < opts.methods.size(); ++mi) {
      ReplicateOutcome& out = result.outcomes[mi][rep];
      try {
        if (opts.methods[mi] == Method::kTwoStage) {
          const auto s1 = stage1::run(data);
          const auto pooled = stage2::pool_within_cohort(s1.block, opts.stage2);
          out.ok = pooled.converged;
          out.estimate = pooled.beta_hat;
          out.se = pooled.se_beta;
          if (!pooled.converged) out.error = "not converged";
        } else {
          const auto fit = onestage::fit_onestage(data, opts.onestage);
          out.ok = fit.converged && std::isfinite(fit.se_tilde);
          out.estimate = fit.beta_tilde;
          out.se = fit.se_tilde;
          if (!out.ok) out.error = "not converged";
        }
      } catch (const Error& e) {
        out.ok = false;
        out.error = e.what();
      }
    }
  };

  unsigned threads = opts.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : opts.threads;
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, reps));
  if (threads <= 1) {
    for (std::size_t r = 0; r < reps; ++r) work(r);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t r = next++; r < reps; r = next++) work(r);
      });
    }
    for (auto& th : pool) th.join();
  }

  for (std::size_t mi = 0; mi < opts.methods.size(); ++mi) {
    result.metrics.push_back(summarize(opts.methods[mi], result.outcomes[mi], s.beta_true));
  }
  return result;
}

GridConfig GridConfig::from_config(const KeyValueConfig& cfg) {
  GridConfig g;
  if (cfg.contains("tau2")) g.tau2 = cfg.get_double_list("tau2");
  if (cfg.contains("K")) {
    g.K.clear();
    for (double k : cfg.get_double_list("K")) {
      if (k != std::floor(k)) throw ValidationError("config key 'K' must hold integers");
      g.K.push_back(static_cast<int>(k));
    }
  }
  if (auto v = cfg.get_int("n")) g.n = static_cast<int>(*v);
  if (auto v = cfg.get_int("reps")) g.reps = static_cast<int>(*v);
  if (auto v = cfg.get_double("rho")) g.rho = *v;
  if (auto v = cfg.get_double("beta")) g.beta_true = *v;
  if (auto v = cfg.get_double("alpha")) g.alpha = *v;
  if (auto v = cfg.get_double("gamma")) g.gamma = *v;
  if (auto v = cfg.get_int("seed")) g.seed = static_cast<std::uint64_t>(*v);
  return g;
}

std::uint64_t cell_seed(std::uint64_t grid_seed, std::uint64_t index) {
  // splitmix64 finalizer over (seed, index).
  std::uint64_t z = grid_seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

GridReport run_table1_grid(const GridConfig& grid, const RunOptions& opts) {
  if (grid.reps < 1) throw ValidationError("reps must be at least 1");
  if (grid.tau2.empty() || grid.K.empty()) throw ValidationError("grid has no cells");
  GridReport report;
  report.config = grid;
  std::uint64_t index = 0;
  for (double tau2 : grid.tau2) {
    for (int K : grid.K) {
      Scenario s = Scenario::exchangeable(K, tau2, grid.n, grid.reps, grid.rho, cell_seed(grid.seed, index++));
      s.beta_true = grid.beta_true;
      s.alpha = grid.alpha;
      s.gamma = grid.gamma;
      report.cells.push_back(run_scenario(s, opts));
    }
  }
  return report;
}

std::string grid_to_csv(const GridReport& report) {
  std::string out =
      "tau2,K,n,reps,method,replicates_ok,failures,ebias,ebias_mcse,ase,ase_mcse,ese,ese_mcse,cp,cp_mcse\n";
  for (const auto& cell : report.cells) {
    const auto& s = cell.scenario;
    for (const auto& m : cell.metrics) {
      out += fmt::format("{:.2f},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", s.tau2, s.K, s.n, s.reps,
                         method_name(m.method), m.replicates_ok, m.failures, fmt_num(m.ebias, 8),
                         fmt_num(m.ebias_mcse, 8), fmt_num(m.ase, 8), fmt_num(m.ase_mcse, 8),
                         fmt_num(m.ese, 8), fmt_num(m.ese_mcse, 8), fmt_num(m.cp, 6),
                         fmt_num(m.cp_mcse, 6));
    }
  }
  return out;
}

std::string grid_to_text(const GridReport& report) {
  std::string out = fmt::format("{:>6} {:>4}  {:<10} {:>9} {:>7} {:>7} {:>6} {:>8}\n", "tau2", "K",
                                "method", "EBIAS", "ASE", "ESE", "CP", "failures");
  double last_tau2 = kNaN;
  for (const auto& cell : report.cells) {
    const auto& s = cell.scenario;
    for (const auto& m : cell.metrics) {
      const std::string tau = s.tau2 == last_tau2 ? "" : fmt::format("{:.2f}", s.tau2);
      last_tau2 = s.tau2;
      out += fmt::format("{:>6} {:>4}  {:<10} {:>9} {:>7} {:>7} {:>6} {:>8}\n", tau, s.K,
                         method_name(m.method), fmt_num(m.ebias, 4), fmt_num(m.ase, 3),
                         fmt_num(m.ese, 3), fmt_num(m.cp, 3), m.failures);
    }
  }
  return out;
}

}  // namespace hiermeta::sim
