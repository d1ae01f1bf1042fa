#include "hiermeta/report.hpp"

#include "hiermeta/error.hpp"

#include <fmt/core.h>

#include <cmath>

namespace hiermeta::report {

namespace {

template <class Derived>
json matrix_json(const Eigen::MatrixBase<Derived>& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

const char* step_name(stage2::TracePoint::Step s) {
  return s == stage2::TracePoint::Step::kBeta ? "beta" : "phi";
}

json trace_json(const std::vector<stage2::TracePoint>& trace) {
  json out = json::array();
  for (const auto& t : trace) {
    out.push_back({{"step", step_name(t.step)}, {"beta", t.beta}, {"phi", t.phi}, {"log_pl", nullable(t.log_pl)}});
  }
  return out;
}

std::string num(double v, int digits) {
  return std::isfinite(v) ? fmt::format("{:.{}f}", v, digits) : std::string("NA");
}

}  // namespace

json stage1_json(const std::string& cohort_id, const stage1::Stage1Result& result,
                 const std::optional<StandardizationRecord>& standardization) {
  const auto& block = result.block;
  const Eigen::VectorXd se = result.effect_se();
  json endpoints = json::array();
  for (std::size_t k = 0; k < result.fits.size(); ++k) {
    const auto& f = result.fits[k];
    const auto ki = static_cast<Eigen::Index>(k);
    json e = {{"name", block.endpoint_names[k]},
              {"alpha", f.theta(0)},
              {"B_hat", f.theta(1)},
              {"gamma", f.theta(2)},
              {"sigma2", f.sigma2},
              {"n", f.n_observed},
              {"se_B", se(ki)}};
    if (standardization) {
      e["original_mean"] = standardization->original_mean(ki);
      e["original_sd"] = standardization->original_sd(ki);
    }
    endpoints.push_back(std::move(e));
  }
  json counts = json::array();
  for (Eigen::Index i = 0; i < block.n_pairwise.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < block.n_pairwise.cols(); ++j) row.push_back(block.n_pairwise(i, j));
    counts.push_back(std::move(row));
  }
  return {{"kind", "stage1"},
          {"schema_version", kSchemaVersion},
          {"cohort_id", cohort_id},
          {"J", static_cast<long>(block.j)},
          {"standardized", standardization.has_value()},
          {"endpoints", std::move(endpoints)},
          {"Gamma", matrix_json(block.gamma)},
          {"n_pairwise", std::move(counts)},
          {"missingness_factor", matrix_json(stage1::missingness_factor(block.n_pairwise))},
          {"residual_covariance", matrix_json(result.residual.sigma)},
          {"Omega", matrix_json(result.design.omega)},
          {"warnings", result.warnings}};
}

EffectBlock effect_block_from_stage1(const json& doc) {
  try {
    if (doc.at("kind").get<std::string>() != "stage1") {
      throw ValidationError("report is not a stage1 report");
    }
    EffectBlock b;
    const auto& endpoints = doc.at("endpoints");
    const auto K = static_cast<Eigen::Index>(endpoints.size());
    b.b_hat.resize(K);
    for (Eigen::Index k = 0; k < K; ++k) {
      b.b_hat(k) = endpoints[static_cast<std::size_t>(k)].at("B_hat").get<double>();
      b.endpoint_names.push_back(endpoints[static_cast<std::size_t>(k)].at("name").get<std::string>());
    }
    b.j = doc.at("J").get<double>();
    const auto& g = doc.at("Gamma");
    const auto& n = doc.at("n_pairwise");
    if (static_cast<Eigen::Index>(g.size()) != K || static_cast<Eigen::Index>(n.size()) != K) {
      throw ValidationError("stage1 report matrices do not match the endpoint count");
    }
    b.gamma.resize(K, K);
    b.n_pairwise.resize(K, K);
    for (Eigen::Index i = 0; i < K; ++i) {
      const auto& gi = g[static_cast<std::size_t>(i)];
      const auto& ni = n[static_cast<std::size_t>(i)];
      if (static_cast<Eigen::Index>(gi.size()) != K || static_cast<Eigen::Index>(ni.size()) != K) {
        throw ValidationError("stage1 report matrix row has the wrong length");
      }
      for (Eigen::Index j = 0; j < K; ++j) {
        b.gamma(i, j) = gi[static_cast<std::size_t>(j)].get<double>();
        b.n_pairwise(i, j) = ni[static_cast<std::size_t>(j)].get<long>();
      }
    }
    b.validate();
    return b;
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("malformed stage1 report: {}", e.what()));
  }
}

json stage2_json(const std::string& cohort_id, const EffectBlock& block, const stage2::CohortPooled& pooled) {
  json endpoints = json::array();
  for (Eigen::Index k = 0; k < block.size(); ++k) {
    endpoints.push_back({{"name", block.endpoint_names.empty() ? fmt::format("endpoint{}", k + 1)
                                                               : block.endpoint_names[static_cast<std::size_t>(k)]},
                         {"B_hat", block.b_hat(k)},
                         {"se", std::sqrt(block.gamma(k, k) / block.j)},
                         {"weight", pooled.weights(k)}});
  }
  return {{"kind", "stage2"},
          {"schema_version", kSchemaVersion},
          {"method", "two-stage"},
          {"cohort_id", cohort_id},
          {"weight_scheme", pooled.scheme == stage2::WeightScheme::kDiagonal ? "diagonal" : "full-inverse"},
          {"beta_hat", pooled.beta_hat},
          {"se", pooled.se_beta},
          {"se_naive", pooled.se_naive},
          {"phi_hat", pooled.phi_hat},
          {"phi_max", pooled.phi_max},
          {"endpoints", std::move(endpoints)},
          {"iterations", pooled.iterations},
          {"converged", pooled.converged},
          {"trace", trace_json(pooled.trace)},
          {"warnings", pooled.warnings}};
}

json onestage_json(const std::string& cohort_id, const onestage::OneStageFit& fit) {
  const auto K = fit.alpha.size();
  json tau = json::array(), zeta = json::array();
  for (Eigen::Index r = 1; r < K; ++r) {
    tau.push_back(fit.fixed_effects(r));
    zeta.push_back(fit.fixed_effects(K + r));
  }
  return {{"kind", "onestage"},
          {"schema_version", kSchemaVersion},
          {"method", "one-stage"},
          {"cohort_id", cohort_id},
          {"endpoint_names", fit.endpoint_names},
          {"beta_hat", fit.beta_tilde},
          {"se", fit.se_tilde},
          {"se_model", fit.se_model},
          {"phi_hat", fit.phi_tilde},
          {"Sigma", matrix_json(fit.sigma_tilde)},
          {"fixed_effects",
           {{"alpha_1", fit.alpha(0)}, {"gamma_1", fit.gamma(0)}, {"tau", std::move(tau)}, {"zeta", std::move(zeta)}}},
          {"loglik", fit.loglik},
          {"restarts", fit.restarts_run},
          {"converged", fit.converged}};
}

json stage3_json(const std::string& method, const stage3::GlobalPooled& pooled) {
  json cohorts = json::array();
  for (std::size_t i = 0; i < pooled.inputs.size(); ++i) {
    const auto& in = pooled.inputs[i];
    cohorts.push_back({{"cohort_id", in.cohort_id},
                       {"beta_hat", in.beta},
                       {"se", std::sqrt(in.variance)},
                       {"variance", in.variance},
                       {"weight", pooled.cohort_weights(static_cast<Eigen::Index>(i))}});
  }
  return {{"kind", "stage3"},
          {"schema_version", kSchemaVersion},
          {"method", method},
          {"beta_global", pooled.beta_global},
          {"se_global", pooled.se_global},
          {"eta2_hat", pooled.eta2_hat},
          {"se_eta2", nullable(pooled.se_eta2)},
          {"eta2_dersimonian_laird", pooled.eta2_dersimonian_laird},
          {"q_statistic", pooled.q_statistic},
          {"log_pl", pooled.log_pl},
          {"cohorts", std::move(cohorts)},
          {"iterations", pooled.iterations},
          {"converged", pooled.converged}};
}

json grid_json(const sim::GridReport& report) {
  json cells = json::array();
  for (const auto& cell : report.cells) {
    const auto& s = cell.scenario;
    json methods = json::array();
    for (const auto& m : cell.metrics) {
      methods.push_back({{"method", sim::method_name(m.method)},
                         {"replicates_ok", m.replicates_ok},
                         {"failures", m.failures},
                         {"ebias", nullable(m.ebias)},
                         {"ebias_mcse", nullable(m.ebias_mcse)},
                         {"ase", nullable(m.ase)},
                         {"ase_mcse", nullable(m.ase_mcse)},
                         {"ese", nullable(m.ese)},
                         {"ese_mcse", nullable(m.ese_mcse)},
                         {"ese_defined", m.ese_defined()},
                         {"cp", nullable(m.cp)},
                         {"cp_mcse", nullable(m.cp_mcse)}});
    }
    cells.push_back({{"tau2", s.tau2},
                     {"K", s.K},
                     {"n", s.n},
                     {"reps", s.reps},
                     {"seed", s.seed},
                     {"methods", std::move(methods)}});
  }
  const auto& g = report.config;
  return {{"kind", "simulation"},
          {"schema_version", kSchemaVersion},
          {"config",
           {{"tau2", g.tau2}, {"K", g.K}, {"n", g.n}, {"reps", g.reps}, {"rho", g.rho},
            {"beta", g.beta_true}, {"alpha", g.alpha}, {"gamma", g.gamma}, {"seed", g.seed}}},
          {"cells", std::move(cells)}};
}

std::string matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& names) {
  std::string out = "endpoint";
  for (const auto& n : names) out += "," + n;
  out += "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out += names[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m.cols(); ++j) out += fmt::format(",{:.17g}", m(i, j));
    out += "\n";
  }
  return out;
}

std::string stage1_text(const std::string& cohort_id, const stage1::Stage1Result& result,
                        const std::vector<std::string>& names) {
  const Eigen::VectorXd se = result.effect_se();
  std::string out = fmt::format("Stage I: cohort {} (J = {})\n", cohort_id, static_cast<long>(result.block.j));
  out += fmt::format("{:<32} {:>10} {:>8} {:>6}\n", "endpoint", "effect", "SE", "n");
  for (std::size_t k = 0; k < result.fits.size(); ++k) {
    out += fmt::format("{:<32} {:>10} {:>8} {:>6}\n", names[k], num(result.fits[k].theta(1), 3),
                       num(se(static_cast<Eigen::Index>(k)), 3), result.fits[k].n_observed);
  }
  for (const auto& w : result.warnings) out += "warning: " + w + "\n";
  return out;
}

std::string stage2_text(const std::string& cohort_id, const stage2::CohortPooled& pooled) {
  std::string out = fmt::format("Stage II: cohort {}\n", cohort_id);
  out += fmt::format("  effect {}  SE {}  phi {}  iterations {}{}\n", num(pooled.beta_hat, 3),
                     num(pooled.se_beta, 3), num(pooled.phi_hat, 3), pooled.iterations,
                     pooled.converged ? "" : "  (not converged)");
  return out;
}

std::string global_text(const std::vector<std::pair<std::string, stage3::GlobalPooled>>& rows) {
  std::string out = fmt::format("{:<12} {:>14} {:>8} {:>18}\n", "method", "global effect", "SE", "eta^2 (se)");
  for (const auto& [method, g] : rows) {
    out += fmt::format("{:<12} {:>14} {:>8} {:>18}\n", method, num(g.beta_global, 3), num(g.se_global, 3),
                       fmt::format("{} ({})", num(g.eta2_hat, 3), num(g.se_eta2, 3)));
  }
  return out;
}

}  // namespace hiermeta::report
