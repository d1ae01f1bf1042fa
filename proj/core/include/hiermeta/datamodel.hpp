#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace hiermeta {

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
using CountMatrix = Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic>;

/// Minimum observed rows per endpoint: three regression coefficients plus
/// one residual degree of freedom.
inline constexpr long kMinObservedPerEndpoint = 4;
/// Pairs with fewer jointly observed rows are flagged in `warnings()`.
inline constexpr long kMinPairOverlap = 2;

/// Individual-level data for one cohort: exposure A_j, propensity score S_j
/// and K endpoint columns with missing cells.
///
/// Missing cells are stored as NaN in `responses()` and as `false` in
/// `observed()`. Instances are validated on construction and immutable.
class CohortData {
 public:
  /// Validates every invariant and throws ValidationError on the first
  /// violation. Cells with `observed == false` are overwritten with NaN.
  CohortData(std::string cohort_id, Eigen::VectorXd exposure, Eigen::VectorXd propensity,
             Eigen::MatrixXd responses, BoolMatrix observed,
             std::vector<std::string> endpoint_names);

  const std::string& cohort_id() const noexcept { return cohort_id_; }
  Eigen::Index n_individuals() const noexcept { return exposure_.size(); }
  Eigen::Index n_endpoints() const noexcept { return responses_.cols(); }
  const Eigen::VectorXd& exposure() const noexcept { return exposure_; }
  const Eigen::VectorXd& propensity() const noexcept { return propensity_; }
  const Eigen::MatrixXd& responses() const noexcept { return responses_; }
  const BoolMatrix& observed() const noexcept { return observed_; }
  const std::vector<std::string>& endpoint_names() const noexcept { return endpoint_names_; }

  /// n_k on the diagonal and n_kl off the diagonal.
  const CountMatrix& pairwise_counts() const noexcept { return counts_; }
  long n_observed(Eigen::Index k) const { return counts_(k, k); }
  bool is_complete() const noexcept { return observed_.all(); }

  /// Pairs with n_kl < 2, recorded rather than rejected.
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

  /// Copy with new response values; the missingness pattern is kept.
  CohortData with_responses(Eigen::MatrixXd responses) const;
  /// Copy restricted to the given endpoints, in the given order.
  CohortData select_endpoints(const std::vector<Eigen::Index>& columns) const;
  /// Copy with rows reordered: row i of the result is row `order[i]` here.
  CohortData permute_rows(const std::vector<Eigen::Index>& order) const;

 private:
  std::string cohort_id_;
  Eigen::VectorXd exposure_;
  Eigen::VectorXd propensity_;
  Eigen::MatrixXd responses_;
  BoolMatrix observed_;
  std::vector<std::string> endpoint_names_;
  CountMatrix counts_;
  std::vector<std::string> warnings_;
};

/// Column mapping and lexical options for `load_cohort_csv`.
struct CsvSchema {
  std::string exposure_column;
  std::string propensity_column;
  /// Empty selects every column that is not exposure, propensity or ignored.
  std::vector<std::string> endpoint_columns;
  std::vector<std::string> ignore_columns;
  std::vector<std::string> missing_tokens{"", "NA"};
  char delimiter = ',';
  /// Empty uses the file stem.
  std::string cohort_id;
};

/// Reads a header-first delimited file into a validated CohortData.
///
/// Throws ParseError (with the 1-based line) for ragged rows and
/// unparseable numbers, ValidationError for missing exposure/propensity
/// cells, unknown columns and endpoints with fewer than four observations.
CohortData load_cohort_csv(const std::filesystem::path& path, const CsvSchema& schema);

/// Same as `load_cohort_csv` on in-memory text.
CohortData parse_cohort_csv(const std::string& text, const CsvSchema& schema,
                            const std::string& default_id = "cohort");

/// Per-endpoint affine map onto the IQ scale (mean 100, SD 15).
struct StandardizationRecord {
  static constexpr double kTargetMean = 100.0;
  static constexpr double kTargetSd = 15.0;

  std::vector<std::string> endpoint_names;
  Eigen::VectorXd original_mean;
  Eigen::VectorXd original_sd;

  /// Maps standardized observed cells back to the original scale.
  CohortData invert(const CohortData& standardized) const;
};

/// Rescales each endpoint so its observed cells have sample mean 100 and
/// sample SD 15 (divisor n - 1). Moments use observed cells only.
std::pair<CohortData, StandardizationRecord> standardize_responses(const CohortData& data);

/// Stage I least-squares fit for one endpoint. `theta` is (intercept,
/// exposure, propensity).
struct EndpointFit {
  Eigen::Index endpoint = 0;
  Eigen::Vector3d theta = Eigen::Vector3d::Zero();
  double sigma2 = 0.0;
  long n_observed = 0;

  double exposure_effect() const noexcept { return theta(1); }
};

/// K exposure-effect estimates with the covariance Gamma of
/// sqrt(J) * (B_hat - B), adjusted for pairwise missingness.
struct EffectBlock {
  Eigen::VectorXd b_hat;
  Eigen::MatrixXd gamma;
  double j = 1.0;
  CountMatrix n_pairwise;
  std::vector<std::string> endpoint_names;

  Eigen::Index size() const noexcept { return b_hat.size(); }
  /// Sampling covariance of B_hat, J^{-1} Gamma.
  Eigen::MatrixXd sampling_covariance() const { return gamma / j; }

  /// Throws ValidationError unless Gamma is symmetric with a positive
  /// diagonal and the counts are consistent.
  void validate() const;
};

}  // namespace hiermeta
