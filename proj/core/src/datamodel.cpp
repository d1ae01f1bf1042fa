#include "hiermeta/datamodel.hpp"

#include "hiermeta/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string_view>
#include <unordered_map>

namespace hiermeta {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Splits one record. Double quotes protect delimiters; "" inside quotes is a
// literal quote. Returns false on an unterminated quote.
bool split_record(std::string_view line, char delim, std::vector<std::string>& out) {
  out.clear();
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return !quoted;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& value) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  return ec == std::errc() && ptr == end && std::isfinite(value);
}

}  // namespace

CohortData::CohortData(std::string cohort_id, Eigen::VectorXd exposure,
                       Eigen::VectorXd propensity, Eigen::MatrixXd responses,
                       BoolMatrix observed, std::vector<std::string> endpoint_names)
    : cohort_id_(std::move(cohort_id)),
      exposure_(std::move(exposure)),
      propensity_(std::move(propensity)),
      responses_(std::move(responses)),
      observed_(std::move(observed)),
      endpoint_names_(std::move(endpoint_names)) {
  const Eigen::Index J = exposure_.size();
  const Eigen::Index K = responses_.cols();
  if (J == 0) throw ValidationError(fmt::format("cohort '{}' has no individuals", cohort_id_));
  if (K == 0) throw ValidationError(fmt::format("cohort '{}' has no endpoints", cohort_id_));
  if (propensity_.size() != J || responses_.rows() != J || observed_.rows() != J ||
      observed_.cols() != K) {
    throw ValidationError(fmt::format("cohort '{}': inconsistent dimensions", cohort_id_));
  }
  if (static_cast<Eigen::Index>(endpoint_names_.size()) != K) {
    throw ValidationError(fmt::format("cohort '{}': {} endpoint names for {} columns",
                                      cohort_id_, endpoint_names_.size(), K));
  }
  for (Eigen::Index j = 0; j < J; ++j) {
    if (!std::isfinite(exposure_(j))) {
      throw ValidationError(fmt::format("cohort '{}': exposure missing on row {}", cohort_id_, j + 1));
    }
    if (!std::isfinite(propensity_(j))) {
      throw ValidationError(
          fmt::format("cohort '{}': propensity missing on row {}", cohort_id_, j + 1));
    }
    for (Eigen::Index k = 0; k < K; ++k) {
      if (!observed_(j, k)) {
        responses_(j, k) = kNaN;
      } else if (!std::isfinite(responses_(j, k))) {
        throw ValidationError(fmt::format("cohort '{}': endpoint '{}' row {} is marked observed "
                                          "but not finite",
                                          cohort_id_, endpoint_names_[k], j + 1));
      }
    }
  }

  const Eigen::MatrixXd r = observed_.cast<double>();
  counts_ = (r.transpose() * r).array().round().cast<long>().matrix();
  for (Eigen::Index k = 0; k < K; ++k) {
    if (counts_(k, k) < kMinObservedPerEndpoint) {
      throw ValidationError(fmt::format("cohort '{}': endpoint '{}' has {} observations, need {}",
                                        cohort_id_, endpoint_names_[k], counts_(k, k),
                                        kMinObservedPerEndpoint));
    }
  }
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index l = k + 1; l < K; ++l) {
      if (counts_(k, l) < kMinPairOverlap) {
        warnings_.push_back(fmt::format("endpoints '{}' and '{}' share only {} observed rows",
                                        endpoint_names_[k], endpoint_names_[l], counts_(k, l)));
      }
    }
  }
}

CohortData CohortData::with_responses(Eigen::MatrixXd responses) const {
  if (responses.rows() != responses_.rows() || responses.cols() != responses_.cols()) {
    throw ValidationError("with_responses: shape mismatch");
  }
  return CohortData(cohort_id_, exposure_, propensity_, std::move(responses), observed_,
                    endpoint_names_);
}

CohortData CohortData::select_endpoints(const std::vector<Eigen::Index>& columns) const {
  const auto J = n_individuals();
  const auto K = static_cast<Eigen::Index>(columns.size());
  Eigen::MatrixXd y(J, K);
  BoolMatrix obs(J, K);
  std::vector<std::string> names;
  for (Eigen::Index c = 0; c < K; ++c) {
    const Eigen::Index k = columns[c];
    if (k < 0 || k >= n_endpoints()) throw ValidationError("select_endpoints: index out of range");
    y.col(c) = responses_.col(k);
    obs.col(c) = observed_.col(k);
    names.push_back(endpoint_names_[k]);
  }
  return CohortData(cohort_id_, exposure_, propensity_, std::move(y), std::move(obs),
                    std::move(names));
}

CohortData CohortData::permute_rows(const std::vector<Eigen::Index>& order) const {
  const auto J = n_individuals();
  if (static_cast<Eigen::Index>(order.size()) != J) {
    throw ValidationError("permute_rows: order has wrong length");
  }
  Eigen::VectorXd a(J), s(J);
  Eigen::MatrixXd y(J, n_endpoints());
  BoolMatrix obs(J, n_endpoints());
  for (Eigen::Index i = 0; i < J; ++i) {
    a(i) = exposure_(order[i]);
    s(i) = propensity_(order[i]);
    y.row(i) = responses_.row(order[i]);
    obs.row(i) = observed_.row(order[i]);
  }
  return CohortData(cohort_id_, std::move(a), std::move(s), std::move(y), std::move(obs),
                    endpoint_names_);
}

CohortData parse_cohort_csv(const std::string& text, const CsvSchema& schema,
                            const std::string& default_id) {
  if (schema.exposure_column.empty() || schema.propensity_column.empty()) {
    throw ValidationError("schema must name an exposure and a propensity column");
  }
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> fields;

  // Header.
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (line_no == 0 || trim(line).empty()) throw ParseError("missing header row", line_no);
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (!split_record(line, schema.delimiter, header)) throw ParseError("unterminated quote", line_no);
  for (auto& h : header) h = std::string(trim(h));

  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!index.emplace(header[c], c).second) {
      throw ParseError(fmt::format("duplicate column '{}'", header[c]), line_no);
    }
  }
  auto column = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ValidationError(fmt::format("column '{}' not found", name));
    return it->second;
  };
  const std::size_t exposure_col = column(schema.exposure_column);
  const std::size_t propensity_col = column(schema.propensity_column);

  std::vector<std::string> endpoint_names = schema.endpoint_columns;
  if (endpoint_names.empty()) {
    for (const auto& h : header) {
      const bool skip = h == schema.exposure_column || h == schema.propensity_column ||
                        std::find(schema.ignore_columns.begin(), schema.ignore_columns.end(), h) !=
                            schema.ignore_columns.end();
      if (!skip) endpoint_names.push_back(h);
    }
  }
  if (endpoint_names.empty()) throw ValidationError("schema selects no endpoint columns");
  std::vector<std::size_t> endpoint_cols;
  for (const auto& name : endpoint_names) endpoint_cols.push_back(column(name));

  auto is_missing = [&](std::string_view cell) {
    return std::find(schema.missing_tokens.begin(), schema.missing_tokens.end(), cell) !=
           schema.missing_tokens.end();
  };

  std::vector<double> a, s, y;
  std::vector<char> obs;
  std::vector<std::size_t> row_lines;
  const std::size_t K = endpoint_cols.size();
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (!split_record(line, schema.delimiter, fields)) throw ParseError("unterminated quote", line_no);
    if (fields.size() != header.size()) {
      throw ParseError(fmt::format("expected {} fields, found {}", header.size(), fields.size()),
                       line_no);
    }
    auto numeric = [&](std::size_t col, const char* role) -> double {
      const auto cell = trim(fields[col]);
      if (is_missing(cell)) {
        throw ValidationError(fmt::format("{} '{}' missing on line {} (data row {})", role,
                                          header[col], line_no, row_lines.size() + 1));
      }
      double v = 0.0;
      if (!parse_double(cell, v)) {
        throw ParseError(fmt::format("column '{}': cannot parse '{}' as a number", header[col],
                                     std::string(cell)),
                         line_no);
      }
      return v;
    };
    a.push_back(numeric(exposure_col, "exposure"));
    s.push_back(numeric(propensity_col, "propensity"));
    for (std::size_t k = 0; k < K; ++k) {
      const auto cell = trim(fields[endpoint_cols[k]]);
      if (is_missing(cell)) {
        y.push_back(kNaN);
        obs.push_back(0);
        continue;
      }
      double v = 0.0;
      if (!parse_double(cell, v)) {
        throw ParseError(fmt::format("column '{}': cannot parse '{}' as a number",
                                     endpoint_names[k], std::string(cell)),
                         line_no);
      }
      y.push_back(v);
      obs.push_back(1);
    }
    row_lines.push_back(line_no);
  }

  const auto J = static_cast<Eigen::Index>(a.size());
  Eigen::MatrixXd responses(J, static_cast<Eigen::Index>(K));
  BoolMatrix observed(J, static_cast<Eigen::Index>(K));
  for (Eigen::Index j = 0; j < J; ++j) {
    for (std::size_t k = 0; k < K; ++k) {
      responses(j, static_cast<Eigen::Index>(k)) = y[static_cast<std::size_t>(j) * K + k];
      observed(j, static_cast<Eigen::Index>(k)) = obs[static_cast<std::size_t>(j) * K + k] != 0;
    }
  }
  return CohortData(schema.cohort_id.empty() ? default_id : schema.cohort_id,
                    Eigen::Map<Eigen::VectorXd>(a.data(), J),
                    Eigen::Map<Eigen::VectorXd>(s.data(), J), std::move(responses),
                    std::move(observed), std::move(endpoint_names));
}

CohortData load_cohort_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_cohort_csv(buf.str(), schema, path.stem().string());
}

std::pair<CohortData, StandardizationRecord> standardize_responses(const CohortData& data) {
  const auto K = data.n_endpoints();
  const auto J = data.n_individuals();
  StandardizationRecord rec;
  rec.endpoint_names = data.endpoint_names();
  rec.original_mean.resize(K);
  rec.original_sd.resize(K);
  Eigen::MatrixXd y = data.responses();
  for (Eigen::Index k = 0; k < K; ++k) {
    double sum = 0.0;
    long n = 0;
    for (Eigen::Index j = 0; j < J; ++j) {
      if (data.observed()(j, k)) {
        sum += y(j, k);
        ++n;
      }
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (Eigen::Index j = 0; j < J; ++j) {
      if (data.observed()(j, k)) ss += (y(j, k) - mean) * (y(j, k) - mean);
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0) || sd <= 1e-12 * std::max(1.0, std::abs(mean))) {
      throw ValidationError(fmt::format("endpoint '{}' has zero standard deviation",
                                        data.endpoint_names()[k]));
    }
    rec.original_mean(k) = mean;
    rec.original_sd(k) = sd;
    for (Eigen::Index j = 0; j < J; ++j) {
      if (data.observed()(j, k)) {
        y(j, k) = StandardizationRecord::kTargetMean +
                  StandardizationRecord::kTargetSd * (y(j, k) - mean) / sd;
      }
    }
  }
  return {data.with_responses(std::move(y)), std::move(rec)};
}

CohortData StandardizationRecord::invert(const CohortData& standardized) const {
  const auto K = standardized.n_endpoints();
  if (original_mean.size() != K || original_sd.size() != K) {
    throw ValidationError("standardization record does not match the data");
  }
  Eigen::MatrixXd y = standardized.responses();
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
      if (standardized.observed()(j, k)) {
        y(j, k) = original_mean(k) + original_sd(k) * (y(j, k) - kTargetMean) / kTargetSd;
      }
    }
  }
  return standardized.with_responses(std::move(y));
}

void EffectBlock::validate() const {
  const auto K = b_hat.size();
  if (K == 0) throw ValidationError("effect block is empty");
  if (gamma.rows() != K || gamma.cols() != K) throw ValidationError("Gamma has the wrong shape");
  if (!(j > 0.0)) throw ValidationError("effect block needs J > 0");
  for (Eigen::Index k = 0; k < K; ++k) {
    if (!std::isfinite(b_hat(k))) throw ValidationError("B_hat has a non-finite entry");
    if (!(gamma(k, k) > 0.0)) {
      throw ValidationError(fmt::format("Gamma diagonal entry {} is not positive", k));
    }
    for (Eigen::Index l = k + 1; l < K; ++l) {
      const double tol = 1e-10 * std::max(1.0, std::abs(gamma(k, l)));
      if (!(std::abs(gamma(k, l) - gamma(l, k)) <= tol)) {
        throw ValidationError(fmt::format("Gamma is not symmetric at ({}, {})", k, l));
      }
    }
  }
  if (n_pairwise.size() == 0) return;
  if (n_pairwise.rows() != K || n_pairwise.cols() != K) {
    throw ValidationError("pairwise counts have the wrong shape");
  }
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index l = 0; l < K; ++l) {
      if (n_pairwise(k, l) != n_pairwise(l, k) ||
          n_pairwise(k, l) > std::min(n_pairwise(k, k), n_pairwise(l, l))) {
        throw ValidationError("pairwise counts are inconsistent");
      }
    }
  }
}

}  // namespace hiermeta
