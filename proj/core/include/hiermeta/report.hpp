#pragma once

#include "hiermeta/datamodel.hpp"
#include "hiermeta/onestage.hpp"
#include "hiermeta/sim.hpp"
#include "hiermeta/stage1.hpp"
#include "hiermeta/stage2.hpp"
#include "hiermeta/stage3.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>

namespace hiermeta::report {

using nlohmann::json;

/// Every report carries `"kind"` and `"schema_version"` so readers can
/// dispatch without guessing.
inline constexpr int kSchemaVersion = 1;

json stage1_json(const std::string& cohort_id, const stage1::Stage1Result& result,
                 const std::optional<StandardizationRecord>& standardization);

/// Rebuilds the effect block from a stage1 report. Throws ValidationError on
/// a malformed document.
EffectBlock effect_block_from_stage1(const json& doc);

json stage2_json(const std::string& cohort_id, const EffectBlock& block,
                 const stage2::CohortPooled& pooled);
json onestage_json(const std::string& cohort_id, const onestage::OneStageFit& fit);
json stage3_json(const std::string& method, const stage3::GlobalPooled& pooled);
json grid_json(const sim::GridReport& report);

/// Gamma (or any square matrix) as CSV with an endpoint header row.
std::string matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& names);

/// Aligned human-readable summaries.
std::string stage1_text(const std::string& cohort_id, const stage1::Stage1Result& result,
                        const std::vector<std::string>& names);
std::string stage2_text(const std::string& cohort_id, const stage2::CohortPooled& pooled);

/// Table 5-style rows: method, global effect, SE, eta^2 (se).
std::string global_text(const std::vector<std::pair<std::string, stage3::GlobalPooled>>& rows);

}  // namespace hiermeta::report
