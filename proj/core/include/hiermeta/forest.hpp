#pragma once

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace hiermeta::forest {

struct Row {
  std::string label;
  double estimate = 0.0;
  double se = 0.0;
};

struct ForestData {
  std::string title;
  std::vector<Row> rows;
  /// Drawn as a diamond below the rows.
  std::optional<Row> pooled;
};

struct PlotOptions {
  int width = 720;
  /// 0 sizes the plot from the row count.
  int height = 0;
  std::string effect_label = "Effect";
  bool zero_line = true;
};

/// Rows are the per-endpoint (stage2/one-stage report) or per-cohort
/// (stage3 report) estimates. Throws ValidationError for other documents.
ForestData from_report(const nlohmann::json& report);

/// Whiskers span estimate +/- 1.96 SE. Output bytes depend only on the
/// inputs.
std::string render_svg(const ForestData& data, const PlotOptions& opts = {});

}  // namespace hiermeta::forest
