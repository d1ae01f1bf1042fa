#include "hiermeta/forest.hpp"

#include "hiermeta/error.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>

namespace hiermeta::forest {

namespace {

constexpr double kZ = 1.96;
constexpr int kRowHeight = 28;
constexpr int kTop = 48;
constexpr int kBottom = 56;
constexpr int kLabelWidth = 220;
constexpr int kValueWidth = 170;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Step of 1, 2 or 5 times a power of ten giving about six ticks.
double tick_step(double span) {
  const double raw = span / 6.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0}) {
    if (m * mag >= raw) return m * mag;
  }
  return 10.0 * mag;
}

Row read_row(const nlohmann::json& j, const char* label_key) {
  Row r;
  r.label = j.at(label_key).get<std::string>();
  r.estimate = j.contains("B_hat") ? j.at("B_hat").get<double>() : j.at("beta_hat").get<double>();
  r.se = j.at("se").get<double>();
  return r;
}

}  // namespace

ForestData from_report(const nlohmann::json& report) {
  try {
    const std::string kind = report.at("kind").get<std::string>();
    ForestData d;
    if (kind == "stage2") {
      d.title = "Cohort " + report.at("cohort_id").get<std::string>();
      for (const auto& e : report.at("endpoints")) d.rows.push_back(read_row(e, "name"));
      d.pooled = Row{"Pooled", report.at("beta_hat").get<double>(), report.at("se").get<double>()};
    } else if (kind == "stage3") {
      d.title = "Global (" + report.at("method").get<std::string>() + ")";
      for (const auto& c : report.at("cohorts")) d.rows.push_back(read_row(c, "cohort_id"));
      d.pooled = Row{"Global", report.at("beta_global").get<double>(), report.at("se_global").get<double>()};
    } else {
      throw ValidationError(fmt::format("cannot plot a '{}' report", kind));
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("malformed report: {}", e.what()));
  }
}

std::string render_svg(const ForestData& data, const PlotOptions& opts) {
  if (opts.width < kLabelWidth + kValueWidth + 100) throw ValidationError("plot width too small");
  const int n_rows = static_cast<int>(data.rows.size()) + (data.pooled ? 1 : 0);
  const int height = opts.height > 0 ? opts.height : kTop + kBottom + kRowHeight * std::max(n_rows, 1);
  const double x0 = kLabelWidth;
  const double x1 = opts.width - kValueWidth;

  auto check = [](const Row& r) {
    if (!std::isfinite(r.estimate) || !std::isfinite(r.se) || r.se < 0.0) {
      throw ValidationError(fmt::format("row '{}' has a non-finite estimate or negative SE", r.label));
    }
  };
  double lo = opts.zero_line ? 0.0 : INFINITY;
  double hi = opts.zero_line ? 0.0 : -INFINITY;
  auto extend = [&](const Row& r) {
    check(r);
    lo = std::min(lo, r.estimate - kZ * r.se);
    hi = std::max(hi, r.estimate + kZ * r.se);
  };
  for (const auto& r : data.rows) extend(r);
  if (data.pooled) extend(*data.pooled);
  if (!std::isfinite(lo)) lo = -1.0, hi = 1.0;
  if (hi - lo < 1e-12) lo -= 1.0, hi += 1.0;
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto px = [&](double v) { return x0 + (v - lo) / (hi - lo) * (x1 - x0); };

  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
      "font-family=\"sans-serif\" font-size=\"13\">\n",
      opts.width, height, opts.width, height);
  s += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", opts.width, height);
  if (!data.title.empty()) {
    s += fmt::format("<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
                     opts.width / 2, escape(data.title));
  }
  const double plot_bottom = kTop + kRowHeight * n_rows;
  if (opts.zero_line && lo <= 0.0 && hi >= 0.0) {
    s += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"#888\" "
                     "stroke-dasharray=\"4 3\"/>\n",
                     px(0.0), kTop - 8, plot_bottom);
  }

  auto value_text = [](const Row& r) {
    return fmt::format("{:.2f} [{:.2f}, {:.2f}]", r.estimate, r.estimate - kZ * r.se, r.estimate + kZ * r.se);
  };
  int i = 0;
  for (const auto& r : data.rows) {
    const double y = kTop + kRowHeight * (i++ + 0.5);
    s += fmt::format("<text x=\"8\" y=\"{:.2f}\" dominant-baseline=\"middle\">{}</text>\n", y, escape(r.label));
    s += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"black\"/>\n",
                     px(r.estimate - kZ * r.se), y, px(r.estimate + kZ * r.se), y);
    s += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"8\" height=\"8\" fill=\"black\"/>\n",
                     px(r.estimate) - 4.0, y - 4.0);
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" dominant-baseline=\"middle\">{}</text>\n", x1 + 12.0, y,
                     value_text(r));
  }
  if (data.pooled) {
    const Row& p = *data.pooled;
    const double y = kTop + kRowHeight * (i + 0.5);
    s += fmt::format("<text x=\"8\" y=\"{:.2f}\" dominant-baseline=\"middle\" font-weight=\"bold\">{}</text>\n", y,
                     escape(p.label));
    s += fmt::format("<polygon points=\"{:.2f},{:.2f} {:.2f},{:.2f} {:.2f},{:.2f} {:.2f},{:.2f}\" fill=\"#333\"/>\n",
                     px(p.estimate - kZ * p.se), y, px(p.estimate), y - 7.0, px(p.estimate + kZ * p.se), y,
                     px(p.estimate), y + 7.0);
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" dominant-baseline=\"middle\" font-weight=\"bold\">{}</text>\n",
                     x1 + 12.0, y, value_text(p));
  }

  const double axis_y = plot_bottom + 6.0;
  s += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"black\"/>\n", x0, axis_y,
                   x1, axis_y);
  const double step = tick_step(hi - lo);
  for (double t = std::ceil(lo / step) * step; t <= hi + 1e-9 * step; t += step) {
    const double v = std::abs(t) < 1e-9 * step ? 0.0 : t;
    s += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" stroke=\"black\"/>\n", px(v),
                     axis_y, axis_y + 5.0);
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\" font-size=\"11\">{:g}</text>\n", px(v),
                     axis_y + 18.0, v);
  }
  s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n", (x0 + x1) / 2.0,
                   axis_y + 38.0, escape(opts.effect_label));
  s += "</svg>\n";
  return s;
}

}  // namespace hiermeta::forest
