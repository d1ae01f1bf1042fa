#include "cli.hpp"

#include "hiermeta/config.hpp"
#include "hiermeta/error.hpp"
#include "hiermeta/forest.hpp"
#include "hiermeta/pipeline.hpp"
#include "hiermeta/report.hpp"
#include "hiermeta/sim.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace hiermeta::cli {

namespace {

struct SchemaFlags {
  std::string exposure;
  std::string propensity;
  std::vector<std::string> endpoints;
  std::vector<std::string> ignore;
  std::vector<std::string> missing;
  std::string delimiter = ",";
  bool no_standardize = false;
};

struct Stage1Args {
  std::string input;
  std::string cohort_id;
  std::string out = ".";
  std::string config;
  SchemaFlags schema;
};

struct PoolArgs {
  std::vector<std::string> inputs;
  std::vector<std::string> stage1_reports;
  std::string method = "two-stage";
  std::string weights = "diagonal";
  std::string out = ".";
  std::string config;
  long long seed = 20240601;
  int restarts = 5;
  SchemaFlags schema;
};

struct ForestArgs {
  std::string report;
  std::string out = "forest.svg";
  int width = 720;
  int height = 0;
  std::string effect_label = "Effect (IQ points per unit exposure)";
  bool no_zero_line = false;
};

struct SimulateArgs {
  std::string config;
  std::string out = ".";
  int reps = 1000;
  long long seed = 42;
  unsigned threads = 0;
  int n = 500;
  double rho = 0.5;
  std::vector<double> tau2;
  std::vector<int> K;
  std::vector<std::string> methods{"two-stage", "one-stage"};
};

// Copies config values into options the user did not pass as flags.
class ConfigFill {
 public:
  ConfigFill(const CLI::App& cmd, const std::string& path) : cmd_(cmd) {
    if (!path.empty()) cfg_ = KeyValueConfig::load(path);
  }
  bool wants(const std::string& key, const std::string& flag) const {
    return cfg_.contains(key) && cmd_.get_option(flag)->count() == 0;
  }
  void str(const std::string& key, const std::string& flag, std::string& dst) const {
    if (wants(key, flag)) dst = *cfg_.get(key);
  }
  void list(const std::string& key, const std::string& flag, std::vector<std::string>& dst) const {
    if (wants(key, flag)) dst = cfg_.get_list(key);
  }
  template <class T>
  void integer(const std::string& key, const std::string& flag, T& dst) const {
    if (wants(key, flag)) dst = static_cast<T>(*cfg_.get_int(key));
  }
  void real(const std::string& key, const std::string& flag, double& dst) const {
    if (wants(key, flag)) dst = *cfg_.get_double(key);
  }
  void boolean(const std::string& key, const std::string& flag, bool& dst, bool invert = false) const {
    if (wants(key, flag)) dst = *cfg_.get_bool(key) != invert;
  }
  const KeyValueConfig& config() const { return cfg_; }

 private:
  const CLI::App& cmd_;
  KeyValueConfig cfg_;
};

void add_schema_flags(CLI::App* cmd, SchemaFlags& s) {
  cmd->add_option("--exposure", s.exposure, "Exposure column");
  cmd->add_option("--propensity", s.propensity, "Propensity score column");
  cmd->add_option("--endpoints", s.endpoints, "Endpoint columns (default: all remaining)")->delimiter(',');
  cmd->add_option("--ignore", s.ignore, "Columns to skip")->delimiter(',');
  cmd->add_option("--missing", s.missing, "Missing-value tokens (default: empty and NA)")->delimiter(',');
  cmd->add_option("--delimiter", s.delimiter, "Field delimiter");
  cmd->add_flag("--no-standardize", s.no_standardize, "Keep responses on their original scale");
}

void fill_schema(const ConfigFill& fill, SchemaFlags& s) {
  fill.str("exposure", "--exposure", s.exposure);
  fill.str("propensity", "--propensity", s.propensity);
  fill.list("endpoints", "--endpoints", s.endpoints);
  fill.list("ignore", "--ignore", s.ignore);
  fill.list("missing", "--missing", s.missing);
  fill.str("delimiter", "--delimiter", s.delimiter);
  fill.boolean("standardize", "--no-standardize", s.no_standardize, true);
}

CsvSchema make_schema(const SchemaFlags& s) {
  if (s.exposure.empty()) throw ValidationError("--exposure is required");
  if (s.propensity.empty()) throw ValidationError("--propensity is required");
  if (s.delimiter.size() != 1) throw ValidationError("--delimiter must be a single character");
  CsvSchema schema;
  schema.exposure_column = s.exposure;
  schema.propensity_column = s.propensity;
  schema.endpoint_columns = s.endpoints;
  schema.ignore_columns = s.ignore;
  if (!s.missing.empty()) schema.missing_tokens = s.missing;
  schema.delimiter = s.delimiter[0];
  return schema;
}

std::string file_stem(const std::string& id) {
  std::string out;
  for (char c : id) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' ? c : '_';
  return out.empty() ? "cohort" : out;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw ValidationError(fmt::format("failed writing '{}'", path.string()));
}

void write_json(const fs::path& path, const json& doc) { write_file(path, doc.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(fmt::format("cannot open '{}'", path.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("'{}' is not valid JSON: {}", path.string(), e.what()));
  }
}

int cmd_stage1(const CLI::App& cmd, Stage1Args a) {
  const ConfigFill fill(cmd, a.config);
  fill_schema(fill, a.schema);
  fill.str("out", "--out", a.out);
  CsvSchema schema = make_schema(a.schema);
  schema.cohort_id = a.cohort_id;
  const CohortData raw = load_cohort_csv(a.input, schema);
  for (const auto& w : raw.warnings()) std::cerr << "warning: " << w << "\n";

  std::optional<StandardizationRecord> record;
  std::optional<CohortData> scaled;
  if (a.schema.no_standardize) {
    scaled.emplace(raw);
  } else {
    auto [s, r] = standardize_responses(raw);
    scaled.emplace(std::move(s));
    record = std::move(r);
  }
  const auto result = stage1::run(*scaled);
  const std::string stem = file_stem(raw.cohort_id());
  const fs::path out(a.out);
  write_json(out / (stem + ".stage1.json"), report::stage1_json(raw.cohort_id(), result, record));
  write_file(out / (stem + ".gamma.csv"), report::matrix_csv(result.block.gamma, raw.endpoint_names()));
  std::cout << report::stage1_text(raw.cohort_id(), result, raw.endpoint_names());
  return kOk;
}

int exit_for(const std::vector<pipeline::Failure>& failures) {
  for (const auto& f : failures) {
    if (f.kind == "numerical") return kNumerical;
  }
  return kInvalidInput;
}

json failures_json(const std::vector<pipeline::Failure>& failures) {
  json out = json::array();
  for (const auto& f : failures) {
    out.push_back({{"cohort_id", f.cohort_id}, {"method", f.method}, {"kind", f.kind}, {"message", f.message}});
  }
  return out;
}

int cmd_pool(const CLI::App& cmd, PoolArgs a) {
  const ConfigFill fill(cmd, a.config);
  fill_schema(fill, a.schema);
  fill.str("method", "--method", a.method);
  fill.str("weights", "--weights", a.weights);
  fill.str("out", "--out", a.out);
  fill.integer("seed", "--seed", a.seed);
  fill.integer("restarts", "--restarts", a.restarts);
  fill.list("inputs", "--input", a.inputs);
  fill.list("stage1", "--stage1", a.stage1_reports);

  pipeline::AnalysisOptions opts;
  opts.standardize = !a.schema.no_standardize;
  opts.two_stage = a.method == "two-stage" || a.method == "both";
  opts.one_stage = a.method == "one-stage" || a.method == "both";
  if (!opts.two_stage && !opts.one_stage) {
    throw ValidationError(fmt::format("--method must be two-stage, one-stage or both, not '{}'", a.method));
  }
  if (a.weights == "full") {
    opts.stage2.weights = stage2::WeightScheme::kFullInverse;
  } else if (a.weights != "diagonal") {
    throw ValidationError(fmt::format("--weights must be diagonal or full, not '{}'", a.weights));
  }
  opts.onestage.seed = static_cast<std::uint64_t>(a.seed);
  opts.onestage.restarts = a.restarts;
  if (a.inputs.empty() == a.stage1_reports.empty()) {
    throw ValidationError("give either --input cohort CSVs or --stage1 reports");
  }
  if (!a.stage1_reports.empty() && opts.one_stage) {
    throw ValidationError("the one-stage method needs individual-level --input files");
  }

  pipeline::MetaAnalysis meta;
  std::vector<EffectBlock> blocks;
  if (!a.inputs.empty()) {
    const CsvSchema schema = make_schema(a.schema);
    std::vector<CohortData> cohorts;
    for (const auto& path : a.inputs) cohorts.push_back(load_cohort_csv(path, schema));
    meta = pipeline::analyze_cohorts(cohorts, opts);
    for (const auto& c : meta.cohorts) blocks.push_back(c.stage1 ? c.stage1->block : EffectBlock{});
  } else {
    for (const auto& path : a.stage1_reports) {
      const json doc = read_json(path);
      pipeline::CohortAnalysis c;
      c.cohort_id = doc.value("cohort_id", fs::path(path).stem().string());
      EffectBlock block;
      try {
        block = report::effect_block_from_stage1(doc);
        c.two_stage = stage2::pool_within_cohort(block, opts.stage2);
      } catch (const ValidationError& e) {
        c.failures.push_back({c.cohort_id, "two-stage", e.what(), "validation"});
      } catch (const Error& e) {
        c.failures.push_back({c.cohort_id, "two-stage", e.what(), "numerical"});
      }
      blocks.push_back(std::move(block));
      meta.failures.insert(meta.failures.end(), c.failures.begin(), c.failures.end());
      meta.cohorts.push_back(std::move(c));
    }
    const auto est = pipeline::two_stage_estimates(meta.cohorts);
    if (est.empty()) {
      meta.failures.push_back({"global", "two-stage", "no cohort produced an estimate", "validation"});
    } else {
      meta.two_stage_global = stage3::pool_across_cohorts(est, opts.stage3);
    }
  }

  const fs::path out(a.out);
  for (std::size_t i = 0; i < meta.cohorts.size(); ++i) {
    const auto& c = meta.cohorts[i];
    const std::string stem = file_stem(c.cohort_id);
    if (c.stage1) {
      write_json(out / (stem + ".stage1.json"), report::stage1_json(c.cohort_id, *c.stage1, c.standardization));
    }
    if (c.two_stage) {
      write_json(out / (stem + ".stage2.json"), report::stage2_json(c.cohort_id, blocks[i], *c.two_stage));
      std::cout << report::stage2_text(c.cohort_id, *c.two_stage);
    }
    if (c.one_stage) write_json(out / (stem + ".onestage.json"), report::onestage_json(c.cohort_id, *c.one_stage));
  }
  for (const auto& f : meta.failures) {
    std::cerr << fmt::format("error: {} ({}): {}\n", f.cohort_id, f.method, f.message);
  }

  std::vector<std::pair<std::string, stage3::GlobalPooled>> rows;
  json global = {{"kind", "global"}, {"schema_version", report::kSchemaVersion}, {"methods", json::array()}};
  if (meta.two_stage_global) {
    rows.emplace_back("two-stage", *meta.two_stage_global);
    const json doc = report::stage3_json("two-stage", *meta.two_stage_global);
    write_json(out / "global.two-stage.json", doc);
    global["methods"].push_back(doc);
  }
  if (meta.one_stage_global) {
    rows.emplace_back("one-stage", *meta.one_stage_global);
    const json doc = report::stage3_json("one-stage", *meta.one_stage_global);
    write_json(out / "global.one-stage.json", doc);
    global["methods"].push_back(doc);
  }
  global["failures"] = failures_json(meta.failures);
  write_json(out / "global.json", global);
  const std::string table = report::global_text(rows);
  write_file(out / "global.txt", table);
  std::cout << table;

  if (rows.empty()) return exit_for(meta.failures);
  if (meta.any_unconverged()) {
    std::cerr << "warning: some fits did not converge; results were written with converged=false\n";
    return kNotConverged;
  }
  return kOk;
}

int cmd_forest(ForestArgs a) {
  const auto data = forest::from_report(read_json(a.report));
  forest::PlotOptions opts;
  opts.width = a.width;
  opts.height = a.height;
  opts.effect_label = a.effect_label;
  opts.zero_line = !a.no_zero_line;
  write_file(a.out, forest::render_svg(data, opts));
  return kOk;
}

int cmd_simulate(const CLI::App& cmd, SimulateArgs a) {
  const ConfigFill fill(cmd, a.config);
  sim::GridConfig grid = sim::GridConfig::from_config(fill.config());
  fill.str("out", "--out", a.out);
  fill.integer("threads", "--threads", a.threads);
  fill.list("methods", "--methods", a.methods);
  if (cmd.get_option("--reps")->count() || !fill.config().contains("reps")) grid.reps = a.reps;
  if (cmd.get_option("--seed")->count() || !fill.config().contains("seed")) {
    grid.seed = static_cast<std::uint64_t>(a.seed);
  }
  if (cmd.get_option("--n")->count()) grid.n = a.n;
  if (cmd.get_option("--rho")->count()) grid.rho = a.rho;
  if (!a.tau2.empty()) grid.tau2 = a.tau2;
  if (!a.K.empty()) grid.K = a.K;

  sim::RunOptions opts;
  opts.threads = a.threads;
  opts.methods.clear();
  for (const auto& m : a.methods) opts.methods.push_back(sim::parse_method(m));
  const auto report = sim::run_table1_grid(grid, opts);

  const fs::path out(a.out);
  write_file(out / "table1.csv", sim::grid_to_csv(report));
  write_json(out / "table1.json", report::grid_json(report));
  const std::string text = sim::grid_to_text(report);
  write_file(out / "table1.txt", text);
  std::cout << text;
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Hierarchical meta-analysis of correlated endpoints across cohorts", "hiermeta"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "hiermeta 0.1.0");

  Stage1Args s1;
  auto* c_stage1 = app.add_subcommand("stage1", "Fit per-endpoint models for one cohort");
  c_stage1->add_option("--input,-i", s1.input, "Cohort CSV")->required()->check(CLI::ExistingFile);
  c_stage1->add_option("--cohort-id", s1.cohort_id, "Cohort identifier (default: file stem)");
  c_stage1->add_option("--out,-o", s1.out, "Output directory");
  c_stage1->add_option("--config", s1.config, "key = value config file");
  add_schema_flags(c_stage1, s1.schema);

  PoolArgs pl;
  auto* c_pool = app.add_subcommand("pool", "Pool within and across cohorts");
  c_pool->add_option("--input,-i", pl.inputs, "Cohort CSVs")->check(CLI::ExistingFile);
  c_pool->add_option("--stage1", pl.stage1_reports, "Stage 1 JSON reports")->check(CLI::ExistingFile);
  c_pool->add_option("--method", pl.method, "two-stage, one-stage or both");
  c_pool->add_option("--weights", pl.weights, "Two-stage weights: diagonal or full");
  c_pool->add_option("--seed", pl.seed, "Seed for one-stage restarts");
  c_pool->add_option("--restarts", pl.restarts, "One-stage random restarts");
  c_pool->add_option("--out,-o", pl.out, "Output directory");
  c_pool->add_option("--config", pl.config, "key = value config file");
  add_schema_flags(c_pool, pl.schema);

  ForestArgs fa;
  auto* c_forest = app.add_subcommand("forest", "Draw a forest plot from a stage2 or stage3 report");
  c_forest->add_option("--report,-r", fa.report, "Report JSON")->required()->check(CLI::ExistingFile);
  c_forest->add_option("--out,-o", fa.out, "SVG output path");
  c_forest->add_option("--width", fa.width, "Width in pixels");
  c_forest->add_option("--height", fa.height, "Height in pixels (0: from row count)");
  c_forest->add_option("--effect-label", fa.effect_label, "Axis label");
  c_forest->add_flag("--no-zero-line", fa.no_zero_line, "Omit the reference line at zero");

  SimulateArgs sa;
  auto* c_sim = app.add_subcommand("simulate", "Run the simulation grid");
  c_sim->add_option("--config", sa.config, "Grid config file");
  c_sim->add_option("--out,-o", sa.out, "Output directory");
  c_sim->add_option("--reps", sa.reps, "Replicates per cell");
  c_sim->add_option("--seed", sa.seed, "Grid seed");
  c_sim->add_option("--threads", sa.threads, "Worker threads (0: all cores)");
  c_sim->add_option("--n", sa.n, "Individuals per dataset");
  c_sim->add_option("--rho", sa.rho, "Residual correlation");
  c_sim->add_option("--tau2", sa.tau2, "Heterogeneity values")->delimiter(',');
  c_sim->add_option("--K", sa.K, "Endpoint counts")->delimiter(',');
  c_sim->add_option("--methods", sa.methods, "two-stage and/or one-stage")->delimiter(',');

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalidInput;
  }

  try {
    if (c_stage1->parsed()) return cmd_stage1(*c_stage1, s1);
    if (c_pool->parsed()) return cmd_pool(*c_pool, pl);
    if (c_forest->parsed()) return cmd_forest(fa);
    return cmd_simulate(*c_sim, sa);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalidInput;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalidInput;
  }
}

}  // namespace hiermeta::cli
