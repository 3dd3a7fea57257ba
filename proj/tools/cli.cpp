#include "cli.hpp"

#include <filesystem>
#include <map>
#include <optional>

#include <omp.h>

#include <CLI11.hpp>

#include "hscm/config.hpp"
#include "hscm/csv.hpp"
#include "hscm/error.hpp"
#include "hscm/intervene.hpp"
#include "manifest.hpp"

namespace hscm::cli {

namespace fs = std::filesystem;

namespace {

// Files of one run, written together after every output path was checked.
class Outputs {
 public:
  explicit Outputs(bool force) : force_(force) {}

  void add(const fs::path& path, std::string bytes) { files_.emplace_back(path, std::move(bytes)); }

  void write(RunManifest& manifest, const fs::path& manifest_path) {
    for (const auto& [path, bytes] : files_) check(path);
    check(manifest_path);
    for (const auto& [path, bytes] : files_) {
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      write_text(path, bytes);
      manifest.add_output(path, bytes);
    }
    if (manifest_path.has_parent_path()) fs::create_directories(manifest_path.parent_path());
    write_text(manifest_path, manifest.to_json().dump(2) + "\n");
  }

 private:
  void check(const fs::path& path) const {
    if (!force_ && fs::exists(path)) {
      throw UsageError("refusing to overwrite " + path.string() + " (use --force)");
    }
  }

  bool force_;
  std::vector<std::pair<fs::path, std::string>> files_;
};

std::string json_text(const nlohmann::json& j) { return j.dump(2) + "\n"; }

HierDataset load_data(RunManifest& manifest, const fs::path& groups, const fs::path& units,
                      const std::optional<fs::path>& factor2) {
  manifest.add_input(groups, read_text(groups));
  manifest.add_input(units, read_text(units));
  if (factor2) manifest.add_input(*factor2, read_text(*factor2));
  return read_dataset(groups, units, factor2);
}

void set_jobs(int jobs) {
  if (jobs < 0) throw UsageError("--jobs must be nonnegative");
  if (jobs > 0) omp_set_num_threads(jobs);
}

struct DiscoverArgs {
  std::string groups, units, factor2, config, out_model, out_dot, out_dag_json, manifest;
  std::optional<double> alpha;
  bool skip_group_dag = false, group_specific = false, serial = false, force = false;
  int jobs = 0;
};

void discover(const DiscoverArgs& a, std::ostream& out) {
  set_jobs(a.jobs);
  RunManifest manifest("discover", 0);
  EstimateOptions opts;
  if (!a.config.empty()) {
    manifest.add_input(a.config, read_text(a.config));
    opts = load_config(a.config).estimation;
  }
  if (a.alpha) opts.alpha = *a.alpha;
  if (a.skip_group_dag) opts.skip_group_dag = true;
  if (a.group_specific) opts.group_specific_functions = true;
  if (!a.factor2.empty()) opts.second_factor = true;
  if (a.serial) opts.policy = ExecPolicy::serial;
  opts.validate();

  const std::optional<fs::path> f2 =
      a.factor2.empty() ? std::nullopt : std::optional<fs::path>(a.factor2);
  const HierDataset data = load_data(manifest, a.groups, a.units, f2);
  manifest.set_config(opts.to_json());
  const HscmModel model = estimate(data, opts);

  Outputs outputs(a.force);
  outputs.add(a.out_model, json_text(model.to_json()));
  if (!a.out_dot.empty()) outputs.add(a.out_dot, to_dot(model.graph));
  if (!a.out_dag_json.empty()) outputs.add(a.out_dag_json, json_text(to_json(model.graph)));
  const fs::path manifest_path =
      a.manifest.empty() ? fs::path(a.out_model + ".manifest.json") : fs::path(a.manifest);
  outputs.write(manifest, manifest_path);
  out << model.graph.edge_count() << " edges; model written to " << a.out_model << "\n";
  for (const std::string& w : model.warnings) out << "warning: " << w << "\n";
}

struct SimulateArgs {
  std::string config, out_dir, noise;
  std::optional<int> n, m, p, q, r;
  std::optional<std::uint64_t> seed;
  bool group_specific = false, second_factor = false, force = false;
};

void simulate_cmd(const SimulateArgs& a, std::ostream& out) {
  SimConfig c;
  std::optional<std::string> config_bytes;
  if (!a.config.empty()) {
    config_bytes = read_text(a.config);
    c = load_config(a.config).simulation;
  }
  if (a.n) c.n = *a.n;
  if (a.m) c.m = *a.m;
  if (a.p) c.p = *a.p;
  if (a.q) c.q = *a.q;
  if (a.r) c.r = *a.r;
  if (!a.noise.empty()) c.noise = noise_family_from_string(a.noise);
  if (a.group_specific) c.group_specific = true;
  if (a.second_factor) c.second_factor = true;
  if (a.seed) c.seed = *a.seed;
  c.validate();

  RunManifest manifest("simulate", c.seed);
  if (config_bytes) manifest.add_input(a.config, *config_bytes);
  manifest.set_config(c.to_json());
  const GroundTruth truth = simulate(c);

  const fs::path dir(a.out_dir);
  Outputs outputs(a.force);
  outputs.add(dir / "groups.csv", groups_csv(truth.data));
  outputs.add(dir / "units.csv", units_csv(truth.data));
  if (c.second_factor) outputs.add(dir / "factor2.csv", factor2_csv(truth.data));
  outputs.add(dir / "truth.json", json_text(truth.to_json()));
  outputs.add(dir / "truth.dot", to_dot(truth.dag));
  outputs.write(manifest, dir / "manifest.json");
  out << "simulated " << truth.data.m() << " groups and " << truth.data.n_units()
      << " units into " << a.out_dir << "\n";
}

struct InterveneArgs {
  std::string model, groups, units, factor2, target, summary = "all", out_dir;
  double value = 0.0;
  int M = 1, N = 1, jobs = 0;
  std::uint64_t seed = 1;
  bool serial = false, force = false;
};

void intervene_cmd(const InterveneArgs& a, std::ostream& out) {
  set_jobs(a.jobs);
  RunManifest manifest("intervene", a.seed);
  const std::string model_text = read_text(a.model);
  manifest.add_input(a.model, model_text);
  HscmModel model;
  try {
    model = HscmModel::from_json(nlohmann::json::parse(model_text));
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(a.model + ": " + e.what());
  }
  const std::optional<fs::path> f2 =
      a.factor2.empty() ? std::nullopt : std::optional<fs::path>(a.factor2);
  HierDataset data = load_data(manifest, a.groups, a.units, f2);
  if (model.counts.w == 0) data.w.clear();

  InterventionRequest req;
  std::optional<NodeId> target;
  try {
    target = parse_node_name(a.target);
  } catch (const Error&) {
  }
  if (!target || !model.graph.contains(*target)) {
    std::string valid;
    for (NodeId v : model.graph.nodes()) valid += (valid.empty() ? "" : ", ") + node_name(v);
    throw UsageError("unknown target '" + a.target + "'; valid targets: " + valid);
  }
  req.target = target;
  req.value = a.value;
  req.M = a.M;
  req.N = a.N;
  req.seed = a.seed;
  req.validate();
  const SummaryLevel level = summary_level_from_string(a.summary);
  manifest.set_config({{"target", a.target},
                       {"value", a.value},
                       {"M", a.M},
                       {"N", a.N},
                       {"seed", a.seed},
                       {"summary", a.summary}});

  const InterventionResult result =
      do_intervention(model, data, req, a.serial ? ExecPolicy::serial : ExecPolicy::parallel);
  const nlohmann::json summary = summarize(result, level);

  const fs::path dir(a.out_dir);
  Outputs outputs(a.force);
  outputs.add(dir / "ztilde.csv", ztilde_csv(result));
  outputs.add(dir / "xtilde.csv", xtilde_csv(result));
  outputs.add(dir / "summary.json", json_text(summary));
  outputs.write(manifest, dir / "manifest.json");
  out << "simulated " << result.group_rows() << " group rows and " << result.unit_rows()
      << " unit rows into " << a.out_dir << "\n";
}

struct BenchmarkArgs {
  std::string config, out, runs;
  bool baseline_grid = false, serial = false, force = false;
  std::optional<int> replicates;
  std::optional<std::uint64_t> seed;
  int jobs = 0;
};

std::string runs_csv(const std::vector<BenchmarkRow>& rows) {
  std::string s = "n,m,p,q,r,noise,group_specific,second_factor,replicate,seed,failed,shd,rmse\n";
  for (const BenchmarkRow& row : rows) {
    const SimConfig& c = row.config;
    for (std::size_t r = 0; r < row.runs.size(); ++r) {
      const ReplicateResult& res = row.runs[r];
      s += std::to_string(c.n) + ',' + std::to_string(c.m) + ',' + std::to_string(c.p) + ',' +
           std::to_string(c.q) + ',' + std::to_string(c.r) + ',' + to_string(c.noise) + ',' +
           (c.group_specific ? "1" : "0") + ',' + (c.second_factor ? "1" : "0") + ',' +
           std::to_string(r) + ',' + std::to_string(res.seed) + ',' + (res.failed ? "1" : "0") +
           ',' + (res.failed ? "NA" : std::to_string(res.shd)) + ',' +
           (res.rmse ? format_double(*res.rmse) : "NA") + '\n';
    }
  }
  return s;
}

void benchmark_cmd(const BenchmarkArgs& a, std::ostream& out) {
  RunConfig cfg;
  std::optional<std::string> config_bytes;
  if (!a.config.empty()) {
    config_bytes = read_text(a.config);
    cfg = load_config(a.config);
  }
  std::vector<SimConfig> settings;
  if (a.baseline_grid) {
    settings = baseline_grid(a.seed.value_or(cfg.simulation.seed));
  } else if (!cfg.settings.empty()) {
    settings = cfg.settings;
  } else {
    settings = {cfg.simulation};
  }
  if (a.seed) {
    for (SimConfig& c : settings) c.seed = *a.seed;
  }
  if (a.jobs < 0) throw UsageError("--jobs must be nonnegative");
  BenchmarkOptions opts;
  opts.replicates = a.replicates.value_or(cfg.replicates);
  opts.estimate = cfg.estimation;
  opts.policy = a.serial ? ExecPolicy::serial : ExecPolicy::parallel;
  opts.jobs = a.jobs;

  nlohmann::json resolved = cfg.to_json();
  resolved["settings"] = nlohmann::json::array();
  for (const SimConfig& c : settings) resolved["settings"].push_back(c.to_json());
  resolved["replicates"] = opts.replicates;
  RunManifest manifest("benchmark", settings.empty() ? 0 : settings.front().seed);
  if (config_bytes) manifest.add_input(a.config, *config_bytes);
  manifest.set_config(resolved);

  const auto rows = run_benchmark(settings, opts);
  Outputs outputs(a.force);
  outputs.add(a.out, benchmark_csv(rows));
  if (!a.runs.empty()) outputs.add(a.runs, runs_csv(rows));
  outputs.write(manifest, a.out + ".manifest.json");
  int failures = 0;
  for (const auto& row : rows) failures += row.failures;
  out << rows.size() << " settings x " << opts.replicates << " replicates written to " << a.out;
  if (failures > 0) out << " (" << failures << " failed replicates)";
  out << "\n";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical causal structure learning for group/unit data"};
  app.set_version_flag("--version", std::string(HSCM_VERSION));
  app.require_subcommand(1);

  DiscoverArgs d;
  auto* dc = app.add_subcommand("discover", "Estimate the hierarchical DAG and causal functions");
  dc->add_option("--groups", d.groups, "groups.csv (group_id,Z1..Zq)")->required();
  dc->add_option("--units", d.units, "units.csv (group_id,X1..Xp)")->required();
  dc->add_option("--factor2", d.factor2, "factor2.csv (group_id,W1..); enables the second factor");
  dc->add_option("--config", d.config, "TOML run configuration");
  dc->add_option("--alpha", d.alpha, "Significance level for group-level parents");
  dc->add_flag("--skip-group-dag", d.skip_group_dag, "Do not estimate the DAG among Z");
  dc->add_flag("--group-specific", d.group_specific, "Fit group-specific unit-to-unit functions");
  dc->add_option("--out-model", d.out_model, "Model JSON output")->required();
  dc->add_option("--out-dot", d.out_dot, "Graphviz DOT output");
  dc->add_option("--out-dag-json", d.out_dag_json, "DAG JSON output");
  dc->add_option("--manifest", d.manifest, "Run manifest path (default: <out-model>.manifest.json)");
  dc->add_option("--jobs", d.jobs, "Worker threads (0: all)");
  dc->add_flag("--serial", d.serial, "Use the serial reference path");
  dc->add_flag("--force", d.force, "Overwrite existing outputs");

  SimulateArgs s;
  auto* sc = app.add_subcommand("simulate", "Generate a synthetic two-level dataset");
  sc->add_option("--config", s.config, "TOML run configuration ([simulation] table)");
  sc->add_option("--n", s.n, "Units per group");
  sc->add_option("--m", s.m, "Groups");
  sc->add_option("--p", s.p, "Unit-level variables");
  sc->add_option("--q", s.q, "Group-level variables");
  sc->add_option("--r", s.r, "Latent group-level confounders");
  sc->add_option("--noise", s.noise, "gaussian_std or uniform_pm1");
  sc->add_flag("--group-specific", s.group_specific, "Group-specific unit-to-unit functions");
  sc->add_flag("--second-factor", s.second_factor, "Add a second grouping factor W");
  sc->add_option("--seed", s.seed, "Random seed");
  sc->add_option("--out-dir", s.out_dir, "Output directory")->required();
  sc->add_flag("--force", s.force, "Overwrite existing outputs");

  InterveneArgs iv;
  auto* ic = app.add_subcommand("intervene", "Simulate a hard intervention from a fitted model");
  ic->add_option("--model", iv.model, "Model JSON from discover")->required();
  ic->add_option("--groups", iv.groups, "groups.csv used for discovery")->required();
  ic->add_option("--units", iv.units, "units.csv used for discovery")->required();
  ic->add_option("--factor2", iv.factor2, "factor2.csv used for discovery");
  ic->add_option("--target", iv.target, "Intervened variable, e.g. Z1 or X2")->required();
  ic->add_option("--value", iv.value, "Intervened value")->required();
  ic->add_option("--M", iv.M, "Group-level samples per group")->check(CLI::PositiveNumber);
  ic->add_option("--N", iv.N, "Unit-level samples per group-level sample")
      ->check(CLI::PositiveNumber);
  ic->add_option("--seed", iv.seed, "Random seed");
  ic->add_option("--summary", iv.summary, "Summary level: group, unit or all");
  ic->add_option("--out-dir", iv.out_dir, "Output directory")->required();
  ic->add_option("--jobs", iv.jobs, "Worker threads (0: all)");
  ic->add_flag("--serial", iv.serial, "Use the serial reference path");
  ic->add_flag("--force", iv.force, "Overwrite existing outputs");

  BenchmarkArgs b;
  auto* bc = app.add_subcommand("benchmark", "Run the synthetic benchmark");
  bc->add_option("--config", b.config, "TOML run configuration ([[setting]] tables)");
  bc->add_flag("--baseline-grid", b.baseline_grid, "The 32 baseline settings");
  bc->add_option("--replicates", b.replicates, "Replicates per setting");
  bc->add_option("--seed", b.seed, "Master seed of every setting");
  bc->add_option("--jobs", b.jobs, "Worker threads for replicates (0: all)");
  bc->add_flag("--serial", b.serial, "Run replicates serially");
  bc->add_option("--out", b.out, "Benchmark CSV output")->required();
  bc->add_option("--runs", b.runs, "Per-replicate CSV output");
  bc->add_flag("--force", b.force, "Overwrite existing outputs");

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (dc->parsed()) discover(d, out);
    if (sc->parsed()) simulate_cmd(s, out);
    if (ic->parsed()) intervene_cmd(iv, out);
    if (bc->parsed()) benchmark_cmd(b, out);
  } catch (const EstimationError& e) {
    err << "estimation failed: " << e.what() << "\n";
    return kExitEstimation;
  } catch (const FitError& e) {
    err << "estimation failed: " << e.what() << "\n";
    return kExitEstimation;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace hscm::cli
