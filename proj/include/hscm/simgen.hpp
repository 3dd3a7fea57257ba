#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hscm/exec.hpp"
#include "hscm/graph.hpp"
#include "hscm/hierarchy.hpp"

namespace hscm {

enum class NoiseFamily { gaussian_std, uniform_pm1 };

std::string to_string(NoiseFamily noise);
/// Accepts "gaussian_std", "gaussian", "uniform_pm1" and "uniform".
NoiseFamily noise_family_from_string(std::string_view s);

struct SimConfig {
  int n = 25;  // units per group
  int m = 25;  // groups
  int p = 4;
  int q = 4;
  int r = 1;
  NoiseFamily noise = NoiseFamily::gaussian_std;
  bool group_specific = false;
  bool second_factor = false;
  std::uint64_t seed = 1;

  /// Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  static SimConfig from_json(const nlohmann::json& j);
};

enum class FuncFamily { sin, square, cubic, exp, relu, softplus };

inline constexpr int kFuncFamilies = 6;
std::string to_string(FuncFamily family);
FuncFamily func_family_from_string(std::string_view s);
/// The unscaled library function; exp is clamped at 5 and softplus is
/// evaluated without overflow.
double apply_family(FuncFamily family, double x);

struct FuncSpec {
  FuncFamily family = FuncFamily::sin;
  int sign = 1;
  double coefficient = 1.0;

  double operator()(double x) const { return sign * coefficient * apply_family(family, x); }
};

/// Mechanism of one edge: spec applied to the standardised parent. For
/// group-specific edges, group j adds sign_j * coef_j times the global function.
struct EdgeFunction {
  Edge edge;
  FuncSpec spec;
  double parent_mean = 0.0;
  double parent_sd = 1.0;
  std::map<int, FuncSpec> group_scale;  // family unused; sign and coefficient only

  double global(double x) const { return spec((x - parent_mean) / parent_sd); }
  double evaluate(int group_label, double x) const;
};

struct GroundTruth {
  SimConfig config;
  Dag dag;  // includes latent nodes
  std::vector<EdgeFunction> functions;
  HierDataset data;
  std::vector<std::vector<double>> latent;  // U columns of length m

  std::vector<TrueFunction> true_functions() const;
  /// Config, DAG and function specifications (not the data).
  nlohmann::json to_json() const;
};

/// Number of within-level edges for a level with k variables.
int level_edge_count(int k);

Dag gen_dag(const SimConfig& config);
GroundTruth gen_data(const Dag& dag, const SimConfig& config);
inline GroundTruth simulate(const SimConfig& config) { return gen_data(gen_dag(config), config); }

/// Estimation options matching the extensions switched on in `config`.
EstimateOptions options_for(const SimConfig& config, const EstimateOptions& base);

struct ReplicateResult {
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  int shd = 0;
  std::optional<double> rmse;
};

struct BenchmarkRow {
  SimConfig config;
  int replicates = 0;
  int failures = 0;
  double shd_mean = 0.0;
  double shd_se = 0.0;
  std::optional<double> rmse_mean;
  std::optional<double> rmse_se;
  std::vector<ReplicateResult> runs;
};

struct BenchmarkOptions {
  int replicates = 20;
  EstimateOptions estimate;
  ExecPolicy policy = ExecPolicy::parallel;
  int jobs = 0;  // 0: OpenMP default
};

/// Replicate r of a config uses seed derive_seed(config.seed, r).
ReplicateResult run_replicate(const SimConfig& config, int replicate, const EstimateOptions& base);
std::vector<BenchmarkRow> run_benchmark(const std::vector<SimConfig>& configs,
                                        const BenchmarkOptions& options);

/// The 32 baseline settings: p = q in {4, 10} (r = 1 and 2), m and n each in
/// {25, 50, 100, 250}; ordered by p, then m, then n.
std::vector<SimConfig> baseline_grid(std::uint64_t seed);

std::string benchmark_csv(const std::vector<BenchmarkRow>& rows);

}  // namespace hscm
