#include "hscm/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hscm/csv.hpp"
#include "hscm/error.hpp"
#include "hscm/random.hpp"

namespace hscm {

namespace {

// Stage coordinates of the graph stream.
enum GraphStage : std::uint64_t { kDz, kDx, kZx, kUx, kDw, kWx, kUwx };

std::vector<int> sample_without_replacement(CounterStream& s, int population, int k) {
  std::vector<int> idx(population);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) {
    const int j = i + static_cast<int>(s.below(population - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

void add_within_level(Dag& dag, Level level, int count, std::uint64_t seed, GraphStage stage) {
  CounterStream s(seed, stream_tag::kGraph, stage);
  // Random causal order, then edges among unordered pairs oriented along it.
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  for (int i = count - 1; i > 0; --i) std::swap(order[i], order[s.below(i + 1)]);
  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < count; ++a) {
    for (int b = a + 1; b < count; ++b) pairs.emplace_back(a, b);
  }
  const int edges = level_edge_count(count);
  if (edges > static_cast<int>(pairs.size())) throw ConfigError("too many edges requested");
  for (int e : sample_without_replacement(s, static_cast<int>(pairs.size()), edges)) {
    const auto [a, b] = pairs[e];
    dag.add_edge({level, order[a]}, {level, order[b]});
  }
}

void add_between_levels(Dag& dag, Level from, int from_offset, int from_count, int edges,
                        std::uint64_t seed, GraphStage stage) {
  const int p = dag.counts().x;
  if (edges > from_count * p) throw ConfigError("too many cross-level edges requested");
  CounterStream s(seed, stream_tag::kGraph, stage);
  for (int e : sample_without_replacement(s, from_count * p, edges)) {
    dag.add_edge({from, from_offset + e / p}, {Level::Unit, e % p});
  }
}

double draw_noise(CounterStream& s, NoiseFamily noise) {
  return noise == NoiseFamily::gaussian_std ? s.normal() : s.uniform(-1.0, 1.0);
}

void standardise(EdgeFunction& f, const std::vector<double>& parent) {
  const auto n = static_cast<double>(parent.size());
  const double mean = std::accumulate(parent.begin(), parent.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : parent) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / std::max(1.0, n - 1.0));
  f.parent_mean = mean;
  f.parent_sd = sd > 0.0 ? sd : 1.0;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::string to_string(NoiseFamily noise) {
  return noise == NoiseFamily::gaussian_std ? "gaussian_std" : "uniform_pm1";
}

NoiseFamily noise_family_from_string(std::string_view s) {
  if (s == "gaussian_std" || s == "gaussian") return NoiseFamily::gaussian_std;
  if (s == "uniform_pm1" || s == "uniform") return NoiseFamily::uniform_pm1;
  throw ConfigError("unknown noise family '" + std::string(s) + "'");
}

void SimConfig::validate() const {
  if (n < 2 || m < 2) throw ConfigError("n and m must be at least 2");
  if (p < 2 || q < 2) throw ConfigError("p and q must be at least 2");
  if (r < 0) throw ConfigError("r must be nonnegative");
  if (2 * r > r * p) throw ConfigError("too many latent edges for p");
}

nlohmann::json SimConfig::to_json() const {
  return {{"n", n},
          {"m", m},
          {"p", p},
          {"q", q},
          {"r", r},
          {"noise", to_string(noise)},
          {"group_specific", group_specific},
          {"second_factor", second_factor},
          {"seed", seed}};
}

SimConfig SimConfig::from_json(const nlohmann::json& j) {
  try {
    SimConfig c;
    c.n = j.at("n").get<int>();
    c.m = j.at("m").get<int>();
    c.p = j.at("p").get<int>();
    c.q = j.at("q").get<int>();
    c.r = j.at("r").get<int>();
    c.noise = noise_family_from_string(j.at("noise").get<std::string>());
    c.group_specific = j.at("group_specific").get<bool>();
    c.second_factor = j.at("second_factor").get<bool>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("malformed simulation config: ") + ex.what());
  }
}

std::string to_string(FuncFamily family) {
  switch (family) {
    case FuncFamily::sin: return "sin";
    case FuncFamily::square: return "square";
    case FuncFamily::cubic: return "cubic";
    case FuncFamily::exp: return "exp";
    case FuncFamily::relu: return "relu";
    case FuncFamily::softplus: return "softplus";
  }
  return "?";
}

FuncFamily func_family_from_string(std::string_view s) {
  for (int f = 0; f < kFuncFamilies; ++f) {
    if (to_string(static_cast<FuncFamily>(f)) == s) return static_cast<FuncFamily>(f);
  }
  throw UsageError("unknown function family '" + std::string(s) + "'");
}

double apply_family(FuncFamily family, double x) {
  switch (family) {
    case FuncFamily::sin: return std::sin(x);
    case FuncFamily::square: return x * x;
    case FuncFamily::cubic: return x * x * x;
    case FuncFamily::exp: return std::exp(std::min(x, 5.0));
    case FuncFamily::relu: return std::max(0.0, x);
    case FuncFamily::softplus: return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  }
  return 0.0;
}

double EdgeFunction::evaluate(int group_label, double x) const {
  const double base = global(x);
  const auto it = group_scale.find(group_label);
  if (it == group_scale.end()) return base;
  return base + it->second.sign * it->second.coefficient * base;
}

int level_edge_count(int k) { return (k + 1) / 2; }

Dag gen_dag(const SimConfig& config) {
  config.validate();
  const int rw = config.second_factor ? config.r : 0;
  Dag dag(LevelCounts{config.q, config.second_factor ? config.q : 0, config.p, config.r + rw});
  add_within_level(dag, Level::GroupZ, config.q, config.seed, kDz);
  add_within_level(dag, Level::Unit, config.p, config.seed, kDx);
  add_between_levels(dag, Level::GroupZ, 0, config.q, level_edge_count(config.p), config.seed, kZx);
  add_between_levels(dag, Level::LatentU, 0, config.r, 2 * config.r, config.seed, kUx);
  if (config.second_factor) {
    add_within_level(dag, Level::GroupW, config.q, config.seed, kDw);
    add_between_levels(dag, Level::GroupW, 0, config.q, level_edge_count(config.p), config.seed,
                       kWx);
    add_between_levels(dag, Level::LatentU, config.r, rw, 2 * rw, config.seed, kUwx);
  }
  return dag;
}

GroundTruth gen_data(const Dag& dag, const SimConfig& config) {
  config.validate();
  const LevelCounts& c = dag.counts();
  if (c.z != config.q || c.x != config.p) throw ConfigError("DAG does not match the config");

  GroundTruth truth;
  truth.config = config;
  truth.dag = dag;
  HierDataset& data = truth.data;
  const int m = config.m;
  const int n = config.n;
  data.group_labels.resize(m);
  std::iota(data.group_labels.begin(), data.group_labels.end(), 1);
  data.unit_group.resize(static_cast<std::size_t>(n) * m);
  for (int j = 0; j < m; ++j) {
    std::fill_n(data.unit_group.begin() + static_cast<std::ptrdiff_t>(j) * n, n, j + 1);
  }
  data.z.assign(c.z, std::vector<double>(m));
  data.w.assign(c.w, std::vector<double>(m));
  truth.latent.assign(c.u, std::vector<double>(m));
  data.x.assign(c.x, std::vector<double>(data.unit_group.size()));

  // Mechanisms, drawn in edge order.
  CounterStream fs(config.seed, stream_tag::kFunctions, 0);
  CounterStream gs(config.seed, stream_tag::kFunctions, 1);
  for (const Edge& e : dag.edges()) {
    EdgeFunction f;
    f.edge = e;
    f.spec.family = static_cast<FuncFamily>(fs.below(kFuncFamilies));
    f.spec.sign = fs.below(2) == 0 ? 1 : -1;
    f.spec.coefficient = fs.uniform(0.5, 2.0);
    if (config.group_specific && e.from.level == Level::Unit && e.to.level == Level::Unit) {
      for (int label : data.group_labels) {
        FuncSpec g;
        g.family = f.spec.family;
        g.sign = gs.below(2) == 0 ? 1 : -1;
        g.coefficient = gs.uniform(0.5, 2.0);
        f.group_scale.emplace(label, g);
      }
    }
    truth.functions.push_back(std::move(f));
  }
  auto function_of = [&](const Edge& e) -> EdgeFunction& {
    for (auto& f : truth.functions) {
      if (f.edge == e) return f;
    }
    throw ConfigError("missing mechanism");
  };
  auto group_column = [&](NodeId v) -> std::vector<double>& {
    switch (v.level) {
      case Level::GroupZ: return data.z[v.index];
      case Level::GroupW: return data.w[v.index];
      case Level::LatentU: return truth.latent[v.index];
      case Level::Unit: break;
    }
    throw ConfigError("not a group-level node");
  };

  const auto order = topological_order(dag);
  // Group level (Z, W, U) first.
  for (NodeId v : order) {
    if (v.level == Level::Unit) continue;
    std::vector<double>& col = group_column(v);
    CounterStream noise(config.seed, stream_tag::kNoise, static_cast<std::uint64_t>(v.level),
                        v.index);
    for (int j = 0; j < m; ++j) col[j] = draw_noise(noise, config.noise);
    for (NodeId pa : dag.parents(v)) {
      EdgeFunction& f = function_of({pa, v});
      const std::vector<double>& pcol = group_column(pa);
      standardise(f, pcol);
      for (int j = 0; j < m; ++j) col[j] += f.global(pcol[j]);
    }
  }
  // Unit level in causal order, group-level parents entering per group.
  const auto total = data.unit_group.size();
  for (NodeId v : order) {
    if (v.level != Level::Unit) continue;
    std::vector<double>& col = data.x[v.index];
    CounterStream noise(config.seed, stream_tag::kNoise, static_cast<std::uint64_t>(v.level),
                        v.index);
    for (std::size_t i = 0; i < total; ++i) col[i] = draw_noise(noise, config.noise);
    for (NodeId pa : dag.parents(v)) {
      EdgeFunction& f = function_of({pa, v});
      if (pa.level == Level::Unit) {
        const std::vector<double>& pcol = data.x[pa.index];
        standardise(f, pcol);
        for (std::size_t i = 0; i < total; ++i) col[i] += f.evaluate(data.unit_group[i], pcol[i]);
      } else {
        const std::vector<double>& pcol = group_column(pa);
        standardise(f, pcol);
        for (std::size_t i = 0; i < total; ++i) col[i] += f.global(pcol[data.unit_group[i] - 1]);
      }
    }
  }
  return truth;
}

std::vector<TrueFunction> GroundTruth::true_functions() const {
  std::vector<TrueFunction> out;
  for (const EdgeFunction& f : functions) {
    if (f.edge.from.level == Level::LatentU) continue;
    TrueFunction t;
    t.edge = f.edge;
    t.global = [f](double x) { return f.global(x); };
    for (const auto& [label, scale] : f.group_scale) {
      t.per_group.emplace(label, [f, label](double x) { return f.evaluate(label, x); });
    }
    out.push_back(std::move(t));
  }
  return out;
}

nlohmann::json GroundTruth::to_json() const {
  nlohmann::json funcs = nlohmann::json::array();
  for (const EdgeFunction& f : functions) {
    nlohmann::json jf{{"from", node_name(f.edge.from)},
                      {"to", node_name(f.edge.to)},
                      {"family", to_string(f.spec.family)},
                      {"sign", f.spec.sign},
                      {"coefficient", f.spec.coefficient},
                      {"parent_mean", f.parent_mean},
                      {"parent_sd", f.parent_sd}};
    if (!f.group_scale.empty()) {
      nlohmann::json groups = nlohmann::json::array();
      for (const auto& [label, g] : f.group_scale) {
        groups.push_back({{"group", label}, {"sign", g.sign}, {"coefficient", g.coefficient}});
      }
      jf["group_specific"] = groups;
    }
    funcs.push_back(std::move(jf));
  }
  return {{"config", config.to_json()}, {"dag", hscm::to_json(dag)}, {"functions", funcs}};
}

EstimateOptions options_for(const SimConfig& config, const EstimateOptions& base) {
  EstimateOptions o = base;
  o.second_factor = config.second_factor;
  o.group_specific_functions = config.group_specific;
  return o;
}

ReplicateResult run_replicate(const SimConfig& config, int replicate, const EstimateOptions& base) {
  SimConfig c = config;
  c.seed = derive_seed(config.seed, static_cast<std::uint64_t>(replicate));
  ReplicateResult result;
  result.seed = c.seed;
  try {
    const GroundTruth truth = simulate(c);
    const HscmModel model = estimate(truth.data, options_for(c, base));
    result.shd = shd(model.graph, truth.dag.without_latent());
    result.rmse = function_rmse(model, truth.data, truth.true_functions());
  } catch (const Error& e) {
    result.failed = true;
    result.error = e.what();
  }
  return result;
}

std::vector<BenchmarkRow> run_benchmark(const std::vector<SimConfig>& configs,
                                        const BenchmarkOptions& options) {
  if (options.replicates < 2) throw ConfigError("replicates must be at least 2");
  for (const auto& c : configs) c.validate();
  const int reps = options.replicates;
  const int tasks = static_cast<int>(configs.size()) * reps;
  std::vector<ReplicateResult> results(tasks);
  EstimateOptions inner = options.estimate;
  inner.policy = ExecPolicy::serial;
  const bool parallel = options.policy == ExecPolicy::parallel;
  const int threads = options.jobs > 0 ? options.jobs : 0;
  auto body = [&](int t) { results[t] = run_replicate(configs[t / reps], t % reps, inner); };
  if (parallel && threads > 0) {
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (int t = 0; t < tasks; ++t) body(t);
  } else {
#pragma omp parallel for schedule(dynamic) if (parallel)
    for (int t = 0; t < tasks; ++t) body(t);
  }

  std::vector<BenchmarkRow> rows;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    BenchmarkRow row;
    row.config = configs[c];
    row.replicates = reps;
    std::vector<double> shds, rmses;
    for (int r = 0; r < reps; ++r) {
      const ReplicateResult& res = results[c * reps + r];
      row.runs.push_back(res);
      if (res.failed) {
        ++row.failures;
        continue;
      }
      shds.push_back(res.shd);
      if (res.rmse) rmses.push_back(*res.rmse);
    }
    auto mean_se = [](const std::vector<double>& v) -> std::pair<double, double> {
      const double mean = mean_of(v);
      if (v.size() < 2) return {mean, std::nan("")};
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      return {mean, std::sqrt(ss / (v.size() - 1.0) / v.size())};
    };
    if (!shds.empty()) {
      std::tie(row.shd_mean, row.shd_se) = mean_se(shds);
    } else {
      row.shd_mean = row.shd_se = std::nan("");
    }
    if (!rmses.empty()) {
      const auto [m, se] = mean_se(rmses);
      row.rmse_mean = m;
      row.rmse_se = se;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SimConfig> baseline_grid(std::uint64_t seed) {
  std::vector<SimConfig> grid;
  for (int pq : {4, 10}) {
    for (int m : {25, 50, 100, 250}) {
      for (int n : {25, 50, 100, 250}) {
        SimConfig c;
        c.n = n;
        c.m = m;
        c.p = pq;
        c.q = pq;
        c.r = pq == 4 ? 1 : 2;
        c.seed = seed;
        grid.push_back(c);
      }
    }
  }
  return grid;
}

std::string benchmark_csv(const std::vector<BenchmarkRow>& rows) {
  std::ostringstream out;
  out << "n,m,p,q,r,noise,group_specific,second_factor,replicates,shd_mean,shd_se,rmse_mean,"
         "rmse_se\n";
  auto num = [](std::optional<double> v) {
    return v && std::isfinite(*v) ? format_double(*v) : std::string("NA");
  };
  for (const BenchmarkRow& row : rows) {
    const SimConfig& c = row.config;
    out << c.n << ',' << c.m << ',' << c.p << ',' << c.q << ',' << c.r << ',' << to_string(c.noise)
        << ',' << (c.group_specific ? 1 : 0) << ',' << (c.second_factor ? 1 : 0) << ','
        << row.replicates << ',' << num(row.shd_mean) << ',' << num(row.shd_se) << ','
        << num(row.rmse_mean) << ',' << num(row.rmse_se) << '\n';
  }
  return out.str();
}

}  // namespace hscm
