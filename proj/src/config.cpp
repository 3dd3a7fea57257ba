#include "hscm/config.hpp"

#include <set>
#include <sstream>

#include <toml.hpp>

#include "hscm/csv.hpp"
#include "hscm/error.hpp"

namespace hscm {

namespace {

std::string where(const std::string& source, const toml::source_region& r) {
  return source + ":" + std::to_string(r.begin.line);
}

// A TOML table whose keys must all be consumed.
class Section {
 public:
  Section(const toml::table* table, std::string name, std::string source)
      : table_(table), name_(std::move(name)), source_(std::move(source)) {}

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    seen_.insert(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!node->is_boolean()) fail(*node, key, "a boolean");
      out = *node->value<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!node->is_integer()) fail(*node, key, "an integer");
      const std::int64_t v = *node->value<std::int64_t>();
      if constexpr (std::is_unsigned_v<T>) {
        if (v < 0) fail(*node, key, "a nonnegative integer");
      }
      out = static_cast<T>(v);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!node->is_number()) fail(*node, key, "a number");
      out = *node->value<double>();
    } else {
      if (!node->is_string()) fail(*node, key, "a string");
      out = *node->value<std::string>();
    }
  }

  void read_grid(const std::string& key, std::vector<double>& out) {
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    seen_.insert(key);
    const toml::array* arr = node->as_array();
    if (!arr) fail(*node, key, "an array of numbers");
    out.clear();
    for (const toml::node& v : *arr) {
      if (!v.is_number()) fail(v, key, "an array of numbers");
      out.push_back(*v.value<double>());
    }
  }

  // Throws for keys nobody read, except the listed sub-tables.
  void finish(std::initializer_list<std::string> children = {}) const {
    if (!table_) return;
    for (const auto& [key, node] : *table_) {
      const std::string k(key.str());
      if (seen_.contains(k)) continue;
      if (std::find(children.begin(), children.end(), k) != children.end()) continue;
      throw ConfigError(where(source_, node.source()) + ": unknown key '" + k + "' in " + name_);
    }
  }

  const std::string& source() const { return source_; }

 private:
  [[noreturn]] void fail(const toml::node& node, const std::string& key,
                         const std::string& expected) const {
    throw ConfigError(where(source_, node.source()) + ": " + name_ + "." + key + " must be " +
                      expected);
  }

  const toml::table* table_;
  std::string name_;
  std::string source_;
  std::set<std::string> seen_;
};

void read_simulation(Section& s, SimConfig& c) {
  s.read("n", c.n);
  s.read("m", c.m);
  s.read("p", c.p);
  s.read("q", c.q);
  s.read("r", c.r);
  std::string noise = to_string(c.noise);
  s.read("noise", noise);
  c.noise = noise_family_from_string(noise);
  s.read("group_specific", c.group_specific);
  s.read("second_factor", c.second_factor);
  s.read("seed", c.seed);
}

const toml::table* sub_table(const toml::table& parent, const std::string& key,
                             const std::string& source) {
  const toml::node* node = parent.get(key);
  if (!node) return nullptr;
  if (!node->is_table()) {
    throw ConfigError(where(source, node->source()) + ": '" + key + "' must be a table");
  }
  return node->as_table();
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  nlohmann::json s = nlohmann::json::array();
  for (const SimConfig& c : settings) s.push_back(c.to_json());
  return {{"simulation", simulation.to_json()},
          {"estimation", estimation.to_json()},
          {"replicates", replicates},
          {"settings", s}};
}

RunConfig parse_config(std::string_view toml_text, const std::string& source) {
  toml::table root;
  try {
    root = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    throw ConfigError(where(source, e.source()) + ": " + std::string(e.description()));
  }
  RunConfig cfg;
  try {
    Section top(&root, "config", source);
    top.finish({"simulation", "estimation", "benchmark", "setting"});

    Section sim(sub_table(root, "simulation", source), "simulation", source);
    read_simulation(sim, cfg.simulation);
    sim.finish();

    const toml::table* est_table = sub_table(root, "estimation", source);
    Section est(est_table, "estimation", source);
    EstimateOptions& o = cfg.estimation;
    est.read("alpha", o.alpha);
    est.read("skip_group_dag", o.skip_group_dag);
    est.read("group_specific_functions", o.group_specific_functions);
    est.read("second_factor", o.second_factor);
    std::string kind = to_string(o.group_parent_kind);
    est.read("group_parent_kind", kind);
    o.group_parent_kind = term_kind_from_string(kind);
    kind = to_string(o.refit_group_parent_kind);
    est.read("refit_group_parent_kind", kind);
    o.refit_group_parent_kind = term_kind_from_string(kind);
    est.finish({"cam", "smooth"});

    if (est_table) {
      Section cam(sub_table(*est_table, "cam", source), "estimation.cam", source);
      cam.read("pns_max_parents", o.cam_config.pns_max_parents);
      cam.read("prune_alpha", o.cam_config.prune_alpha);
      int max_edges = -1;
      cam.read("max_edges", max_edges);
      if (max_edges >= 0) o.cam_config.max_edges = max_edges;
      cam.read("min_obs", o.cam_config.min_obs);
      cam.finish();

      SmoothSpec& spec = o.cam_config.score_spec;
      Section sm(sub_table(*est_table, "smooth", source), "estimation.smooth", source);
      sm.read("n_basis", spec.n_basis);
      sm.read("penalty_order", spec.penalty_order);
      sm.read_grid("lambda_grid", spec.lambda_grid);
      std::string placement = spec.knot_placement == KnotPlacement::quantile ? "quantile" : "uniform";
      sm.read("knot_placement", placement);
      if (placement == "quantile") {
        spec.knot_placement = KnotPlacement::quantile;
      } else if (placement == "uniform") {
        spec.knot_placement = KnotPlacement::uniform;
      } else {
        throw ConfigError(source + ": estimation.smooth.knot_placement must be quantile or uniform");
      }
      sm.read("gcv_gamma", spec.gcv_gamma);
      sm.finish();
    }

    Section bench(sub_table(root, "benchmark", source), "benchmark", source);
    bench.read("replicates", cfg.replicates);
    bench.finish();

    if (const toml::node* node = root.get("setting")) {
      const toml::array* arr = node->as_array();
      if (!arr || !arr->is_array_of_tables()) {
        throw ConfigError(where(source, node->source()) + ": 'setting' must be an array of tables");
      }
      for (const toml::node& t : *arr) {
        SimConfig c = cfg.simulation;
        Section s(t.as_table(), "setting", source);
        read_simulation(s, c);
        s.finish();
        c.validate();
        cfg.settings.push_back(c);
      }
    }
    cfg.simulation.validate();
    o.validate();
    if (cfg.replicates < 1) throw ConfigError(source + ": benchmark.replicates must be positive");
  } catch (const UsageError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text(path), path.string());
}

}  // namespace hscm
