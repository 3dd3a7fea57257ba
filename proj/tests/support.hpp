#pragma once

#include <cstdint>
#include <vector>

#include "hscm/graph.hpp"
#include "hscm/random.hpp"

namespace hscm::testing {

inline std::vector<double> normals(std::uint64_t seed, int n, double sd = 1.0,
                                   std::uint64_t lane = 0) {
  CounterStream s(seed, stream_tag::kTests, 2, lane);
  std::vector<double> v(n);
  for (double& e : v) e = sd * s.normal();
  return v;
}

inline std::vector<double> uniforms(std::uint64_t seed, int n, double lo, double hi,
                                    std::uint64_t lane = 0) {
  CounterStream s(seed, stream_tag::kTests, 3, lane);
  std::vector<double> v(n);
  for (double& e : v) e = s.uniform(lo, hi);
  return v;
}

/// Every DAG over `p` unit-level nodes (25 for p = 3), by filtering all subsets
/// of ordered pairs for acyclicity with a plain DFS.
inline std::vector<Dag> all_dags(int p) {
  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < p; ++a) {
    for (int b = 0; b < p; ++b) {
      if (a != b) pairs.emplace_back(a, b);
    }
  }
  std::vector<Dag> out;
  const std::uint32_t total = 1u << pairs.size();
  for (std::uint32_t mask = 0; mask < total; ++mask) {
    std::vector<std::vector<int>> adj(p);
    for (std::size_t e = 0; e < pairs.size(); ++e) {
      if (mask >> e & 1u) adj[pairs[e].first].push_back(pairs[e].second);
    }
    std::vector<int> state(p, 0);
    bool cyclic = false;
    auto dfs = [&](auto&& self, int v) -> void {
      state[v] = 1;
      for (int w : adj[v]) {
        if (state[w] == 1) cyclic = true;
        if (state[w] == 0) self(self, w);
      }
      state[v] = 2;
    };
    for (int v = 0; v < p; ++v) {
      if (state[v] == 0) dfs(dfs, v);
    }
    if (cyclic) continue;
    Dag d({0, 0, p, 0});
    for (std::size_t e = 0; e < pairs.size(); ++e) {
      if (mask >> e & 1u) d.add_edge({Level::Unit, pairs[e].first}, {Level::Unit, pairs[e].second});
    }
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace hscm::testing

#include <filesystem>
#include <string>

namespace hscm::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("hscm_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& f) const { return path_ / f; }

 private:
  std::filesystem::path path_;
};

}  // namespace hscm::testing

#include "hscm/hierarchy.hpp"

namespace hscm::testing {

/// Linear-Gaussian two-group model Z1 -> X1 -> X2 with known moments:
///   X1 = 0.3 + xi1_j + 2 Z1 + N(0, 0.5^2)
///   X2 = -1 + xi2_j + 1.5 (X1 - 0.2) + N(0, 1)
/// Z1 is parentless and resampled from its observed values {-0.5, 1}.
struct ToyScm {
  HscmModel model;
  HierDataset data;
  std::vector<double> xi1{-0.4, 0.4};
  std::vector<double> xi2{0.25, -0.25};

  double x1_mean(int j, double z) const { return 0.3 + xi1[j] + 2.0 * z; }
  double x2_mean_given_x1(int j, double x1) const { return -1.0 + xi2[j] + 1.5 * (x1 - 0.2); }
  static constexpr double kX1Var = 0.25;
  static constexpr double kX2Var = 1.0;
};

inline ToyScm toy_scm(int units_per_group = 5) {
  ToyScm t;
  HierDataset& d = t.data;
  d.group_labels = {1, 2};
  d.z = {{-0.5, 1.0}};
  d.x.assign(2, {});
  for (int j = 0; j < 2; ++j) {
    for (int i = 0; i < units_per_group; ++i) {
      d.unit_group.push_back(j + 1);
      d.x[0].push_back(0.1 * i + j);
      d.x[1].push_back(-0.2 * i + j);
    }
  }
  HscmModel& m = t.model;
  m.counts = {1, 0, 2, 0};
  m.graph = Dag(m.counts);
  m.graph.add_edge({Level::GroupZ, 0}, {Level::Unit, 0});
  m.graph.add_edge({Level::Unit, 0}, {Level::Unit, 1});
  m.group_dag_estimated = false;
  m.reference_group = 1;
  m.group_labels = d.group_labels;
  m.z_equations = {AdditiveFit(0.0, {}, std::nullopt, 1.0, 2, 1.0)};
  const auto groups = [&](const std::vector<double>& xi) {
    GroupEffects g;
    g.labels = {1, 2};
    g.intercepts = xi;
    g.sizes = {units_per_group, units_per_group};
    return g;
  };
  const int n = 2 * units_per_group;
  m.x_equations = {
      AdditiveFit(0.3, {FittedTerm::linear_term("Z1", 2.0, 0.0)}, groups(t.xi1), ToyScm::kX1Var, n, 3.0),
      AdditiveFit(-1.0, {FittedTerm::linear_term("X1", 1.5, 0.2)}, groups(t.xi2), ToyScm::kX2Var, n,
                  3.0)};
  m.deviations.resize(2);
  return t;
}

}  // namespace hscm::testing
