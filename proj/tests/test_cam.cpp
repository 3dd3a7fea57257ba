#include <doctest.h>

#include <cmath>
#include <vector>

#include "hscm/cam.hpp"
#include "hscm/error.hpp"
#include "support.hpp"

using namespace hscm;
using hscm::testing::all_dags;
using hscm::testing::normals;
using hscm::testing::uniforms;

namespace {

NodeId x(int i) { return {Level::Unit, i}; }

std::vector<std::vector<double>> chain(std::uint64_t seed, int n) {
  auto x1 = uniforms(seed, n, -2, 2);
  const auto e2 = normals(seed, n, 0.2, 1);
  const auto e3 = normals(seed, n, 0.2, 2);
  std::vector<double> x2(n), x3(n);
  for (int i = 0; i < n; ++i) {
    x2[i] = std::sin(1.5 * x1[i]) * 2 + e2[i];
    x3[i] = std::pow(x2[i], 2) * 0.5 + e3[i];
  }
  return {x1, x2, x3};
}

}  // namespace

TEST_CASE("neighbourhood selection") {
  CamConfig config;
  SUBCASE("two variables are each other's candidates") {
    const std::vector<std::vector<double>> d{normals(1, 50), normals(2, 50)};
    const auto c = preliminary_neighborhood(d, Level::Unit, config);
    CHECK(c == std::vector<std::vector<int>>{{1}, {0}});
  }
  SUBCASE("chain keeps true neighbours under a cap of one") {
    config.pns_max_parents = 1;
    const auto d = chain(3, 500);
    const auto c = preliminary_neighborhood(d, Level::Unit, config);
    CHECK(std::find(c[1].begin(), c[1].end(), 0) != c[1].end());
    CHECK(std::find(c[1].begin(), c[1].end(), 2) != c[1].end());
    for (int k = 0; k < 3; ++k) {
      for (int j : c[k]) CHECK(std::find(c[j].begin(), c[j].end(), k) != c[j].end());
    }
  }
  SUBCASE("constant variable is named") {
    const std::vector<std::vector<double>> d{normals(1, 50), std::vector<double>(50, 2.0)};
    try {
      preliminary_neighborhood(d, Level::Unit, config);
      FAIL("expected a usage error");
    } catch (const UsageError& e) {
      CHECK(std::string(e.what()).find("X2") != std::string::npos);
    }
  }
}

TEST_CASE("greedy search recovers a nonlinear chain") {
  const auto d = chain(4, 500);
  CamConfig config;
  std::vector<GreedyStep> trace;
  const auto cand = preliminary_neighborhood(d, Level::Unit, config);
  const Dag full = greedy_order_search(d, Level::Unit, cand, config, &trace);
  for (const auto& step : trace) CHECK(step.gain > 1e-3 * 500);
  CHECK(full.has_edge(x(0), x(1)));
  CHECK(full.has_edge(x(1), x(2)));
  const Dag pruned = prune(d, full, Level::Unit, config);
  for (const Edge& e : pruned.edges()) CHECK(full.has_edge(e.from, e.to));
  CHECK(pruned.has_edge(x(0), x(1)));
  CHECK(pruned.has_edge(x(1), x(2)));
  CHECK(pruned.edge_count() == 2);
}

TEST_CASE("max_edges caps the search") {
  const auto d = chain(5, 300);
  CamConfig config;
  config.max_edges = 1;
  const auto cand = preliminary_neighborhood(d, Level::Unit, config);
  CHECK(greedy_order_search(d, Level::Unit, cand, config).edge_count() == 1);
}

TEST_CASE("pruning removes an injected noise parent") {
  int removed = 0;
  const int reps = 40;
  for (int r = 0; r < reps; ++r) {
    const auto a = uniforms(100 + r, 300, -2, 2);
    const auto noise = normals(100 + r, 300, 1.0, 1);
    const auto e = normals(100 + r, 300, 0.3, 2);
    std::vector<double> y(300);
    for (int i = 0; i < 300; ++i) y[i] = std::cos(a[i]) + e[i];
    const std::vector<std::vector<double>> d{a, noise, y};
    Dag dag({0, 0, 3, 0});
    dag.add_edge(x(0), x(2));
    dag.add_edge(x(1), x(2));
    const Dag pruned = prune(d, dag, Level::Unit, CamConfig{});
    CHECK(pruned.has_edge(x(0), x(2)));
    removed += !pruned.has_edge(x(1), x(2));
  }
  CHECK(removed >= reps - 1);
}

TEST_CASE("trivial cam inputs") {
  const std::vector<std::vector<double>> one{normals(7, 40)};
  CHECK(cam(one, Level::Unit, CamConfig{}).edge_count() == 0);
  CHECK(cam(one, Level::Unit, CamConfig{}).node_count() == 1);
  const std::vector<std::vector<double>> tiny{normals(7, 10), normals(8, 10)};
  CHECK_THROWS_AS(cam(tiny, Level::Unit, CamConfig{}), EstimationError);
  const Dag empty({0, 0, 2, 0});
  CHECK(prune(tiny, empty, Level::Unit, CamConfig{}) == empty);
}

TEST_CASE("cam output is typed by level") {
  const auto d = chain(9, 200);
  const Dag g = cam(d, Level::GroupZ, CamConfig{});
  CHECK(g.counts() == LevelCounts{3, 0, 0, 0});
  for (const Edge& e : g.edges()) CHECK(e.from.level == Level::GroupZ);
}

TEST_CASE("serial and parallel search agree bitwise") {
  const auto d = chain(10, 400);
  CamConfig serial;
  serial.policy = ExecPolicy::serial;
  CamConfig parallel;
  std::vector<GreedyStep> ts, tp;
  const auto cs = preliminary_neighborhood(d, Level::Unit, serial);
  const auto cp = preliminary_neighborhood(d, Level::Unit, parallel);
  CHECK(cs == cp);
  const Dag a = greedy_order_search(d, Level::Unit, cs, serial, &ts);
  const Dag b = greedy_order_search(d, Level::Unit, cp, parallel, &tp);
  CHECK(a == b);
  REQUIRE(ts.size() == tp.size());
  for (std::size_t i = 0; i < ts.size(); ++i) CHECK(ts[i].gain == tp[i].gain);
}

TEST_CASE("exhaustive enumeration has 25 DAGs on 3 nodes") {
  CHECK(all_dags(3).size() == 25);
  CHECK(all_dags(2).size() == 3);
}
