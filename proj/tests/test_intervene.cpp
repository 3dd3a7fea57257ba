#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "hscm/error.hpp"
#include "hscm/intervene.hpp"
#include "hscm/simgen.hpp"
#include "support.hpp"

using namespace hscm;
using hscm::testing::toy_scm;

namespace {

const NodeId kZ1{Level::GroupZ, 0};
const NodeId kX1{Level::Unit, 0};
const NodeId kX2{Level::Unit, 1};

std::string error_of(const auto& f) {
  try {
    f();
  } catch (const UsageError& e) {
    return e.what();
  }
  return {};
}

std::size_t lines(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

}  // namespace

TEST_CASE("intervened variable is constant and shapes follow M and N") {
  const auto t = toy_scm();
  const InterventionResult r = do_intervention(t.model, t.data, {kZ1, 1.0, 3, 4, 7});
  CHECK(r.group_rows() == 6);
  CHECK(r.unit_rows() == 24);
  CHECK(r.z[0] == std::vector<double>(6, 1.0));
  CHECK(r.x[0].size() == 24);
  CHECK(r.row_group(0) == 1);
  CHECK(r.row_group(2) == 1);
  CHECK(r.row_group(3) == 2);
  CHECK(r.row_subgroup(4) == 1);

  const InterventionResult u = do_intervention(t.model, t.data, {kX1, -2.5, 2, 5, 7});
  CHECK(u.x[0] == std::vector<double>(20, -2.5));
}

TEST_CASE("interventional moments of the linear model") {
  const auto t = toy_scm();
  const InterventionResult r = do_intervention(t.model, t.data, {kZ1, 1.0, 200, 50, 3});
  for (int j = 0; j < 2; ++j) {
    double s1 = 0, s2 = 0, ss2 = 0;
    const std::size_t begin = static_cast<std::size_t>(j) * 200 * 50;
    const std::size_t n = 200 * 50;
    for (std::size_t i = begin; i < begin + n; ++i) {
      s1 += r.x[0][i];
      s2 += r.x[1][i];
      ss2 += r.x[1][i] * r.x[1][i];
    }
    const double m1 = s1 / n, m2 = s2 / n;
    const double v2 = ss2 / n - m2 * m2;
    const double mu1 = t.x1_mean(j, 1.0);
    CHECK(m1 == doctest::Approx(mu1).epsilon(0.02));
    CHECK(m2 == doctest::Approx(t.x2_mean_given_x1(j, mu1)).epsilon(0.05));
    CHECK(v2 == doctest::Approx(1.0 + 2.25 * 0.25).epsilon(0.05));
  }
}

TEST_CASE("intervention is deterministic and policy independent") {
  SimConfig c;
  c.n = 30;
  c.m = 30;
  c.seed = 4;
  const GroundTruth truth = simulate(c);
  const HscmModel model = estimate(truth.data, {});
  const InterventionRequest req{kZ1, 0.5, 3, 4, 11};
  const InterventionResult a = do_intervention(model, truth.data, req, ExecPolicy::serial);
  const InterventionResult b = do_intervention(model, truth.data, req, ExecPolicy::parallel);
  CHECK(a.z == b.z);
  CHECK(a.x == b.x);
  CHECK(ztilde_csv(a) == ztilde_csv(b));
  CHECK(xtilde_csv(a) == xtilde_csv(b));
  InterventionRequest other = req;
  other.seed = 12;
  CHECK(do_intervention(model, truth.data, other).x != a.x);
}

TEST_CASE("non-descendants of the target are unchanged") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SimConfig c;
    c.n = 30;
    c.m = 30;
    c.seed = seed;
    const GroundTruth truth = simulate(c);
    const HscmModel model = estimate(truth.data, {});
    const InterventionResult base = do_intervention(model, truth.data, {std::nullopt, 0, 2, 3, 9});
    for (NodeId target : model.graph.nodes()) {
      const InterventionResult r = do_intervention(model, truth.data, {target, 0.7, 2, 3, 9});
      const auto desc = model.graph.descendants(target);
      for (NodeId v : model.graph.nodes()) {
        if (v == target || std::find(desc.begin(), desc.end(), v) != desc.end()) continue;
        CAPTURE(node_name(target));
        CAPTURE(node_name(v));
        CHECK(r.column(v) == base.column(v));
      }
    }
  }
}

TEST_CASE("parentless variables are resampled from the data") {
  auto t = toy_scm(4);
  t.model.graph = Dag(t.model.counts);
  t.model.graph.add_edge(kX1, kX2);
  const InterventionResult r = do_intervention(t.model, t.data, {std::nullopt, 0, 50, 6, 2});
  const std::set<double> z_pool(t.data.z[0].begin(), t.data.z[0].end());
  std::set<double> z_seen;
  for (double v : r.z[0]) {
    CHECK(z_pool.contains(v));
    z_seen.insert(v);
  }
  CHECK(z_seen == z_pool);
  for (std::size_t row = 0; row < r.unit_rows(); ++row) {
    const int label = r.row_group(row / r.N);
    bool found = false;
    for (int i = 0; i < t.data.n_units(); ++i) {
      found |= t.data.unit_group[i] == label && t.data.x[0][i] == r.x[0][row];
    }
    CHECK(found);
  }
}

TEST_CASE("relabelling groups only relabels the output") {
  const auto t = toy_scm();
  auto relabelled = t;
  const auto map = [](int label) { return label * 10; };
  for (int& l : relabelled.data.group_labels) l = map(l);
  for (int& l : relabelled.data.unit_group) l = map(l);
  relabelled.model.group_labels = relabelled.data.group_labels;
  for (auto& eq : relabelled.model.x_equations) {
    GroupEffects g = *eq.groups();
    for (int& l : g.labels) l = map(l);
    eq = AdditiveFit(eq.intercept(), eq.terms(), g, eq.residual_variance(), eq.n_obs(),
                     eq.total_edf());
  }
  const InterventionRequest req{kZ1, 0.3, 4, 5, 8};
  const InterventionResult a = do_intervention(t.model, t.data, req);
  const InterventionResult b = do_intervention(relabelled.model, relabelled.data, req);
  CHECK(a.x == b.x);
  CHECK(a.z == b.z);
  CHECK(b.row_group(0) == 10);
}

TEST_CASE("request and compatibility errors") {
  auto t = toy_scm();
  CHECK(!error_of([&] { do_intervention(t.model, t.data, {kZ1, 0, 0, 1, 1}); }).empty());
  CHECK(!error_of([&] { do_intervention(t.model, t.data, {kZ1, 0, 1, 0, 1}); }).empty());
  CHECK(!error_of([&] {
           do_intervention(t.model, t.data, {NodeId{Level::LatentU, 0}, 0, 1, 1, 1});
         }).empty());
  const std::string unknown =
      error_of([&] { do_intervention(t.model, t.data, {NodeId{Level::Unit, 8}, 0, 1, 1, 1}); });
  CHECK(unknown.find("X9") != std::string::npos);
  CHECK(unknown.find("Z1, X1, X2") != std::string::npos);

  auto other = t;
  other.data.group_labels = {1, 3};
  for (int& l : other.data.unit_group) l = l == 2 ? 3 : l;
  CHECK(!error_of([&] { do_intervention(t.model, other.data, {}); }).empty());
}

TEST_CASE("summaries") {
  const auto t = toy_scm();
  const InterventionResult r = do_intervention(t.model, t.data, {kZ1, 1.0, 20, 10, 5});
  const nlohmann::json all = summarize(r, SummaryLevel::all);
  REQUIRE(all["variables"].size() == 3);
  CHECK(all["target"] == "Z1");
  CHECK(all["value"] == 1.0);
  CHECK(all["probabilities"].size() == 7);
  for (const auto& v : all["variables"]) {
    const auto q = v["quantiles"].get<std::vector<double>>();
    CHECK(std::is_sorted(q.begin(), q.end()));
  }
  CHECK(all["variables"][0]["n"] == 40);
  CHECK(all["variables"][1]["n"] == 400);
  double mean = 0;
  for (double v : r.x[1]) mean += v;
  CHECK(all["variables"][2]["mean"].get<double>() == doctest::Approx(mean / 400).epsilon(1e-12));
  CHECK(summarize(r, SummaryLevel::group)["variables"].size() == 1);
  CHECK(summarize(r, SummaryLevel::unit)["variables"].size() == 2);

  const InterventionResult u = do_intervention(t.model, t.data, {kX1, 0.0, 2, 2, 5});
  CHECK(error_of([&] { summarize(u, SummaryLevel::group); }).find("X1") != std::string::npos);
  CHECK(summarize(u, SummaryLevel::all)["variables"].size() == 2);
  CHECK(summary_level_from_string("unit") == SummaryLevel::unit);
  CHECK_THROWS_AS(summary_level_from_string("both"), UsageError);

  const InterventionResult none = do_intervention(t.model, t.data, {});
  CHECK(summarize(none, SummaryLevel::all)["target"].is_null());
}

TEST_CASE("intervention tables") {
  const auto t = toy_scm();
  const InterventionResult r = do_intervention(t.model, t.data, {kZ1, 1.0, 2, 3, 5});
  const std::string z = ztilde_csv(r);
  const std::string x = xtilde_csv(r);
  CHECK(lines(z) == 1 + 4);
  CHECK(lines(x) == 1 + 12);
  CHECK(z.rfind("group,subgroup,Z1\n1,1,1\n1,2,1\n2,1,1\n", 0) == 0);
  CHECK(x.rfind("group,subgroup,replicate,X1,X2\n1,1,1,", 0) == 0);
  CHECK(x.find("\n2,2,3,") != std::string::npos);
}
