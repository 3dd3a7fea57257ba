#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "hscm/error.hpp"
#include "hscm/gam.hpp"
#include "hscm/random.hpp"

using namespace hscm;

namespace {

std::vector<double> normals(std::uint64_t seed, int n, double sd = 1.0) {
  CounterStream s(seed, stream_tag::kTests);
  std::vector<double> v(n);
  for (double& e : v) e = sd * s.normal();
  return v;
}

std::vector<double> uniforms(std::uint64_t seed, int n, double lo, double hi) {
  CounterStream s(seed, stream_tag::kTests, 1);
  std::vector<double> v(n);
  for (double& e : v) e = s.uniform(lo, hi);
  return v;
}

double fitted_rss(const AdditiveFit& fit, const std::vector<double>& y,
                  const std::vector<Predictor>& preds, const std::vector<int>* groups = nullptr) {
  std::vector<double> pred;
  if (groups) {
    pred = fit.predict(preds, std::span<const int>(*groups));
  } else {
    pred = fit.predict(preds);
  }
  double rss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) rss += (y[i] - pred[i]) * (y[i] - pred[i]);
  return rss;
}

SmoothSpec fixed_lambda(double lambda) {
  SmoothSpec spec;
  spec.lambda_grid = {lambda};
  return spec;
}

}  // namespace

TEST_CASE("noiseless linear recovery") {
  const auto x = uniforms(1, 100, -3, 3);
  const std::vector<Predictor> preds{{"x", x, TermKind::linear}};
  const auto fit = fit_additive(x, preds, std::nullopt, SmoothSpec{});
  const auto pred = fit.predict(preds);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(pred[i] - x[i]) < 1e-6);
  CHECK(std::abs(fit.term("x").coefficients[0] - 1.0) < 1e-10);
}

TEST_CASE("constant response") {
  const auto x1 = uniforms(2, 80, 0, 1);
  const auto x2 = normals(3, 80);
  const std::vector<double> y(80, 5.0);
  const std::vector<Predictor> preds{{"a", x1}, {"b", x2, TermKind::linear}};
  const auto fit = fit_additive(y, preds, std::nullopt, SmoothSpec{});
  CHECK(std::abs(fit.intercept() - 5.0) < 1e-8);
  for (double v : {-1.0, 0.0, 0.3, 0.9, 2.0}) {
    CHECK(std::abs(fit.term("a").evaluate(v)) < 1e-8);
    CHECK(std::abs(fit.term("b").evaluate(v)) < 1e-8);
  }
  for (double p : fit.predict(preds)) CHECK(std::abs(p - 5.0) < 1e-8);
}

TEST_CASE("smooth terms are centred over training inputs") {
  const auto x1 = uniforms(4, 300, -2, 2);
  const auto x2 = normals(5, 300);
  const auto e = normals(6, 300, 0.3);
  std::vector<double> y(300);
  for (int i = 0; i < 300; ++i) y[i] = std::exp(x1[i]) + x2[i] * x2[i] + e[i];
  const std::vector<Predictor> preds{{"x1", x1}, {"x2", x2}};
  const auto fit = fit_additive(y, preds, std::nullopt, SmoothSpec{});
  for (const auto& p : preds) {
    double mean = 0.0;
    for (double v : p.values) mean += fit.term(p.id).evaluate(v);
    CHECK(std::abs(mean / 300) < 1e-8);
  }
  CHECK(fit.converged());
}

TEST_CASE("residuals are orthogonal to every basis column at lambda zero") {
  const int n = 200;
  const auto x = uniforms(7, n, -2, 2);
  const auto e = normals(8, n, 0.2);
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) y[i] = std::sin(2 * x[i]) + e[i];
  const std::vector<Predictor> preds{{"x", x}};
  const auto fit = fit_additive(y, preds, std::nullopt, fixed_lambda(0.0));
  const auto pred = fit.predict(preds);
  Eigen::VectorXd r(n);
  for (int i = 0; i < n; ++i) r(i) = y[i] - pred[i];
  const CubicBasis& basis = fit.term("x").basis;
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, basis.size());
  std::array<double, 4> vals{};
  int first = 0;
  for (int i = 0; i < n; ++i) {
    basis.evaluate(x[i], first, vals);
    for (int j = 0; j < 4; ++j) b(i, first + j) = vals[j];
  }
  for (int j = 0; j < b.cols(); ++j) {
    CHECK(std::abs(b.col(j).dot(r)) <= 1e-6 * b.col(j).norm() * r.norm());
  }
}

TEST_CASE("residuals are orthogonal to unpenalised directions") {
  const int n = 250;
  const auto x = uniforms(9, n, -2, 2);
  const auto z = normals(10, n);
  const auto e = normals(11, n, 0.5);
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) y[i] = x[i] * x[i] + 0.5 * z[i] + e[i];
  const std::vector<Predictor> preds{{"x", x}, {"z", z, TermKind::linear}};
  const auto fit = fit_additive(y, preds, std::nullopt, SmoothSpec{});
  const auto pred = fit.predict(preds);
  // Index-linear coefficient sequences are unpenalised by the difference penalty.
  const CubicBasis& basis = fit.term("x").basis;
  std::array<double, 4> vals{};
  int first = 0;
  double r1 = 0, rl = 0, rz = 0, rr = 0, ll = 0, zz = 0;
  for (int i = 0; i < n; ++i) {
    const double r = y[i] - pred[i];
    basis.evaluate(x[i], first, vals);
    double lin = 0.0;
    for (int j = 0; j < 4; ++j) lin += vals[j] * (first + j);
    r1 += r;
    rl += r * lin;
    rz += r * z[i];
    rr += r * r;
    ll += lin * lin;
    zz += z[i] * z[i];
  }
  const double rn = std::sqrt(rr);
  CHECK(std::abs(r1) <= 1e-6 * std::sqrt(n) * rn);
  CHECK(std::abs(rl) <= 1e-6 * std::sqrt(ll) * rn);
  CHECK(std::abs(rz) <= 1e-6 * std::sqrt(zz) * rn);
}

TEST_CASE("chosen lambda minimises GCV over the grid") {
  for (std::uint64_t seed : {12u, 13u, 14u}) {
    const int n = 200;
    const auto x = uniforms(seed, n, -3, 3);
    const auto e = normals(seed + 100, n, 0.5);
    std::vector<double> y(n);
    for (int i = 0; i < n; ++i) y[i] = std::sin(x[i]) + e[i];
    const std::vector<Predictor> preds{{"x", x}};
    const SmoothSpec spec;
    const auto fit = fit_additive(y, preds, std::nullopt, spec);
    std::vector<double> gcv;
    for (double lambda : spec.lambda_grid) {
      const auto one = fit_additive(y, preds, std::nullopt, fixed_lambda(lambda));
      const double rss = fitted_rss(one, y, preds);
      const double denom = n - spec.gcv_gamma * one.total_edf();
      gcv.push_back(n * rss / (denom * denom));
    }
    const auto best = std::min_element(gcv.begin(), gcv.end()) - gcv.begin();
    CHECK(fit.term("x").lambda == spec.lambda_grid[best]);
  }
}

TEST_CASE("adding a predictor never increases RSS at lambda zero") {
  const int n = 150;
  const auto x1 = uniforms(20, n, 0, 1);
  const auto x2 = normals(21, n);
  const auto e = normals(22, n);
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) y[i] = std::cos(3 * x1[i]) + e[i];
  const std::vector<Predictor> one{{"x1", x1}};
  const std::vector<Predictor> two{{"x1", x1}, {"x2", x2}};
  const auto f1 = fit_additive(y, one, std::nullopt, fixed_lambda(0.0));
  const auto f2 = fit_additive(y, two, std::nullopt, fixed_lambda(0.0));
  CHECK(fitted_rss(f2, y, two) <= fitted_rss(f1, y, one) * (1 + 1e-12));
}

TEST_CASE("residual variance matches in-sample predictions") {
  const int n = 120;
  const auto x = uniforms(30, n, -1, 1);
  const auto e = normals(31, n, 0.3);
  std::vector<double> y(n);
  std::vector<int> g(n);
  for (int i = 0; i < n; ++i) {
    g[i] = i % 6;
    y[i] = std::tanh(2 * x[i]) + 0.5 * g[i] + e[i];
  }
  const std::vector<Predictor> preds{{"x", x}};
  const auto fit = fit_additive(y, preds, std::span<const int>(g), SmoothSpec{});
  const double rss = fitted_rss(fit, y, preds, &g);
  CHECK(fit.residual_variance() > 0);
  CHECK(std::abs(rss / (n - fit.total_edf()) - fit.residual_variance()) <
        1e-10 * fit.residual_variance());
}

TEST_CASE("quadratic recovered on a grid") {
  const int n = 400;
  const auto x = uniforms(40, n, -2, 2);
  const auto e = normals(41, n, 0.1);
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) y[i] = x[i] * x[i] + e[i];
  const std::vector<Predictor> preds{{"x", x}};
  const auto fit = fit_additive(y, preds, std::nullopt, SmoothSpec{});
  // Polynomial least-squares oracle.
  Eigen::MatrixXd design(n, 3);
  Eigen::VectorXd yv(n);
  for (int i = 0; i < n; ++i) {
    design.row(i) << 1.0, x[i], x[i] * x[i];
    yv(i) = y[i];
  }
  const Eigen::VectorXd beta = design.colPivHouseholderQr().solve(yv);
  std::vector<double> grid(101);
  for (int k = 0; k <= 100; ++k) grid[k] = -2.0 + 0.04 * k;
  const std::vector<Predictor> at{{"x", grid}};
  const auto pred = fit.predict(at);
  double ss = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double oracle = beta(0) + beta(1) * grid[k] + beta(2) * grid[k] * grid[k];
    ss += (pred[k] - oracle) * (pred[k] - oracle);
  }
  CHECK(std::sqrt(ss / 101) < 0.05);
}

TEST_CASE("extrapolation continues the boundary segment linearly") {
  const auto x = uniforms(50, 200, 0, 1);
  const auto e = normals(51, 200, 0.1);
  std::vector<double> y(200);
  for (int i = 0; i < 200; ++i) y[i] = std::exp(x[i]) + e[i];
  const auto fit = fit_additive(y, std::vector<Predictor>{{"x", x}}, std::nullopt, SmoothSpec{});
  const auto& t = fit.term("x");
  const double hi = t.basis.upper();
  const double slope = (t.evaluate(hi + 1.0) - t.evaluate(hi)) / 1.0;
  CHECK(std::abs((t.evaluate(hi + 3.0) - t.evaluate(hi)) - 3.0 * slope) < 1e-10);
  const double h = 1e-6;
  CHECK(std::abs((t.evaluate(hi) - t.evaluate(hi - h)) / h - slope) < 1e-3 * (1 + std::abs(slope)));
}

TEST_CASE("strong signal gives tiny p-value; permutation oracle agrees") {
  const int n = 1000;
  const auto x = uniforms(60, n, -2, 2);
  const auto e = normals(61, n, 0.1);
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) y[i] = std::sin(2 * x[i]) + e[i];
  const auto fit = fit_additive(y, std::vector<Predictor>{{"x", x}}, std::nullopt, SmoothSpec{});
  CHECK(term_pvalue(fit, "x") < 1e-6);
  // Permutation oracle on a cheaper subset of 50 permutations: every permuted
  // deviance contribution stays below the observed one.
  CounterStream s(62, stream_tag::kTests);
  std::vector<double> xp = x;
  int exceed = 0;
  for (int k = 0; k < 50; ++k) {
    for (int i = n - 1; i > 0; --i) std::swap(xp[i], xp[s.below(i + 1)]);
    const auto perm =
        fit_additive(y, std::vector<Predictor>{{"x", xp}}, std::nullopt, SmoothSpec{});
    exceed += perm.term("x").deviance_contribution >= fit.term("x").deviance_contribution;
  }
  CHECK(exceed == 0);
  CHECK_THROWS_AS(term_pvalue(fit, "nope"), UsageError);
}

TEST_CASE("response regressed on its own copy") {
  const auto x = normals(70, 100);
  const auto fit = fit_additive(x, std::vector<Predictor>{{"copy", x}}, std::nullopt, SmoothSpec{});
  CHECK(term_pvalue(fit, "copy") < 1e-12);
}

TEST_CASE("pure-noise predictor rejection rate near nominal") {
  const int reps = 1000;
  int reject = 0;
  for (int r = 0; r < reps; ++r) {
    const auto x = uniforms(1000 + r, 200, -1, 1);
    const auto y = normals(5000 + r, 200);
    const auto fit = fit_additive(y, std::vector<Predictor>{{"x", x}}, std::nullopt, SmoothSpec{});
    const double p = term_pvalue(fit, "x");
    REQUIRE(p >= 0.0);
    REQUIRE(p <= 1.0);
    reject += p <= 0.05;
  }
  const double frac = static_cast<double>(reject) / reps;
  MESSAGE("rejection fraction at 0.05: " << frac);
  CHECK(frac >= 0.02);
  CHECK(frac <= 0.09);
}

TEST_CASE("group intercepts absorb shifts") {
  const int m = 8, per = 40, n = m * per;
  const auto x = uniforms(80, n, -1, 1);
  const auto e = normals(81, n, 0.2);
  const auto shift = normals(82, m, 2.0);
  std::vector<double> y(n);
  std::vector<int> g(n);
  for (int i = 0; i < n; ++i) {
    g[i] = 10 + i / per;
    y[i] = 0.8 * x[i] + shift[i / per] + e[i];
  }
  const std::vector<Predictor> preds{{"x", x, TermKind::linear}};
  const auto fit = fit_additive(y, preds, std::span<const int>(g), SmoothSpec{});
  REQUIRE(fit.groups());
  CHECK(fit.groups()->labels.front() == 10);
  CHECK(std::abs(fit.term("x").coefficients[0] - 0.8) < 0.1);
  double mean_shift = std::accumulate(shift.begin(), shift.end(), 0.0) / m;
  for (int j = 0; j < m; ++j) {
    const double truth = shift[j] - mean_shift;
    CHECK(std::abs(fit.offset(10 + j) - fit.intercept() - truth) < 0.2);
  }
  CHECK_THROWS_AS(fit.offset(99), UsageError);
  CHECK(fit.offset(std::nullopt) == fit.intercept());
}

TEST_CASE("single-observation group is flagged and takes its residual") {
  const int n = 61;
  const auto x = uniforms(90, n, -1, 1);
  const auto e = normals(91, n, 0.1);
  std::vector<double> y(n);
  std::vector<int> g(n);
  for (int i = 0; i < n; ++i) {
    g[i] = i == n - 1 ? 7 : i % 3;
    y[i] = x[i] + e[i] + (i == n - 1 ? 4.0 : 0.0);
  }
  const std::vector<Predictor> preds{{"x", x, TermKind::linear}};
  const auto fit = fit_additive(y, preds, std::span<const int>(g), SmoothSpec{});
  CHECK(fit.groups()->degenerate == std::vector<int>{7});
  const auto pred = fit.predict(preds, std::span<const int>(g));
  CHECK(std::abs(pred[n - 1] - y[n - 1]) < 1e-10);
}

TEST_CASE("json round trip preserves predictions") {
  const int n = 150;
  const auto x = uniforms(100, n, -2, 2);
  const auto z = normals(101, n);
  const auto e = normals(102, n, 0.3);
  std::vector<double> y(n);
  std::vector<int> g(n);
  for (int i = 0; i < n; ++i) {
    g[i] = i % 5;
    y[i] = std::sin(x[i]) - z[i] + e[i];
  }
  const std::vector<Predictor> preds{{"x", x}, {"z", z, TermKind::linear}};
  const auto fit = fit_additive(y, preds, std::span<const int>(g), SmoothSpec{});
  const auto back = AdditiveFit::from_json(nlohmann::json::parse(fit.to_json().dump()));
  const auto a = fit.predict(preds, std::span<const int>(g));
  const auto b = back.predict(preds, std::span<const int>(g));
  for (int i = 0; i < n; ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
  CHECK(back.term("x").lambda == fit.term("x").lambda);
}

TEST_CASE("fit errors") {
  const auto x = normals(110, 50);
  std::vector<double> twice(x);
  for (double& v : twice) v *= 2;
  const std::vector<double> constant(50, 1.0);
  const auto y = normals(111, 50);
  const std::vector<double> short_y(y.begin(), y.begin() + 40);

  CHECK_THROWS_AS(fit_additive(short_y, std::vector<Predictor>{{"x", x}}, std::nullopt, {}),
                  UsageError);
  try {
    fit_additive(y, std::vector<Predictor>{{"flat", constant}}, std::nullopt, {});
    FAIL("expected a fit error");
  } catch (const FitError& e) {
    CHECK(std::string(e.what()).find("flat") != std::string::npos);
  }
  try {
    fit_additive(y,
                 std::vector<Predictor>{{"a", x, TermKind::linear}, {"b", twice, TermKind::linear}},
                 std::nullopt, {});
    FAIL("expected a fit error");
  } catch (const FitError& e) {
    CHECK(std::string(e.what()).find("'b'") != std::string::npos);
  }

  const auto fit = fit_additive(y, std::vector<Predictor>{{"x", x}}, std::nullopt, {});
  CHECK_THROWS_AS(fit.predict(std::vector<Predictor>{{"other", x}}), UsageError);
  CHECK_THROWS_AS(fit.predict(std::vector<Predictor>{}), UsageError);
  SmoothSpec bad;
  bad.lambda_grid = {1.0, 0.1};
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = SmoothSpec{};
  bad.n_basis = 3;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}
