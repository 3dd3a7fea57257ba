#include "hscm/gam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include <Eigen/Dense>
#include <boost/math/distributions/fisher_f.hpp>

#include "hscm/error.hpp"

namespace hscm {

std::string to_string(TermKind kind) {
  return kind == TermKind::linear ? "linear" : "nonlinear_smooth";
}

TermKind term_kind_from_string(std::string_view s) {
  if (s == "linear") return TermKind::linear;
  if (s == "nonlinear_smooth") return TermKind::nonlinear_smooth;
  throw UsageError("unknown term kind '" + std::string(s) + "'");
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid(29);
  for (int i = 0; i < 29; ++i) grid[i] = std::pow(10.0, -10.0 + 0.5 * i);
  return grid;
}

void SmoothSpec::validate() const {
  if (n_basis < 4) throw UsageError("SmoothSpec: n_basis must be at least 4");
  if (penalty_order < 1 || penalty_order >= n_basis - 1) {
    throw UsageError("SmoothSpec: penalty_order out of range");
  }
  if (lambda_grid.empty()) throw UsageError("SmoothSpec: lambda_grid is empty");
  if (!std::is_sorted(lambda_grid.begin(), lambda_grid.end()) || lambda_grid.front() < 0.0) {
    throw UsageError("SmoothSpec: lambda_grid must be nonnegative and ascending");
  }
  if (!(gcv_gamma >= 1.0)) throw UsageError("SmoothSpec: gcv_gamma must be at least 1");
}

FittedTerm FittedTerm::linear_term(std::string id, double slope, double center) {
  FittedTerm t;
  t.id = std::move(id);
  t.kind = TermKind::linear;
  t.coefficients = {slope};
  t.center = center;
  return t;
}

double FittedTerm::evaluate(double x) const {
  if (kind == TermKind::linear) return coefficients[0] * (x - center);
  return basis.spline(coefficients, x);
}

std::optional<std::size_t> GroupEffects::find(int label) const {
  const auto it = std::lower_bound(labels.begin(), labels.end(), label);
  if (it == labels.end() || *it != label) return std::nullopt;
  return static_cast<std::size_t>(it - labels.begin());
}

AdditiveFit::AdditiveFit(double intercept, std::vector<FittedTerm> terms,
                         std::optional<GroupEffects> groups, double residual_variance, int n_obs,
                         double total_edf)
    : intercept_(intercept),
      terms_(std::move(terms)),
      groups_(std::move(groups)),
      residual_variance_(residual_variance),
      n_obs_(n_obs),
      total_edf_(total_edf) {}

bool AdditiveFit::has_term(std::string_view id) const {
  return std::any_of(terms_.begin(), terms_.end(), [&](const FittedTerm& t) { return t.id == id; });
}

const FittedTerm& AdditiveFit::term(std::string_view id) const {
  for (const FittedTerm& t : terms_) {
    if (t.id == id) return t;
  }
  throw UsageError("fit has no term '" + std::string(id) + "'");
}

double AdditiveFit::offset(std::optional<int> label) const {
  if (!label || !groups_) return intercept_;
  const auto pos = groups_->find(*label);
  if (!pos) throw UsageError("unknown group id " + std::to_string(*label));
  return intercept_ + groups_->intercepts[*pos];
}

std::vector<double> AdditiveFit::predict(std::span<const Predictor> predictors,
                                         std::optional<std::span<const int>> group_ids) const {
  std::vector<const Predictor*> matched(terms_.size(), nullptr);
  std::size_t n = group_ids ? group_ids->size() : 0;
  bool have_n = group_ids.has_value();
  for (const Predictor& p : predictors) {
    bool found = false;
    for (std::size_t t = 0; t < terms_.size(); ++t) {
      if (terms_[t].id == p.id) {
        matched[t] = &p;
        found = true;
      }
    }
    if (!found) throw UsageError("predict: unknown term id '" + p.id + "'");
    if (have_n && p.values.size() != n) throw UsageError("predict: length mismatch for " + p.id);
    n = p.values.size();
    have_n = true;
  }
  for (std::size_t t = 0; t < terms_.size(); ++t) {
    if (!matched[t]) throw UsageError("predict: missing predictor '" + terms_[t].id + "'");
  }
  std::vector<double> out(n, intercept_);
  if (group_ids && groups_) {
    for (std::size_t i = 0; i < n; ++i) out[i] = offset((*group_ids)[i]);
  }
  for (std::size_t t = 0; t < terms_.size(); ++t) {
    const auto values = matched[t]->values;
    for (std::size_t i = 0; i < n; ++i) out[i] += terms_[t].evaluate(values[i]);
  }
  return out;
}

nlohmann::json term_to_json(const FittedTerm& t) {
  nlohmann::json j{{"id", t.id},
                   {"kind", to_string(t.kind)},
                   {"coefficients", t.coefficients},
                   {"center", t.center},
                   {"lambda", t.lambda},
                   {"edf", t.edf},
                   {"p_value", t.p_value},
                   {"deviance_contribution", t.deviance_contribution}};
  j["knots"] = t.kind == TermKind::linear ? std::vector<double>{} : t.basis.knots();
  return j;
}

FittedTerm term_from_json(const nlohmann::json& j) {
  try {
    FittedTerm t;
    t.id = j.at("id").get<std::string>();
    t.kind = term_kind_from_string(j.at("kind").get<std::string>());
    t.coefficients = j.at("coefficients").get<std::vector<double>>();
    t.center = j.at("center").get<double>();
    t.lambda = j.at("lambda").get<double>();
    t.edf = j.at("edf").get<double>();
    t.p_value = j.at("p_value").get<double>();
    t.deviance_contribution = j.at("deviance_contribution").get<double>();
    if (t.kind == TermKind::nonlinear_smooth) {
      t.basis = CubicBasis(j.at("knots").get<std::vector<double>>());
      if (static_cast<int>(t.coefficients.size()) != t.basis.size()) {
        throw UsageError("term '" + t.id + "': coefficient count does not match knots");
      }
    } else if (t.coefficients.size() != 1) {
      throw UsageError("linear term '" + t.id + "' needs exactly one coefficient");
    }
    return t;
  } catch (const nlohmann::json::exception& ex) {
    throw UsageError(std::string("malformed term JSON: ") + ex.what());
  }
}

nlohmann::json AdditiveFit::to_json() const {
  nlohmann::json terms = nlohmann::json::array();
  for (const FittedTerm& t : terms_) terms.push_back(term_to_json(t));
  nlohmann::json groups = nullptr;
  if (groups_) {
    groups = {{"labels", groups_->labels},         {"intercepts", groups_->intercepts},
              {"sizes", groups_->sizes},           {"degenerate", groups_->degenerate},
              {"lambda", groups_->lambda},         {"edf", groups_->edf}};
  }
  return {{"intercept", intercept_},
          {"terms", terms},
          {"groups", groups},
          {"residual_variance", residual_variance_},
          {"n_obs", n_obs_},
          {"total_edf", total_edf_},
          {"converged", converged_},
          {"iterations", iterations_}};
}

AdditiveFit AdditiveFit::from_json(const nlohmann::json& j) {
  try {
    std::vector<FittedTerm> terms;
    for (const auto& jt : j.at("terms")) terms.push_back(term_from_json(jt));
    std::optional<GroupEffects> groups;
    if (!j.at("groups").is_null()) {
      const auto& jg = j.at("groups");
      GroupEffects g;
      g.labels = jg.at("labels").get<std::vector<int>>();
      g.intercepts = jg.at("intercepts").get<std::vector<double>>();
      g.sizes = jg.at("sizes").get<std::vector<int>>();
      g.degenerate = jg.at("degenerate").get<std::vector<int>>();
      g.lambda = jg.at("lambda").get<double>();
      g.edf = jg.at("edf").get<double>();
      if (g.intercepts.size() != g.labels.size() || g.sizes.size() != g.labels.size()) {
        throw UsageError("group effect arrays differ in length");
      }
      groups = std::move(g);
    }
    AdditiveFit fit(j.at("intercept").get<double>(), std::move(terms), std::move(groups),
                    j.at("residual_variance").get<double>(), j.at("n_obs").get<int>(),
                    j.at("total_edf").get<double>());
    fit.converged_ = j.at("converged").get<bool>();
    fit.iterations_ = j.at("iterations").get<int>();
    return fit;
  } catch (const nlohmann::json::exception& ex) {
    throw UsageError(std::string("malformed additive fit JSON: ") + ex.what());
  }
}

double term_pvalue(const AdditiveFit& fit, std::string_view id) { return fit.term(id).p_value; }

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr int kMaxSweeps = 100;

struct TermDesign {
  TermKind kind = TermKind::linear;
  CubicBasis basis;
  MatrixXd centering;  // raw coefficients = centering * reduced coefficients
  MatrixXd penalty;    // reduced, scaled to the term's Gram block
  double center = 0.0;
  int offset = 0;
  int cols = 0;
};

MatrixXd difference_penalty(int k, int order) {
  MatrixXd d = MatrixXd::Identity(k, k);
  for (int o = 0; o < order; ++o) {
    MatrixXd next(d.rows() - 1, k);
    for (int r = 0; r + 1 < d.rows(); ++r) next.row(r) = d.row(r + 1) - d.row(r);
    d = std::move(next);
  }
  return d.transpose() * d;
}

MatrixXd raw_basis(const CubicBasis& basis, std::span<const double> x) {
  MatrixXd b = MatrixXd::Zero(static_cast<Eigen::Index>(x.size()), basis.size());
  std::array<double, 4> values{};
  int first = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    basis.evaluate(x[i], first, values);
    for (int j = 0; j < 4; ++j) b(static_cast<Eigen::Index>(i), first + j) = values[j];
  }
  return b;
}

// Orthonormal basis of the complement of `column_means` (Householder).
MatrixXd centering_map(const VectorXd& column_means) {
  Eigen::HouseholderQR<MatrixXd> qr(column_means);
  const MatrixXd q = qr.householderQ();
  return q.rightCols(column_means.size() - 1);
}

int distinct_count(std::span<const double> x) {
  std::vector<double> v(x.begin(), x.end());
  std::sort(v.begin(), v.end());
  return static_cast<int>(std::unique(v.begin(), v.end()) - v.begin());
}

// Penalised normal equations for fixed columns [1 | terms] and an optional
// block of group indicators.
struct System {
  int n = 0;
  int fixed = 0;  // intercept + term columns
  int groups = 0;
  MatrixXd x;     // n x fixed
  MatrixXd gram;  // (fixed + groups)^2 data cross-products
  VectorXd rhs;
  std::vector<int> row_group;  // -1 without groups
  std::vector<int> group_size;
  double group_scale = 1.0;

  int dim() const { return fixed + groups; }
};

struct Solution {
  VectorXd theta;
  MatrixXd inverse;  // (gram + penalty)^-1
  VectorXd edf_diag;
  double edf_total = 0.0;
};

// Fixed offsets still carry a negligible ridge; it only resolves the
// collinearity between the intercept and the full set of indicators.
constexpr double kFixedGroupRidge = 1e-7;

struct PenaltyState {
  std::vector<int> lambda_index;  // per term, -1 for linear
  int group_lambda_index = -1;
};

MatrixXd assemble_penalty(const System& sys, const std::vector<TermDesign>& terms,
                          const PenaltyState& state, const std::vector<double>& grid) {
  MatrixXd p = MatrixXd::Zero(sys.dim(), sys.dim());
  for (std::size_t t = 0; t < terms.size(); ++t) {
    if (terms[t].kind == TermKind::linear) continue;
    p.block(terms[t].offset, terms[t].offset, terms[t].cols, terms[t].cols) =
        grid[state.lambda_index[t]] * terms[t].penalty;
  }
  if (sys.groups > 0) {
    const double lambda = state.group_lambda_index < 0 ? kFixedGroupRidge * sys.group_scale
                                                       : grid[state.group_lambda_index] * sys.group_scale;
    p.diagonal().tail(sys.groups).setConstant(lambda);
  }
  return p;
}

Solution solve(const System& sys, const MatrixXd& penalty) {
  MatrixXd a = sys.gram + penalty;
  Eigen::LLT<MatrixXd> llt(a);
  // Nearly singular only when smooth columns outnumber observations at tiny
  // lambda; a trace-relative ridge keeps the factorisation usable.
  double ridge = 1e-12 * a.diagonal().mean();
  while (llt.info() != Eigen::Success && ridge < 1e-2 * a.diagonal().mean()) {
    a.diagonal().array() += ridge;
    llt.compute(a);
    ridge *= 100.0;
  }
  if (llt.info() != Eigen::Success) throw FitError("penalised normal equations are singular");
  Solution s;
  s.theta = llt.solve(sys.rhs);
  s.inverse = llt.solve(MatrixXd::Identity(sys.dim(), sys.dim()));
  s.edf_diag.resize(sys.dim());
  for (int i = 0; i < sys.dim(); ++i) s.edf_diag(i) = s.inverse.row(i).dot(sys.gram.col(i));
  s.edf_total = s.edf_diag.sum();
  return s;
}

VectorXd fitted_values(const System& sys, const VectorXd& theta, int skip_offset = -1,
                       int skip_cols = 0, bool skip_groups = false) {
  VectorXd fitted = VectorXd::Zero(sys.n);
  for (int c = 0; c < sys.fixed; ++c) {
    if (c >= skip_offset && c < skip_offset + skip_cols) continue;
    fitted.noalias() += theta(c) * sys.x.col(c);
  }
  if (sys.groups > 0 && !skip_groups) {
    for (int i = 0; i < sys.n; ++i) fitted(i) += theta(sys.fixed + sys.row_group[i]);
  }
  return fitted;
}

double gcv_score(int n, double rss, double edf, double gamma) {
  const double denom = n - gamma * edf;
  if (denom <= 0.0) return std::numeric_limits<double>::infinity();
  return n * rss / (denom * denom);
}

// GCV over the grid for a smooth term refitted alone to its partial residuals.
std::vector<double> smooth_gcv_scan(const System& sys, const TermDesign& term,
                                    const VectorXd& partial, double edf_rest,
                                    const std::vector<double>& grid, double gamma) {
  const MatrixXd xt = sys.x.middleCols(term.offset, term.cols);
  const MatrixXd gtt = sys.gram.block(term.offset, term.offset, term.cols, term.cols);
  const VectorXd b = xt.transpose() * partial;
  const double rr = partial.squaredNorm();
  std::vector<double> scores(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const MatrixXd m = gtt + grid[g] * term.penalty;
    const Eigen::LDLT<MatrixXd> ldlt(m);
    const VectorXd beta = ldlt.solve(b);
    const double rss = std::max(0.0, rr - 2.0 * beta.dot(b) + beta.dot(gtt * beta));
    const double edf = ldlt.solve(gtt).trace();
    scores[g] = gcv_score(sys.n, rss, edf_rest + edf, gamma);
  }
  return scores;
}

std::vector<double> group_gcv_scan(const System& sys, const VectorXd& partial, double edf_rest,
                                   const std::vector<double>& grid, double gamma) {
  VectorXd sums = VectorXd::Zero(sys.groups);
  for (int i = 0; i < sys.n; ++i) sums(sys.row_group[i]) += partial(i);
  const double rr = partial.squaredNorm();
  std::vector<double> scores(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double lambda = grid[g] * sys.group_scale;
    double rss = rr;
    double edf = 0.0;
    for (int j = 0; j < sys.groups; ++j) {
      const double nj = sys.group_size[j];
      const double beta = sums(j) / (nj + lambda);
      rss -= 2.0 * beta * sums(j) - nj * beta * beta;
      edf += nj / (nj + lambda);
    }
    scores[g] = gcv_score(sys.n, std::max(0.0, rss), edf_rest + edf, gamma);
  }
  return scores;
}

int argmin(const std::vector<double>& v) {
  return static_cast<int>(std::min_element(v.begin(), v.end()) - v.begin());
}

double f_survival(double statistic, double df1, double df2) {
  if (std::isnan(statistic)) return 1.0;
  if (statistic <= 0.0) return 1.0;
  if (!std::isfinite(statistic)) return 0.0;
  const boost::math::fisher_f_distribution<double> dist(df1, df2);
  return boost::math::cdf(boost::math::complement(dist, statistic));
}

// Wald-type test of f_t == 0. The statistic lives in fitted-value coordinates
// (R beta with R'R the term's Gram block) and uses the leading round(edf)
// eigen-directions of the penalised covariance.
double wald_pvalue(const System& sys, const TermDesign& term, const Solution& sol,
                   double sigma2, double edf, double df_resid) {
  const VectorXd beta = sol.theta.segment(term.offset, term.cols);
  const MatrixXd v = sigma2 * sol.inverse.block(term.offset, term.offset, term.cols, term.cols);
  if (term.cols == 1) {
    return f_survival(beta(0) * beta(0) / v(0, 0), 1.0, df_resid);
  }
  const MatrixXd gtt = sys.gram.block(term.offset, term.offset, term.cols, term.cols);
  const Eigen::SelfAdjointEigenSolver<MatrixXd> gram_eig(gtt);
  const VectorXd root = gram_eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const MatrixXd r = root.asDiagonal() * gram_eig.eigenvectors().transpose();
  const VectorXd bt = r * beta;
  const MatrixXd vt = r * v * r.transpose();
  const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(vt);
  const int rank = std::clamp(static_cast<int>(std::lround(edf)), 1, term.cols);
  const VectorXd& e = eig.eigenvalues();  // ascending
  const double tol = e(term.cols - 1) * 1e-12;
  double stat = 0.0;
  for (int k = 0; k < rank; ++k) {
    const int idx = term.cols - 1 - k;
    if (e(idx) <= tol) continue;
    const double proj = eig.eigenvectors().col(idx).dot(bt);
    stat += proj * proj / e(idx);
  }
  return f_survival(stat / rank, rank, df_resid);
}

// Unpenalised directions (intercept, linear terms, penalty null spaces of
// smooths) must be linearly independent, otherwise the model is not
// identifiable. Checked in term order so the error names the later term.
void check_identifiable(const System& sys, const std::vector<TermDesign>& terms,
                        std::span<const Predictor> predictors) {
  std::vector<VectorXd> directions;
  std::vector<int> owner;
  VectorXd e0 = VectorXd::Zero(sys.fixed);
  e0(0) = 1.0;
  directions.push_back(e0);
  owner.push_back(-1);
  for (std::size_t t = 0; t < terms.size(); ++t) {
    const TermDesign& term = terms[t];
    if (term.kind == TermKind::linear) {
      VectorXd d = VectorXd::Zero(sys.fixed);
      d(term.offset) = 1.0;
      directions.push_back(d);
      owner.push_back(static_cast<int>(t));
      continue;
    }
    const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(term.penalty);
    const double top = eig.eigenvalues().maxCoeff();
    for (int k = 0; k < term.cols; ++k) {
      if (eig.eigenvalues()(k) > 1e-9 * top) continue;
      VectorXd d = VectorXd::Zero(sys.fixed);
      d.segment(term.offset, term.cols) = eig.eigenvectors().col(k);
      directions.push_back(d);
      owner.push_back(static_cast<int>(t));
    }
  }
  const MatrixXd g = sys.gram.topLeftCorner(sys.fixed, sys.fixed);
  MatrixXd basis(sys.fixed, 0);
  MatrixXd basis_gram(0, 0);
  for (std::size_t k = 0; k < directions.size(); ++k) {
    const VectorXd& d = directions[k];
    const double self = d.dot(g * d);
    double residual = self;
    if (basis.cols() > 0) {
      const VectorXd cross = basis.transpose() * (g * d);
      residual = self - cross.dot(basis_gram.ldlt().solve(cross));
    }
    if (!(self > 0.0) || residual <= 1e-10 * self) {
      const std::string name = owner[k] < 0 ? "(intercept)" : predictors[owner[k]].id;
      throw FitError("rank-deficient design after centering: term '" + name +
                     "' is constant or collinear with earlier terms");
    }
    basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
    basis.col(basis.cols() - 1) = d;
    basis_gram = basis.transpose() * g * basis;
  }
}

}  // namespace

AdditiveFit fit_additive(std::span<const double> y, std::span<const Predictor> predictors,
                         std::optional<std::span<const int>> group_ids, const SmoothSpec& spec) {
  spec.validate();
  const auto n_size = y.size();
  const int n = static_cast<int>(n_size);
  if (n < 2) throw UsageError("fit_additive needs at least two observations");
  {
    std::set<std::string> ids;
    for (const Predictor& p : predictors) {
      if (p.values.size() != n_size) {
        throw UsageError("predictor '" + p.id + "' has " + std::to_string(p.values.size()) +
                         " values, response has " + std::to_string(n_size));
      }
      if (!ids.insert(p.id).second) throw UsageError("duplicate predictor id '" + p.id + "'");
    }
  }
  if (group_ids && group_ids->size() != n_size) {
    throw UsageError("group id vector length does not match the response");
  }

  // Term designs.
  std::vector<TermDesign> terms(predictors.size());
  int cols = 1;
  for (std::size_t t = 0; t < predictors.size(); ++t) {
    const Predictor& p = predictors[t];
    TermDesign& term = terms[t];
    term.kind = p.kind;
    term.offset = cols;
    const int distinct = distinct_count(p.values);
    if (distinct < 2) {
      throw FitError("rank-deficient design after centering: term '" + p.id +
                     "' has a constant predictor");
    }
    if (p.kind == TermKind::linear) {
      term.cols = 1;
    } else {
      const int k = std::max(4, std::min(spec.n_basis, distinct));
      term.basis = CubicBasis::fit_knots(p.values, k, spec.knot_placement);
      term.cols = term.basis.size() - 1;
    }
    cols += term.cols;
  }

  System sys;
  sys.n = n;
  sys.fixed = cols;
  sys.x.resize(n, cols);
  sys.x.col(0).setOnes();
  for (std::size_t t = 0; t < predictors.size(); ++t) {
    const Predictor& p = predictors[t];
    TermDesign& term = terms[t];
    if (term.kind == TermKind::linear) {
      double mean = 0.0;
      for (double v : p.values) mean += v;
      term.center = mean / n;
      for (int i = 0; i < n; ++i) sys.x(i, term.offset) = p.values[i] - term.center;
    } else {
      const MatrixXd b = raw_basis(term.basis, p.values);
      term.centering = centering_map(b.colwise().mean().transpose());
      sys.x.middleCols(term.offset, term.cols) = b * term.centering;
      term.penalty = term.centering.transpose() *
                     difference_penalty(term.basis.size(), spec.penalty_order) * term.centering;
    }
  }

  // Groups: labels sorted ascending, rows mapped to positions.
  std::vector<int> labels;
  if (group_ids) {
    labels.assign(group_ids->begin(), group_ids->end());
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    sys.groups = static_cast<int>(labels.size());
    sys.row_group.resize(n);
    sys.group_size.assign(sys.groups, 0);
    for (int i = 0; i < n; ++i) {
      const int pos = static_cast<int>(
          std::lower_bound(labels.begin(), labels.end(), (*group_ids)[i]) - labels.begin());
      sys.row_group[i] = pos;
      ++sys.group_size[pos];
    }
    double sq = 0.0;
    for (int s : sys.group_size) sq += static_cast<double>(s) * s;
    sys.group_scale = std::sqrt(sq / sys.groups);
  }

  const Eigen::Map<const VectorXd> yv(y.data(), n);
  sys.gram = MatrixXd::Zero(sys.dim(), sys.dim());
  sys.gram.topLeftCorner(cols, cols).noalias() = sys.x.transpose() * sys.x;
  sys.rhs = VectorXd::Zero(sys.dim());
  sys.rhs.head(cols).noalias() = sys.x.transpose() * yv;
  if (sys.groups > 0) {
    for (int i = 0; i < n; ++i) {
      const int g = cols + sys.row_group[i];
      sys.gram.block(0, g, cols, 1) += sys.x.row(i).transpose();
      sys.rhs(g) += y[i];
    }
    sys.gram.bottomLeftCorner(sys.groups, cols) =
        sys.gram.topRightCorner(cols, sys.groups).transpose();
    for (int j = 0; j < sys.groups; ++j) sys.gram(cols + j, cols + j) = sys.group_size[j];
  }

  // Penalties scaled to their Gram blocks so the grid is relative.
  for (TermDesign& term : terms) {
    if (term.kind == TermKind::linear) continue;
    const double scale =
        sys.gram.block(term.offset, term.offset, term.cols, term.cols).norm() / term.penalty.norm();
    term.penalty *= scale;
  }

  check_identifiable(sys, terms, predictors);

  // Smoothing parameter selection.
  const std::vector<double>& grid = spec.lambda_grid;
  int start = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (std::abs(std::log(std::max(grid[g], 1e-300))) <
        std::abs(std::log(std::max(grid[start], 1e-300)))) {
      start = static_cast<int>(g);
    }
  }
  PenaltyState state;
  state.lambda_index.assign(terms.size(), -1);
  for (std::size_t t = 0; t < terms.size(); ++t) {
    if (terms[t].kind == TermKind::nonlinear_smooth) state.lambda_index[t] = start;
  }
  const bool fixed_groups = spec.group_intercepts == GroupIntercepts::fixed;
  if (sys.groups > 0 && !fixed_groups) state.group_lambda_index = start;

  Solution sol = solve(sys, assemble_penalty(sys, terms, state, grid));
  bool converged = false;
  int sweeps = 0;
  while (sweeps < kMaxSweeps) {
    ++sweeps;
    bool changed = false;
    for (std::size_t t = 0; t < terms.size(); ++t) {
      if (terms[t].kind == TermKind::linear) continue;
      const TermDesign& term = terms[t];
      const VectorXd partial = yv - fitted_values(sys, sol.theta, term.offset, term.cols);
      const double edf_rest = sol.edf_total - sol.edf_diag.segment(term.offset, term.cols).sum();
      const int best = argmin(smooth_gcv_scan(sys, term, partial, edf_rest, grid, spec.gcv_gamma));
      if (best != state.lambda_index[t]) {
        state.lambda_index[t] = best;
        sol = solve(sys, assemble_penalty(sys, terms, state, grid));
        changed = true;
      }
    }
    if (sys.groups > 0 && !fixed_groups) {
      const VectorXd partial = yv - fitted_values(sys, sol.theta, -1, 0, true);
      const double edf_rest = sol.edf_total - sol.edf_diag.tail(sys.groups).sum();
      const int best = argmin(group_gcv_scan(sys, partial, edf_rest, grid, spec.gcv_gamma));
      if (best != state.group_lambda_index) {
        state.group_lambda_index = best;
        sol = solve(sys, assemble_penalty(sys, terms, state, grid));
        changed = true;
      }
    }
    if (!changed) {
      converged = true;
      break;
    }
  }

  const VectorXd fitted = fitted_values(sys, sol.theta);
  const double rss = (yv - fitted).squaredNorm();
  const double df_resid = std::max(1.0, n - sol.edf_total);
  const double sigma2 = rss / df_resid;
  const double sigma2_test = std::max(sigma2, std::numeric_limits<double>::min());

  // Deviance contributions: refit without each term at fixed smoothing parameters.
  const MatrixXd penalty = assemble_penalty(sys, terms, state, grid);
  const double yy = yv.squaredNorm();
  auto gram_rss = [&](const VectorXd& theta, const MatrixXd& gram, const VectorXd& rhs) {
    return yy - 2.0 * theta.dot(rhs) + theta.dot(gram * theta);
  };
  const double rss_full = gram_rss(sol.theta, sys.gram, sys.rhs);

  std::vector<FittedTerm> fitted_terms;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    const TermDesign& term = terms[t];
    FittedTerm out;
    out.id = predictors[t].id;
    out.kind = term.kind;
    const VectorXd beta = sol.theta.segment(term.offset, term.cols);
    if (term.kind == TermKind::linear) {
      out.coefficients = {beta(0)};
      out.center = term.center;
      out.edf = sol.edf_diag(term.offset);
    } else {
      const VectorXd raw = term.centering * beta;
      out.basis = term.basis;
      out.coefficients.assign(raw.data(), raw.data() + raw.size());
      out.lambda = grid[state.lambda_index[t]];
      out.edf = sol.edf_diag.segment(term.offset, term.cols).sum();
    }
    out.p_value = wald_pvalue(sys, term, sol, sigma2_test, out.edf, df_resid);

    std::vector<int> keep;
    for (int c = 0; c < sys.dim(); ++c) {
      if (c < term.offset || c >= term.offset + term.cols) keep.push_back(c);
    }
    const auto k = static_cast<Eigen::Index>(keep.size());
    MatrixXd sub_gram(k, k), sub_pen(k, k);
    VectorXd sub_rhs(k);
    for (Eigen::Index a = 0; a < k; ++a) {
      sub_rhs(a) = sys.rhs(keep[a]);
      for (Eigen::Index b = 0; b < k; ++b) {
        sub_gram(a, b) = sys.gram(keep[a], keep[b]);
        sub_pen(a, b) = penalty(keep[a], keep[b]);
      }
    }
    const VectorXd sub_theta = (sub_gram + sub_pen).ldlt().solve(sub_rhs);
    out.deviance_contribution = std::max(0.0, gram_rss(sub_theta, sub_gram, sub_rhs) - rss_full);
    fitted_terms.push_back(std::move(out));
  }

  std::optional<GroupEffects> effects;
  if (sys.groups > 0) {
    GroupEffects g;
    g.labels = labels;
    g.sizes = sys.group_size;
    g.intercepts.assign(sol.theta.data() + cols, sol.theta.data() + cols + sys.groups);
    g.lambda = fixed_groups ? 0.0 : grid[state.group_lambda_index];
    g.edf = sol.edf_diag.tail(sys.groups).sum();
    // A single observation cannot separate its intercept from its residual.
    const VectorXd without_groups = fitted_values(sys, sol.theta, -1, 0, true);
    for (int i = 0; i < n; ++i) {
      const int j = sys.row_group[i];
      if (sys.group_size[j] == 1) {
        g.intercepts[j] = y[i] - without_groups(i);
        g.degenerate.push_back(labels[j]);
      }
    }
    std::sort(g.degenerate.begin(), g.degenerate.end());
    if (fixed_groups) {
      double mean = 0.0;
      for (double v : g.intercepts) mean += v;
      mean /= sys.groups;
      for (double& v : g.intercepts) v -= mean;
      sol.theta(0) += mean;
    }
    effects = std::move(g);
  }

  AdditiveFit fit(sol.theta(0), std::move(fitted_terms), std::move(effects), sigma2, n,
                  sol.edf_total);
  fit.converged_ = converged;
  fit.iterations_ = sweeps;
  return fit;
}

}  // namespace hscm
