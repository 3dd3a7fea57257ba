#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hscm/bspline.hpp"

namespace hscm {

enum class TermKind { nonlinear_smooth, linear };

std::string to_string(TermKind kind);
TermKind term_kind_from_string(std::string_view s);

/// 29 smoothing parameters, half-decade steps over [1e-10, 1e4].
std::vector<double> default_lambda_grid();

/// ridge: xi_j shrunk towards zero with a GCV-tuned penalty. fixed: free
/// per-group offsets, centred to mean zero (unweighted) across groups.
enum class GroupIntercepts { ridge, fixed };

struct SmoothSpec {
  int n_basis = 10;
  int penalty_order = 2;
  /// Relative smoothing parameters; each penalty is scaled to the Frobenius
  /// norm of its term's Gram block before lambda is applied.
  std::vector<double> lambda_grid = default_lambda_grid();
  KnotPlacement knot_placement = KnotPlacement::quantile;
  GroupIntercepts group_intercepts = GroupIntercepts::ridge;
  /// Inflation of the effective degrees of freedom in the GCV criterion.
  /// Values above 1 curb the undersmoothing GCV is prone to; 1.5 keeps null
  /// p-values close to uniform.
  double gcv_gamma = 1.5;

  void validate() const;
};

/// One column of predictor data, borrowed for the duration of a call.
struct Predictor {
  std::string id;
  std::span<const double> values;
  TermKind kind = TermKind::nonlinear_smooth;
};

/// A fitted component f_term of the additive model. Smooth terms are centred
/// over their training inputs; linear terms are slope * (x - center).
struct FittedTerm {
  std::string id;
  TermKind kind = TermKind::linear;
  CubicBasis basis;                  // smooth only
  std::vector<double> coefficients;  // B-spline coefficients, or {slope}
  double center = 0.0;               // linear only
  double lambda = 0.0;               // smooth only; chosen grid value
  double edf = 1.0;
  double p_value = 1.0;
  /// Increase in residual sum of squares when the term is dropped and the
  /// remaining terms are refitted at their smoothing parameters.
  double deviance_contribution = 0.0;

  static FittedTerm linear_term(std::string id, double slope, double center);

  double evaluate(double x) const;
};

/// Group-specific intercepts xi_j, estimated as ridge-penalised offsets.
struct GroupEffects {
  std::vector<int> labels;  // ascending
  std::vector<double> intercepts;
  std::vector<int> sizes;
  std::vector<int> degenerate;  // labels of single-observation groups
  double lambda = 0.0;
  double edf = 0.0;

  /// Position of `label` in `labels`, if present.
  std::optional<std::size_t> find(int label) const;
};

nlohmann::json term_to_json(const FittedTerm& term);
FittedTerm term_from_json(const nlohmann::json& j);

class AdditiveFit {
 public:
  AdditiveFit() = default;
  AdditiveFit(double intercept, std::vector<FittedTerm> terms, std::optional<GroupEffects> groups,
              double residual_variance, int n_obs, double total_edf);

  double intercept() const { return intercept_; }
  const std::vector<FittedTerm>& terms() const { return terms_; }
  const std::optional<GroupEffects>& groups() const { return groups_; }
  double residual_variance() const { return residual_variance_; }
  int n_obs() const { return n_obs_; }
  double total_edf() const { return total_edf_; }
  bool converged() const { return converged_; }
  int iterations() const { return iterations_; }

  bool has_term(std::string_view id) const;
  /// Throws UsageError for unknown ids.
  const FittedTerm& term(std::string_view id) const;
  /// Intercept plus xi for `label`; plain intercept when the fit has no groups
  /// or label is empty. Unknown labels throw UsageError.
  double offset(std::optional<int> label) const;

  /// Evaluates the model. `predictors` must name exactly the fitted terms.
  /// Without group ids the global prediction (xi omitted) is returned.
  std::vector<double> predict(std::span<const Predictor> predictors,
                              std::optional<std::span<const int>> group_ids = std::nullopt) const;

  nlohmann::json to_json() const;
  static AdditiveFit from_json(const nlohmann::json& j);

 private:
  friend AdditiveFit fit_additive(std::span<const double>, std::span<const Predictor>,
                                  std::optional<std::span<const int>>, const SmoothSpec&);

  double intercept_ = 0.0;
  std::vector<FittedTerm> terms_;
  std::optional<GroupEffects> groups_;
  double residual_variance_ = 0.0;
  int n_obs_ = 0;
  double total_edf_ = 0.0;
  bool converged_ = true;
  int iterations_ = 0;
};

/// Penalised least-squares additive regression
///   y = intercept + sum_t f_t(x_t) + xi_g + e.
/// Smooth terms use a cubic B-spline basis with a difference penalty; their
/// smoothing parameters are picked from spec.lambda_grid by GCV on partial
/// residuals, cycling over terms until no choice changes. Group intercepts are
/// a ridge-penalised block tuned the same way. Each term carries a Wald-type
/// F-test p-value for f_t == 0 based on the penalised covariance.
AdditiveFit fit_additive(std::span<const double> y, std::span<const Predictor> predictors,
                         std::optional<std::span<const int>> group_ids, const SmoothSpec& spec);

double term_pvalue(const AdditiveFit& fit, std::string_view id);

}  // namespace hscm
