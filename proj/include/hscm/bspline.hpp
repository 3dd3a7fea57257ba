#pragma once

#include <array>
#include <span>
#include <vector>

namespace hscm {

enum class KnotPlacement { quantile, uniform };

/// Clamped cubic B-spline basis on [lower, upper].
class CubicBasis {
 public:
  static constexpr int kDegree = 3;

  CubicBasis() = default;
  /// `knots` is the full clamped knot vector (boundary knots repeated four times).
  explicit CubicBasis(std::vector<double> knots);

  /// Basis of dimension n_basis with interior knots at quantiles of `x` (or
  /// uniformly spaced). Quantile knots that collide fall back to uniform ones.
  static CubicBasis fit_knots(std::span<const double> x, int n_basis, KnotPlacement placement);

  int size() const { return static_cast<int>(knots_.size()) - kDegree - 1; }
  double lower() const { return knots_.front(); }
  double upper() const { return knots_.back(); }
  const std::vector<double>& knots() const { return knots_; }

  /// The four possibly-nonzero basis functions at x, starting at index `first`.
  /// x is clamped to [lower, upper].
  void evaluate(double x, int& first, std::array<double, 4>& values) const;
  /// First derivatives of the same four functions.
  void derivative(double x, int& first, std::array<double, 4>& values) const;

  /// Spline value with linear continuation of the boundary segments outside
  /// [lower, upper].
  double spline(std::span<const double> coefficients, double x) const;

 private:
  int find_span(double x) const;
  void basis_of_degree(int span, double x, int degree, double* out) const;

  std::vector<double> knots_;
};

}  // namespace hscm
