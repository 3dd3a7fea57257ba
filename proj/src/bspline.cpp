#include "hscm/bspline.hpp"

#include <algorithm>
#include <cmath>

#include "hscm/error.hpp"

namespace hscm {

CubicBasis::CubicBasis(std::vector<double> knots) : knots_(std::move(knots)) {
  if (knots_.size() < 8) throw UsageError("cubic basis needs at least 8 knots");
  if (!std::is_sorted(knots_.begin(), knots_.end()) || !(knots_.front() < knots_.back())) {
    throw UsageError("knot vector must be non-decreasing with a nonempty range");
  }
}

CubicBasis CubicBasis::fit_knots(std::span<const double> x, int n_basis, KnotPlacement placement) {
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front();
  const double hi = sorted.back();
  if (!(lo < hi)) throw UsageError("cannot place knots on a constant predictor");

  const int interior = n_basis - 4;
  std::vector<double> inner(interior);
  auto uniform = [&] {
    for (int j = 0; j < interior; ++j) inner[j] = lo + (hi - lo) * (j + 1) / (interior + 1);
  };
  if (placement == KnotPlacement::uniform) {
    uniform();
  } else {
    const double last = static_cast<double>(sorted.size() - 1);
    for (int j = 0; j < interior; ++j) {
      // Type-7 sample quantile.
      const double h = last * (j + 1) / (interior + 1);
      const auto below = static_cast<std::size_t>(std::floor(h));
      const std::size_t above = std::min(below + 1, sorted.size() - 1);
      inner[j] = sorted[below] + (h - below) * (sorted[above] - sorted[below]);
    }
    bool ok = true;
    double prev = lo;
    for (double k : inner) {
      if (!(k > prev)) ok = false;
      prev = k;
    }
    if (interior > 0 && !(inner.back() < hi)) ok = false;
    if (!ok) uniform();
  }

  std::vector<double> knots;
  knots.reserve(n_basis + 4);
  knots.insert(knots.end(), 4, lo);
  knots.insert(knots.end(), inner.begin(), inner.end());
  knots.insert(knots.end(), 4, hi);
  return CubicBasis(std::move(knots));
}

int CubicBasis::find_span(double x) const {
  const int n = size();
  if (x >= knots_[n]) return n - 1;
  if (x <= knots_[kDegree]) return kDegree;
  // Last knot index with knots_[i] <= x, within the interior range.
  const auto it = std::upper_bound(knots_.begin() + kDegree, knots_.begin() + n + 1, x);
  return static_cast<int>(it - knots_.begin()) - 1;
}

// Cox-de Boor triangle for the `degree + 1` nonzero functions on `span`.
void CubicBasis::basis_of_degree(int span, double x, int degree, double* out) const {
  std::array<double, kDegree + 1> left{}, right{};
  out[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    left[j] = x - knots_[span + 1 - j];
    right[j] = knots_[span + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom == 0.0 ? 0.0 : out[r] / denom;
      out[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    out[j] = saved;
  }
}

void CubicBasis::evaluate(double x, int& first, std::array<double, 4>& values) const {
  x = std::clamp(x, lower(), upper());
  const int span = find_span(x);
  first = span - kDegree;
  basis_of_degree(span, x, kDegree, values.data());
}

void CubicBasis::derivative(double x, int& first, std::array<double, 4>& values) const {
  x = std::clamp(x, lower(), upper());
  const int span = find_span(x);
  first = span - kDegree;
  // Quadratic functions N_{span-2..span, 2}; index shifted by one relative to
  // the cubic ones.
  std::array<double, 4> quad{};
  basis_of_degree(span, x, kDegree - 1, quad.data() + 1);
  for (int j = 0; j < 4; ++j) {
    const int i = first + j;
    const double d1 = knots_[i + 3] - knots_[i];
    const double d2 = knots_[i + 4] - knots_[i + 1];
    const double a = d1 > 0.0 ? quad[j] / d1 : 0.0;
    const double b = (j < 3 && d2 > 0.0) ? quad[j + 1] / d2 : 0.0;
    values[j] = 3.0 * (a - b);
  }
}

double CubicBasis::spline(std::span<const double> coefficients, double x) const {
  int first = 0;
  std::array<double, 4> b{};
  const double edge = x < lower() ? lower() : (x > upper() ? upper() : x);
  evaluate(edge, first, b);
  double value = 0.0;
  for (int j = 0; j < 4; ++j) value += b[j] * coefficients[first + j];
  if (edge != x) {
    derivative(edge, first, b);
    double slope = 0.0;
    for (int j = 0; j < 4; ++j) slope += b[j] * coefficients[first + j];
    value += slope * (x - edge);
  }
  return value;
}

}  // namespace hscm
