#pragma once

#include <algorithm>
#include <cmath>
#include <span>

namespace hscm::detail {

// Type-7 quantile of sorted values.
inline double type7_quantile(std::span<const double> sorted, double prob) {
  const double h = static_cast<double>(sorted.size() - 1) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace hscm::detail
