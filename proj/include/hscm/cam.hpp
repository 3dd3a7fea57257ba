#pragma once

#include <optional>
#include <span>
#include <vector>

#include "hscm/exec.hpp"
#include "hscm/gam.hpp"
#include "hscm/graph.hpp"

namespace hscm {

struct CamConfig {
  int pns_max_parents = 10;
  double prune_alpha = 0.001;
  SmoothSpec score_spec;
  std::optional<int> max_edges;
  /// Smallest sample accepted by cam().
  int min_obs = 20;
  ExecPolicy policy = ExecPolicy::parallel;

  void validate() const;
};

/// Columns of one level, each of the same length. Column i is node (level, i).
using Columns = std::span<const std::vector<double>>;

/// Candidate parent indices per node, ascending and symmetric.
std::vector<std::vector<int>> preliminary_neighborhood(Columns data, Level level,
                                                       const CamConfig& config);

/// -(n/2) log(sigma^2) of `node` regressed on smooth terms of `parents`.
double node_score(Columns data, Level level, int node, std::span<const int> parents,
                  const SmoothSpec& spec);
/// Sum of node scores under `dag`.
double dag_score(Columns data, const Dag& dag, Level level, const SmoothSpec& spec);

struct GreedyStep {
  Edge edge;
  double gain = 0.0;
};

/// Greedy edge addition. `trace`, when given, receives every accepted edge in order.
Dag greedy_order_search(Columns data, Level level, const std::vector<std::vector<int>>& candidates,
                        const CamConfig& config, std::vector<GreedyStep>* trace = nullptr);

/// Single pass: refits each node on its parents and drops parents with p > alpha.
Dag prune(Columns data, const Dag& dag, Level level, const CamConfig& config);

Dag cam(Columns data, Level level, const CamConfig& config);

}  // namespace hscm
