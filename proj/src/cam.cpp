#include "hscm/cam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <utility>

#include "hscm/error.hpp"
#include "parallel.hpp"

namespace hscm {

namespace {

LevelCounts single_level(Level level, int count) {
  LevelCounts c;
  switch (level) {
    case Level::GroupZ: c.z = count; break;
    case Level::GroupW: c.w = count; break;
    case Level::Unit: c.x = count; break;
    case Level::LatentU: throw UsageError("cannot run structure learning on latent nodes");
  }
  return c;
}

std::size_t check_columns(Columns data, Level level) {
  if (data.empty()) return 0;
  const std::size_t n = data.front().size();
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (data[k].size() != n) throw UsageError("columns of unequal length");
    const auto [lo, hi] = std::minmax_element(data[k].begin(), data[k].end());
    if (n > 0 && *lo == *hi) {
      throw UsageError("variable " + node_name({level, static_cast<int>(k)}) + " is constant");
    }
  }
  return n;
}

std::vector<Predictor> smooth_predictors(Columns data, Level level, std::span<const int> parents) {
  std::vector<Predictor> preds;
  preds.reserve(parents.size());
  for (int j : parents) {
    preds.push_back({node_name({level, j}), data[j], TermKind::nonlinear_smooth});
  }
  return preds;
}

}  // namespace

void CamConfig::validate() const {
  if (pns_max_parents < 1) throw UsageError("pns_max_parents must be at least 1");
  if (!(prune_alpha > 0.0 && prune_alpha < 1.0)) throw UsageError("prune_alpha must lie in (0,1)");
  if (max_edges && *max_edges < 0) throw UsageError("max_edges must be nonnegative");
  if (min_obs < 2) throw UsageError("min_obs must be at least 2");
  score_spec.validate();
}

double node_score(Columns data, Level level, int node, std::span<const int> parents,
                  const SmoothSpec& spec) {
  const auto preds = smooth_predictors(data, level, parents);
  const AdditiveFit fit = fit_additive(data[node], preds, std::nullopt, spec);
  const double variance = std::max(fit.residual_variance(), std::numeric_limits<double>::min());
  return -0.5 * static_cast<double>(data[node].size()) * std::log(variance);
}

double dag_score(Columns data, const Dag& dag, Level level, const SmoothSpec& spec) {
  double total = 0.0;
  for (int k = 0; k < static_cast<int>(data.size()); ++k) {
    std::vector<int> parents;
    for (NodeId p : dag.parents({level, k})) parents.push_back(p.index);
    total += node_score(data, level, k, parents, spec);
  }
  return total;
}

std::vector<std::vector<int>> preliminary_neighborhood(Columns data, Level level,
                                                       const CamConfig& config) {
  config.validate();
  check_columns(data, level);
  const int p = static_cast<int>(data.size());
  std::vector<std::vector<int>> selected(p);
  detail::run_tasks(p, config.policy, [&](int k) {
    std::vector<int> others;
    for (int j = 0; j < p; ++j) {
      if (j != k) others.push_back(j);
    }
    if (static_cast<int>(others.size()) <= config.pns_max_parents) {
      selected[k] = others;
      return;
    }
    const auto preds = smooth_predictors(data, level, others);
    const AdditiveFit fit = fit_additive(data[k], preds, std::nullopt, config.score_spec);
    std::vector<std::pair<double, int>> ranked;
    for (std::size_t t = 0; t < others.size(); ++t) {
      ranked.emplace_back(-fit.terms()[t].deviance_contribution, others[t]);
    }
    std::sort(ranked.begin(), ranked.end());
    for (int t = 0; t < config.pns_max_parents; ++t) selected[k].push_back(ranked[t].second);
  });
  std::vector<std::vector<int>> candidates(p);
  for (int k = 0; k < p; ++k) {
    for (int j : selected[k]) {
      candidates[k].push_back(j);
      candidates[j].push_back(k);
    }
  }
  for (auto& c : candidates) {
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
  }
  return candidates;
}

Dag greedy_order_search(Columns data, Level level, const std::vector<std::vector<int>>& candidates,
                        const CamConfig& config, std::vector<GreedyStep>* trace) {
  config.validate();
  const std::size_t n = check_columns(data, level);
  const int p = static_cast<int>(data.size());
  if (static_cast<int>(candidates.size()) != p) throw UsageError("candidate list size mismatch");
  Dag dag(single_level(level, p));
  if (p == 0) return dag;

  const double threshold = 1e-3 * static_cast<double>(n);
  std::map<std::pair<int, std::vector<int>>, double> cache;
  std::vector<std::vector<int>> parents(p);
  std::vector<double> base(p);
  // gain[k][c] for candidate c of node k; recomputed only when k's parents change.
  std::vector<std::vector<double>> gain(p);
  std::vector<bool> stale(p, true);

  struct Job {
    int node;
    std::vector<int> parent_set;
  };
  auto evaluate = [&](std::vector<Job>& jobs) {
    std::vector<Job> todo;
    for (const Job& j : jobs) {
      if (!cache.contains({j.node, j.parent_set})) todo.push_back(j);
    }
    std::vector<double> scores(todo.size());
    detail::run_tasks(static_cast<int>(todo.size()), config.policy, [&](int i) {
      scores[i] = node_score(data, level, todo[i].node, todo[i].parent_set, config.score_spec);
    });
    for (std::size_t i = 0; i < todo.size(); ++i) {
      cache.emplace(std::make_pair(todo[i].node, todo[i].parent_set), scores[i]);
    }
  };

  {
    std::vector<Job> jobs;
    for (int k = 0; k < p; ++k) jobs.push_back({k, {}});
    evaluate(jobs);
    for (int k = 0; k < p; ++k) base[k] = cache.at({k, {}});
  }

  while (!config.max_edges || static_cast<int>(dag.edge_count()) < *config.max_edges) {
    std::vector<Job> jobs;
    for (int k = 0; k < p; ++k) {
      if (!stale[k]) continue;
      for (int j : candidates[k]) {
        std::vector<int> extended = parents[k];
        if (std::find(extended.begin(), extended.end(), j) != extended.end()) continue;
        extended.insert(std::upper_bound(extended.begin(), extended.end(), j), j);
        jobs.push_back({k, std::move(extended)});
      }
    }
    evaluate(jobs);
    for (int k = 0; k < p; ++k) {
      if (!stale[k]) continue;
      gain[k].assign(candidates[k].size(), -std::numeric_limits<double>::infinity());
      for (std::size_t c = 0; c < candidates[k].size(); ++c) {
        const int j = candidates[k][c];
        if (std::find(parents[k].begin(), parents[k].end(), j) != parents[k].end()) continue;
        std::vector<int> extended = parents[k];
        extended.insert(std::upper_bound(extended.begin(), extended.end(), j), j);
        gain[k][c] = cache.at({k, extended}) - base[k];
      }
      stale[k] = false;
    }

    int best_k = -1;
    int best_j = -1;
    double best_gain = threshold;
    for (int k = 0; k < p; ++k) {
      for (std::size_t c = 0; c < candidates[k].size(); ++c) {
        const int j = candidates[k][c];
        if (!(gain[k][c] > best_gain)) continue;
        if (dag.has_edge({level, j}, {level, k}) || dag.creates_cycle({level, j}, {level, k})) {
          continue;
        }
        best_gain = gain[k][c];
        best_k = k;
        best_j = j;
      }
    }
    if (best_k < 0) break;
    dag.add_edge({level, best_j}, {level, best_k});
    if (trace) trace->push_back({{{level, best_j}, {level, best_k}}, best_gain});
    auto& pa = parents[best_k];
    pa.insert(std::upper_bound(pa.begin(), pa.end(), best_j), best_j);
    base[best_k] = cache.at({best_k, pa});
    stale[best_k] = true;
  }
  return dag;
}

Dag prune(Columns data, const Dag& dag, Level level, const CamConfig& config) {
  config.validate();
  check_columns(data, level);
  const int p = static_cast<int>(data.size());
  std::vector<std::vector<NodeId>> removed(p);
  detail::run_tasks(p, config.policy, [&](int k) {
    const auto pa = dag.parents({level, k});
    if (pa.empty()) return;
    std::vector<int> idx;
    for (NodeId v : pa) idx.push_back(v.index);
    const auto preds = smooth_predictors(data, level, idx);
    const AdditiveFit fit = fit_additive(data[k], preds, std::nullopt, config.score_spec);
    for (std::size_t t = 0; t < pa.size(); ++t) {
      if (fit.terms()[t].p_value > config.prune_alpha) removed[k].push_back(pa[t]);
    }
  });
  Dag out = dag;
  for (int k = 0; k < p; ++k) {
    for (NodeId from : removed[k]) out.remove_edge(from, {level, k});
  }
  return out;
}

Dag cam(Columns data, Level level, const CamConfig& config) {
  config.validate();
  const std::size_t n = check_columns(data, level);
  const int p = static_cast<int>(data.size());
  if (p <= 1) return Dag(single_level(level, p));
  if (static_cast<int>(n) < config.min_obs) {
    throw EstimationError("structure learning needs at least " + std::to_string(config.min_obs) +
                          " observations, got " + std::to_string(n));
  }
  const auto candidates = preliminary_neighborhood(data, level, config);
  const Dag full = greedy_order_search(data, level, candidates, config);
  return prune(data, full, level, config);
}

}  // namespace hscm
