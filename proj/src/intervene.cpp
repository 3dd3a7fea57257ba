#include "hscm/intervene.hpp"

#include <algorithm>
#include <array>

#include "hscm/csv.hpp"
#include "hscm/error.hpp"
#include "hscm/random.hpp"
#include "parallel.hpp"
#include "stats.hpp"

namespace hscm {

namespace {

constexpr std::array<double, 7> kProbabilities{0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99};

struct Parent {
  NodeId node;
  const FittedTerm* term = nullptr;
  const GroupDeviation* deviation = nullptr;
};

struct Equation {
  NodeId node;
  std::vector<Parent> parents;
  double intercept = 0.0;
  double sigma = 0.0;
  std::vector<double> xi;  // per group position, unit variables only
};

std::uint64_t lane(NodeId v) {
  return (static_cast<std::uint64_t>(v.level) << 32) | static_cast<std::uint32_t>(v.index);
}

Equation build_equation(const HscmModel& model, NodeId node) {
  Equation eq;
  eq.node = node;
  const auto parents = model.graph.parents(node);
  if (parents.empty()) return eq;
  const AdditiveFit& fit = model.equation(node);
  eq.intercept = fit.intercept();
  eq.sigma = model.noise_sd(node);
  for (NodeId pa : parents) {
    Parent p;
    p.node = pa;
    const std::string name = node_name(pa);
    if (!fit.has_term(name)) {
      throw UsageError("model equation of " + node_name(node) + " lacks a term for " + name);
    }
    p.term = &fit.term(name);
    if (node.level == Level::Unit && node.index < static_cast<int>(model.deviations.size())) {
      const auto& per_var = model.deviations[node.index];
      const auto it = per_var.find(name);
      if (it != per_var.end()) p.deviation = &it->second;
    }
    eq.parents.push_back(p);
  }
  if (node.level == Level::Unit) eq.xi = model.group_intercepts(node.index);
  return eq;
}

void check_compatible(const HscmModel& model, const HierDataset& data) {
  if (model.counts.z != data.q() || model.counts.x != data.p() ||
      (model.counts.w > 0 && model.counts.w != data.qw())) {
    throw UsageError("model variables do not match the data");
  }
  if (model.group_labels != data.group_labels) {
    throw UsageError("model groups do not match the data groups");
  }
  if (static_cast<int>(model.x_equations.size()) != model.counts.x ||
      static_cast<int>(model.z_equations.size()) != model.counts.z ||
      static_cast<int>(model.w_equations.size()) != model.counts.w) {
    throw UsageError("model lacks fitted equations");
  }
}

}  // namespace

void InterventionRequest::validate() const {
  if (M < 1) throw UsageError("M must be at least 1");
  if (N < 1) throw UsageError("N must be at least 1");
  if (target && target->level == Level::LatentU) {
    throw UsageError("latent variables cannot be intervened on");
  }
}

const std::vector<double>& InterventionResult::column(NodeId node) const {
  switch (node.level) {
    case Level::GroupZ: return z.at(node.index);
    case Level::GroupW: return w.at(node.index);
    case Level::Unit: return x.at(node.index);
    case Level::LatentU: break;
  }
  throw UsageError("latent variables are not simulated");
}

InterventionResult do_intervention(const HscmModel& model, const HierDataset& data,
                                   const InterventionRequest& req, ExecPolicy policy) {
  req.validate();
  data.validate();
  check_compatible(model, data);
  if (req.target && !model.graph.contains(*req.target)) {
    std::string valid;
    for (NodeId v : model.graph.nodes()) valid += (valid.empty() ? "" : ", ") + node_name(v);
    throw UsageError("unknown target " + node_name(*req.target) + "; valid targets: " + valid);
  }

  const int m = data.m();
  InterventionResult out;
  out.target = req.target;
  out.value = req.value;
  out.M = req.M;
  out.N = req.N;
  out.group_labels = data.group_labels;
  out.z.assign(model.counts.z, std::vector<double>(out.group_rows()));
  out.w.assign(model.counts.w, std::vector<double>(out.group_rows()));
  out.x.assign(model.counts.x, std::vector<double>(out.unit_rows()));

  std::vector<Equation> group_eqs, unit_eqs;
  for (NodeId v : topological_order(model.graph)) {
    (v.level == Level::Unit ? unit_eqs : group_eqs).push_back(build_equation(model, v));
  }
  std::vector<std::vector<int>> rows_of(m);
  for (int i = 0; i < data.n_units(); ++i) {
    rows_of[data.group_position(data.unit_group[i])].push_back(i);
  }

  const auto is_target = [&](NodeId v) { return req.target && *req.target == v; };
  const int slots = m * req.M;
  detail::run_tasks(slots, policy, [&](int s) {
    const int i = s / req.M;
    const auto j = static_cast<std::uint64_t>(s % req.M);
    const auto row = static_cast<std::size_t>(s);
    auto group_value = [&](NodeId v) -> double& {
      return v.level == Level::GroupZ ? out.z[v.index][row] : out.w[v.index][row];
    };
    for (const Equation& eq : group_eqs) {
      double& value = group_value(eq.node);
      if (is_target(eq.node)) {
        value = req.value;
        continue;
      }
      CounterStream rng(req.seed, stream_tag::kIntervene, lane(eq.node), i, j << 32);
      if (eq.parents.empty()) {
        value = data.column(eq.node)[rng.below(m)];
        continue;
      }
      double v = eq.intercept;
      for (const Parent& p : eq.parents) v += p.term->evaluate(group_value(p.node));
      value = v + eq.sigma * rng.normal();
    }
    const int label = data.group_labels[i];
    for (int r = 0; r < req.N; ++r) {
      const std::size_t unit_row = row * req.N + r;
      for (const Equation& eq : unit_eqs) {
        double& value = out.x[eq.node.index][unit_row];
        if (is_target(eq.node)) {
          value = req.value;
          continue;
        }
        CounterStream rng(req.seed, stream_tag::kIntervene, lane(eq.node), i,
                          (j << 32) | static_cast<std::uint64_t>(r));
        if (eq.parents.empty()) {
          const auto& pool = rows_of[i];
          value = data.x[eq.node.index][pool[rng.below(pool.size())]];
          continue;
        }
        double v = eq.intercept + eq.xi[i];
        for (const Parent& p : eq.parents) {
          const double pv = p.node.level == Level::Unit ? out.x[p.node.index][unit_row]
                                                        : group_value(p.node);
          v += p.term->evaluate(pv);
          if (p.deviation) v += p.deviation->evaluate(label, pv);
        }
        value = v + eq.sigma * rng.normal();
      }
    }
  });
  return out;
}

SummaryLevel summary_level_from_string(std::string_view s) {
  if (s == "group") return SummaryLevel::group;
  if (s == "unit") return SummaryLevel::unit;
  if (s == "all") return SummaryLevel::all;
  throw UsageError("unknown summary level '" + std::string(s) + "' (group, unit or all)");
}

nlohmann::json summarize(const InterventionResult& result, SummaryLevel level) {
  const bool unit_target = result.target && result.target->level == Level::Unit;
  if (unit_target && level == SummaryLevel::group) {
    throw UsageError("an intervention on unit-level variable " + node_name(*result.target) +
                     " cannot be summarised at the group level; a unit-level intervention "
                     "does not define a group-level outcome");
  }
  const bool groups = level != SummaryLevel::unit && !unit_target;
  const bool units = level != SummaryLevel::group;

  nlohmann::json vars = nlohmann::json::array();
  auto add = [&](Level lv, const std::vector<std::vector<double>>& cols) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      std::vector<double> sorted = cols[k];
      double mean = 0.0;
      for (double v : sorted) mean += v;
      mean /= static_cast<double>(sorted.size());
      std::sort(sorted.begin(), sorted.end());
      std::vector<double> q;
      for (double p : kProbabilities) q.push_back(detail::type7_quantile(sorted, p));
      vars.push_back({{"variable", node_name({lv, static_cast<int>(k)})},
                      {"n", sorted.size()},
                      {"mean", mean},
                      {"quantiles", q}});
    }
  };
  if (groups) {
    add(Level::GroupZ, result.z);
    add(Level::GroupW, result.w);
  }
  if (units) add(Level::Unit, result.x);
  return {{"target", result.target ? nlohmann::json(node_name(*result.target)) : nullptr},
          {"value", result.target ? nlohmann::json(result.value) : nullptr},
          {"M", result.M},
          {"N", result.N},
          {"probabilities", kProbabilities},
          {"variables", vars}};
}

std::string ztilde_csv(const InterventionResult& result) {
  std::string s = "group,subgroup";
  for (std::size_t k = 0; k < result.z.size(); ++k) s += ",Z" + std::to_string(k + 1);
  for (std::size_t k = 0; k < result.w.size(); ++k) s += ",W" + std::to_string(k + 1);
  s += '\n';
  for (std::size_t r = 0; r < result.group_rows(); ++r) {
    s += std::to_string(result.row_group(r)) + ',' + std::to_string(result.row_subgroup(r) + 1);
    for (const auto& c : result.z) s += ',' + format_double(c[r]);
    for (const auto& c : result.w) s += ',' + format_double(c[r]);
    s += '\n';
  }
  return s;
}

std::string xtilde_csv(const InterventionResult& result) {
  std::string s = "group,subgroup,replicate";
  for (std::size_t k = 0; k < result.x.size(); ++k) s += ",X" + std::to_string(k + 1);
  s += '\n';
  for (std::size_t r = 0; r < result.unit_rows(); ++r) {
    const std::size_t g = r / result.N;
    s += std::to_string(result.row_group(g)) + ',' + std::to_string(result.row_subgroup(g) + 1) +
         ',' + std::to_string(r % result.N + 1);
    for (const auto& c : result.x) s += ',' + format_double(c[r]);
    s += '\n';
  }
  return s;
}

}  // namespace hscm
