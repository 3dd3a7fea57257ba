#include "hscm/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "hscm/error.hpp"
#include "parallel.hpp"
#include "stats.hpp"

namespace hscm {

namespace {

std::vector<double> subset(const std::vector<double>& column, const std::vector<int>& rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(column[r]);
  return out;
}

double centred_rmse(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = (a[i] - ma) - (b[i] - mb);
    ss += d * d;
  }
  return std::sqrt(ss / n);
}

SmoothSpec spec_from_json(const nlohmann::json& j) {
  SmoothSpec s;
  s.n_basis = j.at("n_basis").get<int>();
  s.penalty_order = j.at("penalty_order").get<int>();
  s.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
  const auto placement = j.at("knot_placement").get<std::string>();
  if (placement == "quantile") {
    s.knot_placement = KnotPlacement::quantile;
  } else if (placement == "uniform") {
    s.knot_placement = KnotPlacement::uniform;
  } else {
    throw UsageError("unknown knot placement '" + placement + "'");
  }
  s.gcv_gamma = j.at("gcv_gamma").get<double>();
  const auto intercepts = j.at("group_intercepts").get<std::string>();
  if (intercepts == "ridge") {
    s.group_intercepts = GroupIntercepts::ridge;
  } else if (intercepts == "fixed") {
    s.group_intercepts = GroupIntercepts::fixed;
  } else {
    throw UsageError("unknown group intercept mode '" + intercepts + "'");
  }
  return s;
}

nlohmann::json spec_to_json(const SmoothSpec& s) {
  return {{"n_basis", s.n_basis},
          {"penalty_order", s.penalty_order},
          {"lambda_grid", s.lambda_grid},
          {"knot_placement", s.knot_placement == KnotPlacement::quantile ? "quantile" : "uniform"},
          {"group_intercepts", s.group_intercepts == GroupIntercepts::ridge ? "ridge" : "fixed"},
          {"gcv_gamma", s.gcv_gamma}};
}

AdditiveFit combine_levels(const AdditiveFit& within, const std::vector<double>& offsets,
                           const std::vector<int>& labels, std::span<const Predictor> preds,
                           const SmoothSpec& spec) {
  if (preds.empty()) return within;
  const AdditiveFit between = fit_additive(offsets, preds, std::nullopt, spec);
  const std::vector<double> level = between.predict(preds);
  GroupEffects g = *within.groups();
  for (std::size_t j = 0; j < labels.size(); ++j) {
    g.intercepts[*g.find(labels[j])] = offsets[j] - level[j];
  }
  std::vector<FittedTerm> terms = within.terms();
  terms.insert(terms.end(), between.terms().begin(), between.terms().end());
  return AdditiveFit(between.intercept(), std::move(terms), std::move(g),
                     within.residual_variance(), within.n_obs(), within.total_edf());
}

}  // namespace

int HierDataset::group_position(int label) const {
  const auto it = std::find(group_labels.begin(), group_labels.end(), label);
  if (it == group_labels.end()) throw UsageError("unknown group id " + std::to_string(label));
  return static_cast<int>(it - group_labels.begin());
}

std::vector<int> HierDataset::group_sizes() const {
  std::map<int, int> pos;
  for (int j = 0; j < m(); ++j) pos[group_labels[j]] = j;
  std::vector<int> sizes(m(), 0);
  for (int g : unit_group) {
    const auto it = pos.find(g);
    if (it == pos.end()) throw UsageError("unknown group id " + std::to_string(g));
    ++sizes[it->second];
  }
  return sizes;
}

std::vector<double> HierDataset::expand(const std::vector<double>& group_column) const {
  std::map<int, int> pos;
  for (int j = 0; j < m(); ++j) pos[group_labels[j]] = j;
  std::vector<double> out(unit_group.size());
  for (std::size_t i = 0; i < unit_group.size(); ++i) out[i] = group_column[pos.at(unit_group[i])];
  return out;
}

const std::vector<double>& HierDataset::column(NodeId node) const {
  switch (node.level) {
    case Level::GroupZ: return z.at(node.index);
    case Level::GroupW: return w.at(node.index);
    case Level::Unit: return x.at(node.index);
    case Level::LatentU: break;
  }
  throw UsageError("latent variables have no data");
}

void HierDataset::validate() const {
  std::set<int> labels(group_labels.begin(), group_labels.end());
  if (labels.size() != group_labels.size()) throw UsageError("duplicate group ids");
  for (const auto* table : {&z, &w}) {
    for (const auto& c : *table) {
      if (static_cast<int>(c.size()) != m()) {
        throw UsageError("group-level column length differs from the number of groups");
      }
    }
  }
  for (const auto& c : x) {
    if (c.size() != unit_group.size()) {
      throw UsageError("unit-level column length differs from the number of units");
    }
  }
  std::set<int> unknown;
  for (int g : unit_group) {
    if (!labels.contains(g)) unknown.insert(g);
  }
  if (!unknown.empty()) {
    std::string msg = "unit rows reference unknown group ids:";
    for (int g : unknown) msg += " " + std::to_string(g);
    throw UsageError(msg);
  }
  const auto sizes = group_sizes();
  for (int j = 0; j < m(); ++j) {
    if (sizes[j] == 0) throw UsageError("group " + std::to_string(group_labels[j]) + " has no units");
  }
}

void EstimateOptions::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha must lie in (0,1)");
  cam_config.validate();
}

nlohmann::json EstimateOptions::to_json() const {
  nlohmann::json cam{{"pns_max_parents", cam_config.pns_max_parents},
                     {"prune_alpha", cam_config.prune_alpha},
                     {"max_edges", cam_config.max_edges ? nlohmann::json(*cam_config.max_edges)
                                                        : nlohmann::json(nullptr)},
                     {"min_obs", cam_config.min_obs},
                     {"score_spec", spec_to_json(cam_config.score_spec)}};
  return {{"alpha", alpha},
          {"skip_group_dag", skip_group_dag},
          {"group_specific_functions", group_specific_functions},
          {"second_factor", second_factor},
          {"group_parent_kind", to_string(group_parent_kind)},
          {"refit_group_parent_kind", to_string(refit_group_parent_kind)},
          {"cam", cam}};
}

EstimateOptions EstimateOptions::from_json(const nlohmann::json& j) {
  EstimateOptions o;
  o.alpha = j.at("alpha").get<double>();
  o.skip_group_dag = j.at("skip_group_dag").get<bool>();
  o.group_specific_functions = j.at("group_specific_functions").get<bool>();
  o.second_factor = j.at("second_factor").get<bool>();
  o.group_parent_kind = term_kind_from_string(j.at("group_parent_kind").get<std::string>());
  o.refit_group_parent_kind =
      term_kind_from_string(j.at("refit_group_parent_kind").get<std::string>());
  const auto& c = j.at("cam");
  o.cam_config.pns_max_parents = c.at("pns_max_parents").get<int>();
  o.cam_config.prune_alpha = c.at("prune_alpha").get<double>();
  if (!c.at("max_edges").is_null()) o.cam_config.max_edges = c.at("max_edges").get<int>();
  o.cam_config.min_obs = c.at("min_obs").get<int>();
  o.cam_config.score_spec = spec_from_json(c.at("score_spec"));
  return o;
}

double GroupDeviation::evaluate(int label, double x) const {
  const auto it = std::lower_bound(labels.begin(), labels.end(), label);
  if (it == labels.end() || *it != label) return 0.0;
  return terms[it - labels.begin()].evaluate(x);
}

const AdditiveFit& HscmModel::equation(NodeId node) const {
  switch (node.level) {
    case Level::GroupZ: return z_equations.at(node.index);
    case Level::GroupW: return w_equations.at(node.index);
    case Level::Unit: return x_equations.at(node.index);
    case Level::LatentU: break;
  }
  throw UsageError("latent variables have no fitted equation");
}

double HscmModel::noise_sd(NodeId node) const {
  return std::sqrt(std::max(equation(node).residual_variance(), 1e-24));
}

std::vector<double> HscmModel::group_intercepts(int k) const {
  const AdditiveFit& fit = x_equations.at(k);
  std::vector<double> out(group_labels.size(), 0.0);
  if (!fit.groups()) return out;
  for (std::size_t j = 0; j < group_labels.size(); ++j) {
    const auto pos = fit.groups()->find(group_labels[j]);
    if (pos) out[j] = fit.groups()->intercepts[*pos];
  }
  return out;
}

nlohmann::json HscmModel::to_json() const {
  auto fits = [](const std::vector<AdditiveFit>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& f : v) a.push_back(f.to_json());
    return a;
  };
  nlohmann::json devs = nlohmann::json::array();
  for (const auto& per_var : deviations) {
    nlohmann::json obj = nlohmann::json::object();
    for (const auto& [parent, dev] : per_var) {
      nlohmann::json terms = nlohmann::json::array();
      for (const auto& t : dev.terms) terms.push_back(term_to_json(t));
      obj[parent] = {{"labels", dev.labels}, {"terms", terms}, {"zeroed", dev.zeroed}};
    }
    devs.push_back(obj);
  }
  const Dag dz_only = [&] {
    Dag d(LevelCounts{counts.z, 0, 0, 0});
    for (const Edge& e : graph.edges()) {
      if (e.from.level == Level::GroupZ && e.to.level == Level::GroupZ) d.add_edge(e.from, e.to);
    }
    return d;
  }();
  return {{"format", "hscm-model"},
          {"version", 1},
          {"levels", {{"z", counts.z}, {"w", counts.w}, {"x", counts.x}}},
          {"graph", hscm::to_json(graph)},
          {"group_dag", group_dag_estimated ? hscm::to_json(dz_only) : nlohmann::json(nullptr)},
          {"reference_group", reference_group},
          {"group_labels", group_labels},
          {"options", options.to_json()},
          {"z_equations", fits(z_equations)},
          {"w_equations", fits(w_equations)},
          {"x_equations", fits(x_equations)},
          {"screening", fits(screening)},
          {"deviations", devs},
          {"warnings", warnings}};
}

HscmModel HscmModel::from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "hscm-model") throw UsageError("not an hscm model document");
    HscmModel m;
    const auto& lv = j.at("levels");
    m.counts = {lv.at("z").get<int>(), lv.at("w").get<int>(), lv.at("x").get<int>(), 0};
    m.graph = dag_from_json(j.at("graph"));
    if (!(m.graph.counts() == m.counts)) throw UsageError("model graph levels do not match");
    m.group_dag_estimated = !j.at("group_dag").is_null();
    m.reference_group = j.at("reference_group").get<int>();
    m.group_labels = j.at("group_labels").get<std::vector<int>>();
    m.options = EstimateOptions::from_json(j.at("options"));
    auto fits = [](const nlohmann::json& a) {
      std::vector<AdditiveFit> v;
      for (const auto& f : a) v.push_back(AdditiveFit::from_json(f));
      return v;
    };
    m.z_equations = fits(j.at("z_equations"));
    m.w_equations = fits(j.at("w_equations"));
    m.x_equations = fits(j.at("x_equations"));
    m.screening = fits(j.at("screening"));
    if (static_cast<int>(m.z_equations.size()) != m.counts.z ||
        static_cast<int>(m.w_equations.size()) != m.counts.w ||
        static_cast<int>(m.x_equations.size()) != m.counts.x) {
      throw UsageError("equation count does not match the declared variables");
    }
    for (const auto& obj : j.at("deviations")) {
      std::map<std::string, GroupDeviation> per_var;
      for (const auto& [parent, jd] : obj.items()) {
        GroupDeviation d;
        d.labels = jd.at("labels").get<std::vector<int>>();
        for (const auto& t : jd.at("terms")) d.terms.push_back(term_from_json(t));
        d.zeroed = jd.at("zeroed").get<std::vector<int>>();
        per_var.emplace(parent, std::move(d));
      }
      m.deviations.push_back(std::move(per_var));
    }
    m.deviations.resize(m.counts.x);
    m.warnings = j.at("warnings").get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& ex) {
    throw UsageError(std::string("malformed model JSON: ") + ex.what());
  }
}

HscmModel estimate(const HierDataset& data, const EstimateOptions& opts) {
  data.validate();
  opts.validate();
  if (data.p() < 1) throw UsageError("no unit-level variables");
  if (data.m() < 1) throw UsageError("no groups");
  if (opts.second_factor && data.qw() == 0) {
    throw UsageError("second factor requested but no W variables were supplied");
  }
  if (!opts.skip_group_dag && data.q() >= 2 && data.m() < 2) {
    throw UsageError("group-level discovery needs at least two groups");
  }

  HscmModel model;
  model.options = opts;
  model.group_labels = data.group_labels;
  model.counts = {data.q(), opts.second_factor ? data.qw() : 0, data.p(), 0};
  model.graph = Dag(model.counts);
  CamConfig cam_config = opts.cam_config;
  cam_config.policy = opts.policy;

  // Group-level structure: W first, then Z.
  if (opts.second_factor && data.qw() >= 2) {
    if (data.m() < cam_config.min_obs) {
      throw EstimationError("too few groups (" + std::to_string(data.m()) +
                            ") for second-factor structure learning");
    }
    const Dag dw = cam(data.w, Level::GroupW, cam_config);
    for (const Edge& e : dw.edges()) {
      model.graph.add_edge(e.from, e.to);
    }
  }
  if (!opts.skip_group_dag) {
    model.group_dag_estimated = true;
    if (data.q() >= 2) {
      if (data.m() < cam_config.min_obs) {
        throw EstimationError("too few groups (" + std::to_string(data.m()) +
                              ") for group-level structure learning; skip the group DAG");
      }
      const Dag dz = cam(data.z, Level::GroupZ, cam_config);
      for (const Edge& e : dz.edges()) {
        model.graph.add_edge(e.from, e.to);
      }
    }
  }

  // Unit-level structure from the largest group (ties: lowest label).
  const auto sizes = data.group_sizes();
  int ref = 0;
  for (int j = 1; j < data.m(); ++j) {
    if (sizes[j] > sizes[ref] ||
        (sizes[j] == sizes[ref] && data.group_labels[j] < data.group_labels[ref])) {
      ref = j;
    }
  }
  model.reference_group = data.group_labels[ref];
  std::vector<int> rows;
  for (int i = 0; i < data.n_units(); ++i) {
    if (data.unit_group[i] == model.reference_group) rows.push_back(i);
  }
  if (data.p() >= 2 && static_cast<int>(rows.size()) < cam_config.min_obs) {
    throw EstimationError("largest group has " + std::to_string(rows.size()) +
                          " units; unit-level structure learning needs " +
                          std::to_string(cam_config.min_obs));
  }
  std::vector<std::vector<double>> x_ref;
  for (const auto& c : data.x) x_ref.push_back(subset(c, rows));
  const Dag dx = cam(x_ref, Level::Unit, cam_config);
  for (const Edge& e : dx.edges()) {
    model.graph.add_edge(e.from, e.to);
  }

  std::vector<NodeId> group_nodes;
  for (int l = 0; l < data.q(); ++l) group_nodes.push_back({Level::GroupZ, l});
  for (int l = 0; l < model.counts.w; ++l) group_nodes.push_back({Level::GroupW, l});
  const std::span<const int> groups(data.unit_group);
  const SmoothSpec& spec = cam_config.score_spec;
  SmoothSpec within_spec = spec;
  within_spec.group_intercepts = GroupIntercepts::fixed;

  // Stage one: unit parents with free group offsets. Group-level variables are
  // constant within groups, so their effects live entirely in these offsets.
  std::vector<AdditiveFit> within(data.p());
  std::vector<std::vector<double>> offsets(data.p());
  detail::run_tasks(data.p(), opts.policy, [&](int k) {
    std::vector<Predictor> preds;
    for (NodeId pa : model.graph.parents({Level::Unit, k})) {
      preds.push_back({node_name(pa), data.x[pa.index], TermKind::nonlinear_smooth});
    }
    within[k] = fit_additive(data.x[k], preds, groups, within_spec);
    offsets[k].resize(data.m());
    for (int j = 0; j < data.m(); ++j) offsets[k][j] = within[k].offset(data.group_labels[j]);
  });

  // Stage two, screening: offsets regressed on every group-level variable.
  const int screen_cols = static_cast<int>(group_nodes.size()) + 1;
  const bool can_screen = !group_nodes.empty() && data.m() > screen_cols;
  if (!group_nodes.empty() && !can_screen) {
    model.warnings.push_back("only " + std::to_string(data.m()) +
                             " groups; no group-level parents of unit variables assigned");
  }
  model.screening.resize(can_screen ? data.p() : 0);
  std::vector<std::vector<NodeId>> group_parents(data.p());
  if (can_screen) {
    detail::run_tasks(data.p(), opts.policy, [&](int k) {
      std::vector<Predictor> preds;
      for (NodeId g : group_nodes) {
        preds.push_back({node_name(g), data.column(g), opts.group_parent_kind});
      }
      model.screening[k] = fit_additive(offsets[k], preds, std::nullopt, spec);
      for (std::size_t g = 0; g < group_nodes.size(); ++g) {
        if (model.screening[k].terms()[g].p_value <= opts.alpha) {
          group_parents[k].push_back(group_nodes[g]);
        }
      }
    });
  }
  for (int k = 0; k < data.p(); ++k) {
    for (NodeId pa : group_parents[k]) model.graph.add_edge(pa, {Level::Unit, k});
  }

  // Final refit. Group-level equations directly; unit equations combine the
  // stage-one terms with a regression of the offsets on the assigned parents,
  // whose residuals become xi_j.
  model.z_equations.resize(data.q());
  model.w_equations.resize(model.counts.w);
  model.x_equations.resize(data.p());
  const int total = data.q() + model.counts.w + data.p();
  detail::run_tasks(total, opts.policy, [&](int i) {
    NodeId node;
    if (i < data.q()) {
      node = {Level::GroupZ, i};
    } else if (i < data.q() + model.counts.w) {
      node = {Level::GroupW, i - data.q()};
    } else {
      node = {Level::Unit, i - data.q() - model.counts.w};
    }
    std::vector<Predictor> preds;
    for (NodeId pa : model.graph.parents(node)) {
      if (node.level != Level::Unit) {
        preds.push_back({node_name(pa), data.column(pa), TermKind::nonlinear_smooth});
      } else if (is_group_level(pa.level)) {
        preds.push_back({node_name(pa), data.column(pa), opts.refit_group_parent_kind});
      }
    }
    if (node.level == Level::GroupZ) {
      model.z_equations[node.index] = fit_additive(data.z[node.index], preds, std::nullopt, spec);
    } else if (node.level == Level::GroupW) {
      model.w_equations[node.index] = fit_additive(data.w[node.index], preds, std::nullopt, spec);
    } else {
      model.x_equations[node.index] =
          combine_levels(within[node.index], offsets[node.index], data.group_labels, preds, spec);
    }
  });

  model.deviations.resize(data.p());
  if (opts.group_specific_functions) {
    for (const Edge& e : model.graph.edges()) {
      if (e.from.level == Level::Unit && e.to.level == Level::Unit) {
        fit_group_specific(data, model, e);
      }
    }
  }
  return model;
}

void fit_group_specific(const HierDataset& data, HscmModel& model, Edge edge) {
  if (edge.from.level != Level::Unit || edge.to.level != Level::Unit ||
      !model.graph.has_edge(edge.from, edge.to)) {
    throw UsageError("group-specific functions need a unit-level edge of the model");
  }
  const int k = edge.to.index;
  const AdditiveFit& fit = model.x_equations.at(k);
  std::vector<Predictor> preds;
  for (const FittedTerm& t : fit.terms()) {
    const NodeId pa = parse_node_name(t.id);
    if (is_group_level(pa.level)) {
      preds.push_back({t.id, {}, t.kind});
    } else {
      preds.push_back({t.id, data.column(pa), t.kind});
    }
  }
  std::vector<std::vector<double>> expanded;
  expanded.reserve(preds.size());
  for (auto& p : preds) {
    if (p.values.empty()) {
      expanded.push_back(data.expand(data.column(parse_node_name(p.id))));
      p.values = expanded.back();
    }
  }
  const auto fitted = fit.predict(preds, std::span<const int>(data.unit_group));
  std::map<int, std::vector<int>> rows_by_group;
  for (int i = 0; i < data.n_units(); ++i) rows_by_group[data.unit_group[i]].push_back(i);

  const SmoothSpec& spec = model.options.cam_config.score_spec;
  const std::string parent = node_name(edge.from);
  GroupDeviation dev;
  for (const auto& [label, rows] : rows_by_group) {
    const std::vector<double> xs = subset(data.x[edge.from.index], rows);
    std::vector<double> resid(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      resid[r] = data.x[k][rows[r]] - fitted[rows[r]];
    }
    if (static_cast<int>(rows.size()) < spec.n_basis) {
      dev.zeroed.push_back(label);
      model.warnings.push_back("group " + std::to_string(label) + " has " +
                               std::to_string(rows.size()) + " units; deviation of " + parent +
                               " -> " + node_name(edge.to) + " set to zero");
      continue;
    }
    try {
      const AdditiveFit g =
          fit_additive(resid, std::vector<Predictor>{{parent, xs}}, std::nullopt, spec);
      dev.labels.push_back(label);
      dev.terms.push_back(g.terms().front());
    } catch (const FitError& e) {
      dev.zeroed.push_back(label);
      model.warnings.push_back("group " + std::to_string(label) + ": deviation of " + parent +
                               " -> " + node_name(edge.to) + " set to zero (" + e.what() + ")");
    }
  }
  model.deviations.resize(model.counts.x);
  model.deviations[k][parent] = std::move(dev);
}

std::optional<double> function_rmse(const HscmModel& model, const HierDataset& data,
                                    const std::vector<TrueFunction>& truth, int grid_size) {
  if (grid_size < 2) throw UsageError("grid_size must be at least 2");
  double sum = 0.0;
  int count = 0;
  for (const TrueFunction& tf : truth) {
    const Edge& e = tf.edge;
    if (e.from.level == Level::LatentU || !model.graph.has_edge(e.from, e.to)) continue;
    const AdditiveFit& eq = model.equation(e.to);
    const std::string parent = node_name(e.from);
    if (!eq.has_term(parent)) continue;
    const FittedTerm& term = eq.term(parent);

    std::vector<double> sorted = data.column(e.from);
    std::sort(sorted.begin(), sorted.end());
    const double lo = detail::type7_quantile(sorted, 0.01);
    const double hi = detail::type7_quantile(sorted, 0.99);
    std::vector<double> grid(grid_size);
    for (int g = 0; g < grid_size; ++g) grid[g] = lo + (hi - lo) * g / (grid_size - 1);

    std::vector<double> est(grid_size), tru(grid_size);
    const GroupDeviation* dev = nullptr;
    if (e.to.level == Level::Unit && e.to.index < static_cast<int>(model.deviations.size())) {
      const auto& per_var = model.deviations[e.to.index];
      const auto it = per_var.find(parent);
      if (it != per_var.end()) dev = &it->second;
    }
    if (dev == nullptr && tf.per_group.empty()) {
      for (int g = 0; g < grid_size; ++g) {
        est[g] = term.evaluate(grid[g]);
        tru[g] = tf.global(grid[g]);
      }
      sum += centred_rmse(est, tru);
    } else {
      double group_sum = 0.0;
      for (int label : data.group_labels) {
        const auto it = tf.per_group.find(label);
        const auto& f = it == tf.per_group.end() ? tf.global : it->second;
        for (int g = 0; g < grid_size; ++g) {
          est[g] = term.evaluate(grid[g]) + (dev ? dev->evaluate(label, grid[g]) : 0.0);
          tru[g] = f(grid[g]);
        }
        group_sum += centred_rmse(est, tru);
      }
      sum += group_sum / data.m();
    }
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / count;
}

}  // namespace hscm
