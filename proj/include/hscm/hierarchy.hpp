#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hscm/cam.hpp"
#include "hscm/exec.hpp"
#include "hscm/gam.hpp"
#include "hscm/graph.hpp"

namespace hscm {

/// Two-level data. Groups are rows of Z (and W); units are rows of X tagged with
/// the label of their group.
struct HierDataset {
  std::vector<int> group_labels;        // one per group, unique
  std::vector<std::vector<double>> z;   // q columns of length m
  std::vector<std::vector<double>> w;   // q_w columns of length m, possibly none
  std::vector<int> unit_group;          // group label of every unit row
  std::vector<std::vector<double>> x;   // p columns of length n_units

  int m() const { return static_cast<int>(group_labels.size()); }
  int q() const { return static_cast<int>(z.size()); }
  int qw() const { return static_cast<int>(w.size()); }
  int p() const { return static_cast<int>(x.size()); }
  int n_units() const { return static_cast<int>(unit_group.size()); }

  /// Position of `label` in group_labels; throws UsageError when unknown.
  int group_position(int label) const;
  std::vector<int> group_sizes() const;
  /// Group-level column expanded to one value per unit row.
  std::vector<double> expand(const std::vector<double>& group_column) const;
  /// Column of the node's level (Z, W or X).
  const std::vector<double>& column(NodeId node) const;

  /// Throws UsageError on inconsistent shapes, unknown or duplicate labels and
  /// empty groups.
  void validate() const;
};

struct EstimateOptions {
  double alpha = 0.001;
  bool skip_group_dag = false;
  bool group_specific_functions = false;
  bool second_factor = false;
  /// Term kind of group-level parents of unit variables in the screening
  /// regressions.
  TermKind group_parent_kind = TermKind::nonlinear_smooth;
  /// Term kind of the same parents in the final refit.
  TermKind refit_group_parent_kind = TermKind::nonlinear_smooth;
  CamConfig cam_config;
  ExecPolicy policy = ExecPolicy::parallel;

  void validate() const;
  nlohmann::json to_json() const;
  static EstimateOptions from_json(const nlohmann::json& j);
};

/// Per-group deviation smooths s_2j for one unit-to-unit edge.
struct GroupDeviation {
  std::vector<int> labels;          // groups with a fitted deviation
  std::vector<FittedTerm> terms;    // matching `labels`
  std::vector<int> zeroed;          // groups too small for a deviation

  /// Deviation for `label`, zero for unseen or zeroed groups.
  double evaluate(int label, double x) const;
};

struct HscmModel {
  LevelCounts counts;  // z, w, x; u is always 0
  Dag graph;           // D_Z, D_W, D_X and group-to-unit edges
  bool group_dag_estimated = false;
  int reference_group = 0;  // label of the group used for unit-level discovery
  std::vector<int> group_labels;
  EstimateOptions options;

  std::vector<AdditiveFit> z_equations;
  std::vector<AdditiveFit> w_equations;
  std::vector<AdditiveFit> x_equations;  // final refits, with group intercepts
  /// The screening regressions deciding group-level parents of each X^k.
  std::vector<AdditiveFit> screening;
  /// Keyed by parent name, per unit variable.
  std::vector<std::map<std::string, GroupDeviation>> deviations;
  std::vector<std::string> warnings;

  const AdditiveFit& equation(NodeId node) const;
  double noise_sd(NodeId node) const;
  /// xi_j of X^k, aligned with group_labels.
  std::vector<double> group_intercepts(int k) const;

  nlohmann::json to_json() const;
  static HscmModel from_json(const nlohmann::json& j);
};

HscmModel estimate(const HierDataset& data, const EstimateOptions& opts);

/// Fits the per-group deviations of X^d -> X^k on the residuals of the final
/// refit and stores them in `model`.
void fit_group_specific(const HierDataset& data, HscmModel& model, Edge edge);

/// A causal function of the data-generating process, optionally with a
/// different function per group label.
struct TrueFunction {
  Edge edge;
  std::function<double(double)> global;
  std::map<int, std::function<double(double)>> per_group;
};

/// Mean over common edges of the centred RMSE between true and estimated
/// functions on a grid spanning the 1st to 99th percentile of the parent.
/// Empty when the model and the truth share no edge.
std::optional<double> function_rmse(const HscmModel& model, const HierDataset& data,
                                    const std::vector<TrueFunction>& truth, int grid_size = 200);

}  // namespace hscm
