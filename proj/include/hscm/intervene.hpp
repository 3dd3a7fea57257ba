#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hscm/exec.hpp"
#include "hscm/graph.hpp"
#include "hscm/hierarchy.hpp"

namespace hscm {

/// Hard intervention do(target = value). Without a target the model is
/// simulated as estimated.
struct InterventionRequest {
  std::optional<NodeId> target;
  double value = 0.0;
  int M = 1;  // group-level samples per group
  int N = 1;  // unit-level samples per group-level sample
  std::uint64_t seed = 1;

  void validate() const;
};

/// Rows are ordered by group, then subgroup, then replicate. Group-level
/// tables have m*M rows and unit-level tables m*M*N rows.
struct InterventionResult {
  std::optional<NodeId> target;
  double value = 0.0;
  int M = 0;
  int N = 0;
  std::vector<int> group_labels;
  std::vector<std::vector<double>> z;  // q columns
  std::vector<std::vector<double>> w;  // q_w columns
  std::vector<std::vector<double>> x;  // p columns

  int m() const { return static_cast<int>(group_labels.size()); }
  std::size_t group_rows() const { return static_cast<std::size_t>(m()) * M; }
  std::size_t unit_rows() const { return group_rows() * static_cast<std::size_t>(N); }
  int row_group(std::size_t group_row) const { return group_labels[group_row / M]; }
  int row_subgroup(std::size_t group_row) const { return static_cast<int>(group_row % M); }
  const std::vector<double>& column(NodeId node) const;
};

InterventionResult do_intervention(const HscmModel& model, const HierDataset& data,
                                   const InterventionRequest& req,
                                   ExecPolicy policy = ExecPolicy::parallel);

enum class SummaryLevel { group, unit, all };
SummaryLevel summary_level_from_string(std::string_view s);

/// Mean and 1/5/25/50/75/95/99% quantiles (type 7) of every simulated
/// variable of the requested level. Group-level summaries of a unit-level
/// intervention are refused with UsageError; `all` then covers units only.
nlohmann::json summarize(const InterventionResult& result, SummaryLevel level);

/// group,subgroup,Z..(,W..) with subgroups numbered from 1.
std::string ztilde_csv(const InterventionResult& result);
/// group,subgroup,replicate,X.. with subgroups and replicates numbered from 1.
std::string xtilde_csv(const InterventionResult& result);

}  // namespace hscm
