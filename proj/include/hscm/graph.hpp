#pragma once

#include <compare>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace hscm {

/// Level of a variable in the hierarchy. The declaration order is the
/// tie-break order used by topological_order.
enum class Level : std::uint8_t { GroupZ, GroupW, Unit, LatentU };

struct NodeId {
  Level level = Level::GroupZ;
  int index = 0;

  auto operator<=>(const NodeId&) const = default;
};

/// "Z3", "W1", "X2", "U1" (1-based).
std::string node_name(NodeId node);
/// Inverse of node_name; throws UsageError on malformed names.
NodeId parse_node_name(std::string_view name);
bool is_group_level(Level level);

struct LevelCounts {
  int z = 0;
  int w = 0;
  int x = 0;
  int u = 0;

  int of(Level level) const;
  int total() const { return z + w + x + u; }
  bool operator==(const LevelCounts&) const = default;
};

struct Edge {
  NodeId from;
  NodeId to;

  auto operator<=>(const Edge&) const = default;
};

/// Leveled directed acyclic graph. Every mutation re-checks the invariants:
/// no cycles, no self-loops or duplicates, no Unit -> group edges and nothing
/// pointing into a latent node.
class Dag {
 public:
  Dag() = default;
  explicit Dag(LevelCounts counts);

  const LevelCounts& counts() const { return counts_; }
  int node_count() const { return counts_.total(); }
  const std::set<Edge>& edges() const { return edges_; }
  std::size_t edge_count() const { return edges_.size(); }

  bool contains(NodeId node) const;
  bool has_edge(NodeId from, NodeId to) const { return edges_.contains({from, to}); }
  /// True when from -> to would close a directed cycle.
  bool creates_cycle(NodeId from, NodeId to) const;
  /// Throws StructuralError if the edge breaks an invariant.
  void add_edge(NodeId from, NodeId to);
  void remove_edge(NodeId from, NodeId to);

  std::vector<NodeId> nodes() const;
  std::vector<NodeId> nodes(Level level) const;
  std::vector<NodeId> parents(NodeId node) const;
  std::vector<NodeId> children(NodeId node) const;
  /// Every node reachable from `node` along directed edges (excluding itself).
  std::set<NodeId> descendants(NodeId node) const;

  /// Copy with latent nodes and their edges dropped.
  Dag without_latent() const;

  bool operator==(const Dag&) const = default;

 private:
  void check_node(NodeId node) const;

  LevelCounts counts_;
  std::set<Edge> edges_;
};

/// Kahn's algorithm with ties broken by (level, index). Throws StructuralError
/// naming one edge of a cycle if the edge list is cyclic.
std::vector<NodeId> topological_order(const LevelCounts& counts, std::span<const Edge> edges);
std::vector<NodeId> topological_order(const Dag& dag);

/// Structural Hamming distance: insertions + deletions + reversals (a reversal
/// counts once). Latent nodes are ignored; the observed node sets must match.
int shd(const Dag& estimated, const Dag& truth);

std::string to_dot(const Dag& dag);
Dag dag_from_dot(std::string_view text);
nlohmann::json to_json(const Dag& dag);
Dag dag_from_json(const nlohmann::json& j);

}  // namespace hscm
