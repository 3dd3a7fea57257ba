#include "hscm/graph.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <queue>
#include <sstream>

#include "hscm/error.hpp"

namespace hscm {

namespace {

char level_prefix(Level level) {
  switch (level) {
    case Level::GroupZ: return 'Z';
    case Level::GroupW: return 'W';
    case Level::Unit: return 'X';
    case Level::LatentU: return 'U';
  }
  return '?';
}

// Dense position of a node: levels laid out in declaration order.
int flat_index(const LevelCounts& counts, NodeId node) {
  switch (node.level) {
    case Level::GroupZ: return node.index;
    case Level::GroupW: return counts.z + node.index;
    case Level::Unit: return counts.z + counts.w + node.index;
    case Level::LatentU: return counts.z + counts.w + counts.x + node.index;
  }
  return -1;
}

std::vector<NodeId> all_nodes(const LevelCounts& counts) {
  std::vector<NodeId> out;
  out.reserve(counts.total());
  for (Level level : {Level::GroupZ, Level::GroupW, Level::Unit, Level::LatentU}) {
    for (int i = 0; i < counts.of(level); ++i) out.push_back({level, i});
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

}  // namespace

std::string node_name(NodeId node) {
  return level_prefix(node.level) + std::to_string(node.index + 1);
}

NodeId parse_node_name(std::string_view name) {
  if (name.size() < 2) throw UsageError("malformed node name '" + std::string(name) + "'");
  NodeId node;
  switch (name.front()) {
    case 'Z': node.level = Level::GroupZ; break;
    case 'W': node.level = Level::GroupW; break;
    case 'X': node.level = Level::Unit; break;
    case 'U': node.level = Level::LatentU; break;
    default: throw UsageError("malformed node name '" + std::string(name) + "'");
  }
  int one_based = 0;
  const auto digits = name.substr(1);
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), one_based);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || one_based < 1) {
    throw UsageError("malformed node name '" + std::string(name) + "'");
  }
  node.index = one_based - 1;
  return node;
}

bool is_group_level(Level level) {
  return level == Level::GroupZ || level == Level::GroupW || level == Level::LatentU;
}

int LevelCounts::of(Level level) const {
  switch (level) {
    case Level::GroupZ: return z;
    case Level::GroupW: return w;
    case Level::Unit: return x;
    case Level::LatentU: return u;
  }
  return 0;
}

Dag::Dag(LevelCounts counts) : counts_(counts) {
  if (counts.z < 0 || counts.w < 0 || counts.x < 0 || counts.u < 0) {
    throw UsageError("negative node count");
  }
}

bool Dag::contains(NodeId node) const {
  return node.index >= 0 && node.index < counts_.of(node.level);
}

void Dag::check_node(NodeId node) const {
  if (!contains(node)) {
    throw StructuralError("node " + node_name(node) + " is not declared in this graph");
  }
}

bool Dag::creates_cycle(NodeId from, NodeId to) const {
  if (from == to) return true;
  // from -> to closes a cycle iff `from` is reachable from `to`.
  std::vector<NodeId> stack{to};
  std::set<NodeId> seen{to};
  while (!stack.empty()) {
    const NodeId current = stack.back();
    stack.pop_back();
    for (auto it = edges_.lower_bound({current, {Level::GroupZ, 0}});
         it != edges_.end() && it->from == current; ++it) {
      if (it->to == from) return true;
      if (seen.insert(it->to).second) stack.push_back(it->to);
    }
  }
  return false;
}

void Dag::add_edge(NodeId from, NodeId to) {
  check_node(from);
  check_node(to);
  const std::string label = node_name(from) + "->" + node_name(to);
  if (from == to) throw StructuralError("self-loop " + label);
  if (from.level == Level::Unit && to.level != Level::Unit) {
    throw StructuralError("unit-level variables cannot cause group-level ones: " + label);
  }
  if (to.level == Level::LatentU) throw StructuralError("latent nodes have no parents: " + label);
  if (has_edge(from, to)) throw StructuralError("duplicate edge " + label);
  if (creates_cycle(from, to)) throw StructuralError("edge " + label + " closes a cycle");
  edges_.insert({from, to});
}

void Dag::remove_edge(NodeId from, NodeId to) {
  if (edges_.erase({from, to}) == 0) {
    throw UsageError("edge " + node_name(from) + "->" + node_name(to) + " not present");
  }
}

std::vector<NodeId> Dag::nodes() const { return all_nodes(counts_); }

std::vector<NodeId> Dag::nodes(Level level) const {
  std::vector<NodeId> out;
  for (int i = 0; i < counts_.of(level); ++i) out.push_back({level, i});
  return out;
}

std::vector<NodeId> Dag::parents(NodeId node) const {
  std::vector<NodeId> out;
  for (const Edge& e : edges_) {
    if (e.to == node) out.push_back(e.from);
  }
  return out;
}

std::vector<NodeId> Dag::children(NodeId node) const {
  std::vector<NodeId> out;
  for (auto it = edges_.lower_bound({node, {Level::GroupZ, 0}});
       it != edges_.end() && it->from == node; ++it) {
    out.push_back(it->to);
  }
  return out;
}

std::set<NodeId> Dag::descendants(NodeId node) const {
  std::set<NodeId> seen;
  std::vector<NodeId> stack{node};
  while (!stack.empty()) {
    const NodeId current = stack.back();
    stack.pop_back();
    for (NodeId child : children(current)) {
      if (seen.insert(child).second) stack.push_back(child);
    }
  }
  return seen;
}

Dag Dag::without_latent() const {
  LevelCounts c = counts_;
  c.u = 0;
  Dag out(c);
  for (const Edge& e : edges_) {
    if (e.from.level != Level::LatentU) out.edges_.insert(e);
  }
  return out;
}

std::vector<NodeId> topological_order(const LevelCounts& counts, std::span<const Edge> edges) {
  const int n = counts.total();
  const std::vector<NodeId> nodes = all_nodes(counts);
  std::vector<int> indegree(n, 0);
  std::vector<std::vector<int>> out_edges(n);
  for (const Edge& e : edges) {
    const int a = flat_index(counts, e.from);
    const int b = flat_index(counts, e.to);
    out_edges[a].push_back(b);
    ++indegree[b];
  }
  // Flat index order coincides with (level, index) order.
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int i = 0; i < n; ++i) {
    if (indegree[i] == 0) ready.push(i);
  }
  std::vector<NodeId> order;
  order.reserve(n);
  while (!ready.empty()) {
    const int current = ready.top();
    ready.pop();
    order.push_back(nodes[current]);
    for (int next : out_edges[current]) {
      if (--indegree[next] == 0) ready.push(next);
    }
  }
  if (static_cast<int>(order.size()) != n) {
    // Every remaining node has a remaining parent; walking parents backwards
    // from any of them must revisit a node, and that step is a cycle edge.
    std::vector<int> parent_of(n, -1);
    for (const Edge& e : edges) {
      const int a = flat_index(counts, e.from);
      const int b = flat_index(counts, e.to);
      if (indegree[a] > 0 && indegree[b] > 0) parent_of[b] = a;
    }
    int start = 0;
    while (indegree[start] == 0) ++start;
    std::vector<bool> visited(n, false);
    int current = start;
    while (!visited[current]) {
      visited[current] = true;
      current = parent_of[current];
    }
    const int child = current;
    const int parent = parent_of[child];
    throw StructuralError("graph has a directed cycle through edge " + node_name(nodes[parent]) +
                          "->" + node_name(nodes[child]));
  }
  return order;
}

std::vector<NodeId> topological_order(const Dag& dag) {
  const std::vector<Edge> edges(dag.edges().begin(), dag.edges().end());
  return topological_order(dag.counts(), edges);
}

int shd(const Dag& estimated, const Dag& truth) {
  const LevelCounts& a = estimated.counts();
  const LevelCounts& b = truth.counts();
  if (a.z != b.z || a.w != b.w || a.x != b.x) {
    throw UsageError("shd: graphs are defined over different node sets");
  }
  // Orientation of each observed pair: 0 none, +1 lower->higher, -1 higher->lower.
  auto orientation = [](const Dag& g) {
    std::map<std::pair<NodeId, NodeId>, int> state;
    for (const Edge& e : g.edges()) {
      if (e.from.level == Level::LatentU) continue;
      if (e.from < e.to) {
        state[{e.from, e.to}] = 1;
      } else {
        state[{e.to, e.from}] = -1;
      }
    }
    return state;
  };
  const auto sa = orientation(estimated);
  const auto sb = orientation(truth);
  int distance = 0;
  for (const auto& [pair, dir] : sa) {
    const auto it = sb.find(pair);
    if (it == sb.end() || it->second != dir) ++distance;
  }
  for (const auto& [pair, dir] : sb) {
    if (!sa.contains(pair)) ++distance;
  }
  return distance;
}

std::string to_dot(const Dag& dag) {
  std::ostringstream out;
  out << "digraph hscm {\n";
  for (NodeId node : dag.nodes()) {
    out << "  " << node_name(node);
    if (node.level == Level::LatentU) out << " [style=dashed]";
    out << ";\n";
  }
  for (const Edge& e : dag.edges()) {
    out << "  " << node_name(e.from) << " -> " << node_name(e.to) << ";\n";
  }
  out << "}\n";
  return out.str();
}

Dag dag_from_dot(std::string_view text) {
  std::vector<std::string> statements;
  const auto open = text.find('{');
  const auto close = text.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open) {
    throw UsageError("DOT text has no digraph body");
  }
  if (trim(text.substr(0, open)).rfind("digraph", 0) != 0) {
    throw UsageError("DOT text is not a digraph");
  }
  std::string_view body = text.substr(open + 1, close - open - 1);
  std::size_t pos = 0;
  while (pos < body.size()) {
    auto end = body.find_first_of(";\n", pos);
    if (end == std::string_view::npos) end = body.size();
    std::string stmt = trim(body.substr(pos, end - pos));
    if (!stmt.empty()) statements.push_back(std::move(stmt));
    pos = end + 1;
  }
  std::vector<NodeId> nodes;
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (std::string stmt : statements) {
    if (const auto attr = stmt.find('['); attr != std::string::npos) stmt = trim(stmt.substr(0, attr));
    if (const auto arrow = stmt.find("->"); arrow != std::string::npos) {
      const NodeId from = parse_node_name(trim(std::string_view(stmt).substr(0, arrow)));
      const NodeId to = parse_node_name(trim(std::string_view(stmt).substr(arrow + 2)));
      nodes.push_back(from);
      nodes.push_back(to);
      edges.emplace_back(from, to);
    } else {
      nodes.push_back(parse_node_name(stmt));
    }
  }
  LevelCounts counts;
  for (NodeId node : nodes) {
    int& count = node.level == Level::GroupZ   ? counts.z
                 : node.level == Level::GroupW ? counts.w
                 : node.level == Level::Unit   ? counts.x
                                               : counts.u;
    count = std::max(count, node.index + 1);
  }
  Dag dag(counts);
  for (const auto& [from, to] : edges) dag.add_edge(from, to);
  return dag;
}

nlohmann::json to_json(const Dag& dag) {
  nlohmann::json edges = nlohmann::json::array();
  for (const Edge& e : dag.edges()) edges.push_back({node_name(e.from), node_name(e.to)});
  const LevelCounts& c = dag.counts();
  return {{"levels", {{"z", c.z}, {"w", c.w}, {"x", c.x}, {"u", c.u}}}, {"edges", edges}};
}

Dag dag_from_json(const nlohmann::json& j) {
  try {
    const auto& levels = j.at("levels");
    LevelCounts counts{levels.value("z", 0), levels.value("w", 0), levels.value("x", 0),
                       levels.value("u", 0)};
    Dag dag(counts);
    for (const auto& e : j.at("edges")) {
      dag.add_edge(parse_node_name(e.at(0).get<std::string>()),
                   parse_node_name(e.at(1).get<std::string>()));
    }
    return dag;
  } catch (const nlohmann::json::exception& ex) {
    throw UsageError(std::string("malformed DAG JSON: ") + ex.what());
  }
}

}  // namespace hscm
