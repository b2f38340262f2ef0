#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "agrocausal/error.hpp"

namespace agrocausal {

enum class Role { treatment, outcome, observed, unobserved, constant };

inline const char* to_string(Role role) {
  switch (role) {
    case Role::treatment: return "treatment";
    case Role::outcome: return "outcome";
    case Role::observed: return "observed";
    case Role::unobserved: return "unobserved";
    case Role::constant: return "constant";
  }
  return "observed";
}

inline Role parse_role(const std::string& text) {
  if (text == "treatment") return Role::treatment;
  if (text == "outcome") return Role::outcome;
  if (text == "observed") return Role::observed;
  if (text == "unobserved") return Role::unobserved;
  if (text == "constant") return Role::constant;
  throw Error(ErrorCode::Parse, "unknown node role '" + text + "'");
}

struct Node {
  std::string name;
  Role role = Role::observed;
};

using Edge = std::pair<std::string, std::string>;
using NodeSet = std::set<std::string>;

/// A named DAG with role-tagged nodes. Construction never throws on
/// structural problems; they are recorded and reported by validate_dag, and
/// every query on an invalid graph rethrows the recorded error.
class CausalGraph {
 public:
  CausalGraph() = default;

  CausalGraph(std::vector<Node> nodes, std::vector<Edge> edges)
      : nodes_(std::move(nodes)), edges_(std::move(edges)) {
    build();
  }

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t size() const { return nodes_.size(); }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t index_of(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw Error(ErrorCode::UnknownNode, "'" + name + "'", {name});
    return it->second;
  }

  const Node& node(std::size_t i) const { return nodes_[i]; }
  Role role(const std::string& name) const { return nodes_[index_of(name)].role; }

  const std::vector<std::size_t>& parents(std::size_t i) const { return parents_[i]; }
  const std::vector<std::size_t>& children(std::size_t i) const { return children_[i]; }

  std::vector<std::string> parent_names(const std::string& name) const {
    std::vector<std::string> out;
    for (auto p : parents(index_of(name))) out.push_back(nodes_[p].name);
    return out;
  }

  bool has_edge(const std::string& from, const std::string& to) const {
    return std::find(edges_.begin(), edges_.end(), Edge{from, to}) != edges_.end();
  }

  /// Node indices in a topological order (parents before children).
  const std::vector<std::size_t>& topological_order() const {
    require_valid();
    return topo_;
  }

  const std::optional<Error>& defect() const { return defect_; }
  bool is_valid() const { return !defect_.has_value(); }
  void require_valid() const {
    if (defect_) throw *defect_;
  }

  std::string designated(Role role) const {
    std::optional<std::string> found;
    for (const auto& n : nodes_) {
      if (n.role != role) continue;
      if (found) {
        throw Error(ErrorCode::MissingDesignation,
                    std::string("more than one ") + to_string(role) + " node");
      }
      found = n.name;
    }
    if (!found) {
      throw Error(ErrorCode::MissingDesignation, std::string("no ") + to_string(role) + " node");
    }
    return *found;
  }
  std::string treatment() const { return designated(Role::treatment); }
  std::string outcome() const { return designated(Role::outcome); }

  /// Descendants of node i, including i itself.
  std::vector<char> descendants_mask(std::size_t i) const {
    std::vector<char> seen(size(), 0);
    std::vector<std::size_t> stack{i};
    seen[i] = 1;
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      for (auto c : children_[v]) {
        if (!seen[c]) {
          seen[c] = 1;
          stack.push_back(c);
        }
      }
    }
    return seen;
  }

  /// Ancestors of every node flagged in `mask`, including the flagged nodes.
  std::vector<char> ancestors_mask(const std::vector<char>& mask) const {
    std::vector<char> seen = mask;
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < size(); ++i) {
      if (mask[i]) stack.push_back(i);
    }
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      for (auto p : parents_[v]) {
        if (!seen[p]) {
          seen[p] = 1;
          stack.push_back(p);
        }
      }
    }
    return seen;
  }

  std::vector<char> mask_of(const NodeSet& names) const {
    std::vector<char> mask(size(), 0);
    for (const auto& n : names) mask[index_of(n)] = 1;
    return mask;
  }

  /// Copy with the extra edge appended (validity is re-evaluated).
  CausalGraph with_edge(const std::string& from, const std::string& to) const {
    auto edges = edges_;
    edges.emplace_back(from, to);
    return CausalGraph(nodes_, std::move(edges));
  }

 private:
  void build() {
    const std::size_t n = nodes_.size();
    parents_.assign(n, {});
    children_.assign(n, {});
    for (std::size_t i = 0; i < n; ++i) {
      if (!index_.emplace(nodes_[i].name, i).second && !defect_) {
        defect_ = Error(ErrorCode::InvalidArgument, "duplicate node '" + nodes_[i].name + "'",
                        {nodes_[i].name});
      }
    }
    std::set<Edge> seen;
    for (const auto& [from, to] : edges_) {
      const auto a = index_.find(from);
      const auto b = index_.find(to);
      if (a == index_.end() || b == index_.end()) {
        if (!defect_) {
          defect_ = Error(ErrorCode::DanglingEdge, from + " -> " + to + " references an undeclared node",
                          {a == index_.end() ? from : to});
        }
        continue;
      }
      if (!seen.insert({from, to}).second) {
        if (!defect_) defect_ = Error(ErrorCode::DuplicateEdge, from + " -> " + to, {from, to});
        continue;
      }
      if (a->second == b->second) {
        if (!defect_) defect_ = Error(ErrorCode::SelfLoop, from + " -> " + to, {from});
        continue;
      }
      children_[a->second].push_back(b->second);
      parents_[b->second].push_back(a->second);
    }
    if (!defect_) find_order_or_cycle();
  }

  // Iterative DFS; on a back edge the cycle is read off the DFS stack.
  void find_order_or_cycle() {
    const std::size_t n = nodes_.size();
    enum : char { white, grey, black };
    std::vector<char> color(n, white);
    std::vector<std::size_t> post;
    for (std::size_t root = 0; root < n; ++root) {
      if (color[root] != white) continue;
      std::vector<std::pair<std::size_t, std::size_t>> stack{{root, 0}};
      color[root] = grey;
      while (!stack.empty()) {
        auto& [v, next] = stack.back();
        if (next < children_[v].size()) {
          const auto c = children_[v][next++];
          if (color[c] == grey) {
            std::vector<std::string> cycle;
            auto it = std::find_if(stack.begin(), stack.end(), [c](const auto& f) { return f.first == c; });
            for (; it != stack.end(); ++it) cycle.push_back(nodes_[it->first].name);
            std::string text;
            for (const auto& name : cycle) text += name + " -> ";
            text += nodes_[c].name;
            defect_ = Error(ErrorCode::CycleDetected, text, cycle);
            return;
          }
          if (color[c] == white) {
            color[c] = grey;
            stack.emplace_back(c, 0);
          }
        } else {
          color[v] = black;
          post.push_back(v);
          stack.pop_back();
        }
      }
    }
    topo_.assign(post.rbegin(), post.rend());
  }

  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::vector<std::size_t>> parents_;
  std::vector<std::vector<std::size_t>> children_;
  std::vector<std::size_t> topo_;
  std::optional<Error> defect_;
};

/// Throws the first structural defect (cycle, dangling or duplicate edge).
inline void validate_dag(const CausalGraph& graph) { graph.require_valid(); }

namespace detail {

// Reachability ("Bayes ball") from `sources` given the conditioning mask.
// When `cut_out_of` is set, edges leaving that node are ignored.
inline std::vector<char> d_connected_from(const CausalGraph& g, const std::vector<char>& sources,
                                          const std::vector<char>& given,
                                          std::optional<std::size_t> cut_out_of = std::nullopt) {
  const std::size_t n = g.size();
  std::vector<char> anc_given = given;
  {
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < n; ++i) {
      if (given[i]) stack.push_back(i);
    }
    while (!stack.empty()) {
      const auto v = stack.back();
      stack.pop_back();
      for (auto p : g.parents(v)) {
        if (!anc_given[p] && !(cut_out_of && *cut_out_of == p)) {
          anc_given[p] = 1;
          stack.push_back(p);
        }
      }
    }
  }
  auto kids = [&](std::size_t v) -> const std::vector<std::size_t>& {
    static const std::vector<std::size_t> none;
    return cut_out_of && *cut_out_of == v ? none : g.children(v);
  };
  auto has_parent_edge = [&](std::size_t parent) { return !(cut_out_of && *cut_out_of == parent); };

  // visited[v][0]: reached from a child (moving up); [1]: from a parent.
  std::vector<std::array<char, 2>> visited(n, {0, 0});
  std::vector<char> reachable(n, 0);
  std::vector<std::pair<std::size_t, int>> queue;
  for (std::size_t i = 0; i < n; ++i) {
    if (sources[i]) queue.emplace_back(i, 0);
  }
  while (!queue.empty()) {
    const auto [v, dir] = queue.back();
    queue.pop_back();
    if (visited[v][dir]) continue;
    visited[v][dir] = 1;
    if (!given[v]) reachable[v] = 1;
    if (dir == 0) {
      if (given[v]) continue;
      for (auto p : g.parents(v)) {
        if (has_parent_edge(p)) queue.emplace_back(p, 0);
      }
      for (auto c : kids(v)) queue.emplace_back(c, 1);
    } else {
      if (!given[v]) {
        for (auto c : kids(v)) queue.emplace_back(c, 1);
      }
      if (anc_given[v]) {
        for (auto p : g.parents(v)) {
          if (has_parent_edge(p)) queue.emplace_back(p, 0);
        }
      }
    }
  }
  return reachable;
}

inline void require_disjoint(const NodeSet& a, const NodeSet& b, const char* what) {
  for (const auto& n : a) {
    if (b.count(n)) throw Error(ErrorCode::InvalidArgument, std::string(what) + " overlap on '" + n + "'", {n});
  }
}

}  // namespace detail

/// True iff every path between `x` and `y` is blocked by `given`.
inline bool d_separated(const CausalGraph& graph, const NodeSet& x, const NodeSet& y,
                        const NodeSet& given) {
  graph.require_valid();
  const auto xm = graph.mask_of(x);
  const auto ym = graph.mask_of(y);
  const auto zm = graph.mask_of(given);
  detail::require_disjoint(x, y, "x and y");
  detail::require_disjoint(x, given, "x and given");
  detail::require_disjoint(y, given, "y and given");
  const auto reach = detail::d_connected_from(graph, xm, zm);
  for (std::size_t i = 0; i < graph.size(); ++i) {
    if (ym[i] && reach[i]) return false;
  }
  return true;
}

namespace detail {

inline bool backdoor_by_mask(const CausalGraph& g, std::size_t t, std::size_t y,
                             const std::vector<char>& desc_t, const std::vector<char>& z) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (z[i] && desc_t[i]) return false;
  }
  std::vector<char> src(g.size(), 0);
  src[t] = 1;
  return !d_connected_from(g, src, z, t)[y];
}

}  // namespace detail

/// Back-door criterion for the designated treatment/outcome pair.
inline bool is_valid_backdoor(const CausalGraph& graph, const NodeSet& z) {
  graph.require_valid();
  const auto t = graph.index_of(graph.treatment());
  const auto y = graph.index_of(graph.outcome());
  const auto zm = graph.mask_of(z);
  if (zm[t] || zm[y]) {
    throw Error(ErrorCode::InvalidArgument, "adjustment set contains the treatment or outcome");
  }
  return detail::backdoor_by_mask(graph, t, y, graph.descendants_mask(t), zm);
}

struct AdjustmentSet {
  NodeSet members;
  bool minimal = false;

  bool operator==(const AdjustmentSet&) const = default;
};

/// Candidate pools up to this size are enumerated exhaustively.
inline constexpr std::size_t kExhaustiveCandidateLimit = 16;

/// Valid back-door sets over observed/constant non-descendants of the
/// treatment. Minimal sets come first, ordered by size and then by node
/// declaration order; non-minimal valid sets fill the remainder up to
/// `max_sets`.
inline std::vector<AdjustmentSet> enumerate_backdoor_sets(const CausalGraph& graph,
                                                          std::size_t max_sets = 10) {
  graph.require_valid();
  const auto t = graph.index_of(graph.treatment());
  const auto y = graph.index_of(graph.outcome());
  const auto desc_t = graph.descendants_mask(t);
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const Role r = graph.node(i).role;
    if ((r == Role::observed || r == Role::constant) && !desc_t[i] && i != y) pool.push_back(i);
  }
  auto to_set = [&](const std::vector<char>& mask, bool minimal) {
    AdjustmentSet s;
    s.minimal = minimal;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) s.members.insert(graph.node(i).name);
    }
    return s;
  };
  auto valid = [&](const std::vector<char>& mask) {
    return detail::backdoor_by_mask(graph, t, y, desc_t, mask);
  };

  std::vector<AdjustmentSet> minimal_sets;
  std::vector<AdjustmentSet> other_sets;
  if (max_sets == 0) return {};

  if (pool.size() <= kExhaustiveCandidateLimit) {
    const std::size_t k = pool.size();
    std::vector<std::uint32_t> minimal_masks;
    for (std::size_t size = 0; size <= k; ++size) {
      // combinations of `size` pool positions in lexicographic order
      std::vector<std::size_t> pick(size);
      for (std::size_t i = 0; i < size; ++i) pick[i] = i;
      while (true) {
        std::uint32_t bits = 0;
        std::vector<char> mask(graph.size(), 0);
        for (auto p : pick) {
          bits |= 1u << p;
          mask[pool[p]] = 1;
        }
        if (valid(mask)) {
          const bool has_minimal_subset = std::any_of(
              minimal_masks.begin(), minimal_masks.end(), [bits](std::uint32_t m) { return (m & bits) == m; });
          if (!has_minimal_subset) {
            minimal_masks.push_back(bits);
            minimal_sets.push_back(to_set(mask, true));
          } else if (other_sets.size() < max_sets) {
            other_sets.push_back(to_set(mask, false));
          }
        }
        std::ptrdiff_t i = static_cast<std::ptrdiff_t>(size) - 1;
        while (i >= 0 && pick[i] == k - size + static_cast<std::size_t>(i)) --i;
        if (i < 0) break;
        ++pick[i];
        for (std::size_t j = static_cast<std::size_t>(i) + 1; j < size; ++j) pick[j] = pick[j - 1] + 1;
      }
    }
  } else {
    // Large pools: start from the ancestral candidate set (valid whenever any
    // back-door set exists), fall back to the whole pool, then prune greedily
    // in several orders to reach distinct minimal sets.
    std::vector<char> target(graph.size(), 0);
    target[t] = target[y] = 1;
    const auto anc = graph.ancestors_mask(target);
    std::vector<char> start(graph.size(), 0);
    for (auto p : pool) start[p] = anc[p];
    if (!valid(start)) {
      for (auto p : pool) start[p] = 1;
      if (!valid(start)) return {};
    }
    std::set<NodeSet> found;
    for (std::size_t rotation = 0; rotation < pool.size() && found.size() < max_sets; ++rotation) {
      auto mask = start;
      for (std::size_t j = 0; j < pool.size(); ++j) {
        const auto p = pool[(j + rotation) % pool.size()];
        if (!mask[p]) continue;
        mask[p] = 0;
        if (!valid(mask)) mask[p] = 1;
      }
      auto s = to_set(mask, true);
      if (found.insert(s.members).second) minimal_sets.push_back(std::move(s));
    }
    std::stable_sort(minimal_sets.begin(), minimal_sets.end(),
                     [](const auto& a, const auto& b) { return a.members.size() < b.members.size(); });
  }

  std::vector<AdjustmentSet> out;
  for (auto& s : minimal_sets) {
    if (out.size() == max_sets) break;
    out.push_back(std::move(s));
  }
  for (auto& s : other_sets) {
    if (out.size() == max_sets) break;
    out.push_back(std::move(s));
  }
  return out;
}

// --- JSON ------------------------------------------------------------------

inline CausalGraph graph_from_json(const nlohmann::json& j) {
  try {
    std::vector<Node> nodes;
    for (const auto& n : j.at("nodes")) {
      nodes.push_back({n.at("name").get<std::string>(), parse_role(n.value("role", "observed"))});
    }
    std::vector<Edge> edges;
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw Error(ErrorCode::Parse, "edge must be a [from, to] pair");
      edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
    }
    return CausalGraph(std::move(nodes), std::move(edges));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("graph JSON: ") + e.what());
  }
}

inline nlohmann::json graph_to_json(const CausalGraph& g) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : g.nodes()) nodes.push_back({{"name", n.name}, {"role", to_string(n.role)}});
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [a, b] : g.edges()) edges.push_back({a, b});
  return {{"nodes", nodes}, {"edges", edges}};
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Parse, "'" + path + "': " + e.what());
  }
}

inline CausalGraph load_graph(const std::string& path) { return graph_from_json(read_json_file(path)); }

}  // namespace agrocausal
