#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace fleetlab {

using NodeId = std::int32_t;
using ArcIndex = std::size_t;

class GuidepathError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Arc {
  NodeId from = 0;
  NodeId to = 0;
  double weight = 0.0;  // nominal travel time, seconds

  friend bool operator==(const Arc&, const Arc&) = default;
};

/// A loopless chain of arcs. An empty route stays at `origin` with cost 0.
struct Route {
  NodeId origin = 0;
  std::vector<Arc> arcs;
  double total_cost = 0.0;

  NodeId destination() const { return arcs.empty() ? origin : arcs.back().to; }

  std::vector<NodeId> nodes() const {
    std::vector<NodeId> out{origin};
    for (const Arc& a : arcs) out.push_back(a.to);
    return out;
  }

  bool empty() const { return arcs.empty(); }
};

/// Checks chaining, looplessness and the cost sum. Used by tests and debug
/// assertions.
inline bool route_is_well_formed(const Route& r) {
  double sum = 0.0;
  NodeId at = r.origin;
  std::set<NodeId> seen{at};
  for (const Arc& a : r.arcs) {
    if (a.from != at) return false;
    if (!seen.insert(a.to).second) return false;
    at = a.to;
    sum += a.weight;
  }
  const double scale = std::max(1.0, std::abs(sum));
  return std::abs(sum - r.total_cost) <= 1e-9 * scale;
}

class GuidepathGraph {
 public:
  GuidepathGraph() = default;

  NodeId add_node(std::string name = {}) {
    names_.push_back(std::move(name));
    out_.emplace_back();
    in_degree_.push_back(0);
    return static_cast<NodeId>(names_.size() - 1);
  }

  ArcIndex add_arc(NodeId from, NodeId to, double weight) {
    if (!contains(from) || !contains(to)) {
      throw GuidepathError("arc " + std::to_string(from) + "->" + std::to_string(to) +
                           " has a dangling endpoint");
    }
    if (from == to) throw GuidepathError("self-loop arc on node " + std::to_string(from));
    if (!(weight > 0.0) || !std::isfinite(weight)) {
      throw GuidepathError("arc " + std::to_string(from) + "->" + std::to_string(to) +
                           " has non-positive weight");
    }
    if (lookup_.contains({from, to})) {
      throw GuidepathError("duplicate arc " + std::to_string(from) + "->" + std::to_string(to));
    }
    const ArcIndex idx = arcs_.size();
    arcs_.push_back(Arc{from, to, weight});
    lookup_.emplace(std::pair{from, to}, idx);
    out_[static_cast<std::size_t>(from)].push_back(idx);
    ++in_degree_[static_cast<std::size_t>(to)];
    return idx;
  }

  void set_stations(std::vector<NodeId> stations) {
    std::set<NodeId> uniq;
    for (NodeId s : stations) {
      if (!contains(s)) throw GuidepathError("station " + std::to_string(s) + " is not a node");
      if (!uniq.insert(s).second) throw GuidepathError("duplicate station " + std::to_string(s));
    }
    stations_ = std::move(stations);
  }

  std::size_t node_count() const { return names_.size(); }
  std::size_t arc_count() const { return arcs_.size(); }
  bool contains(NodeId n) const { return n >= 0 && static_cast<std::size_t>(n) < names_.size(); }

  const Arc& arc(ArcIndex i) const { return arcs_.at(i); }
  std::span<const Arc> arcs() const { return arcs_; }
  std::span<const ArcIndex> out_arcs(NodeId n) const { return out_.at(static_cast<std::size_t>(n)); }
  std::size_t out_degree(NodeId n) const { return out_arcs(n).size(); }
  std::size_t in_degree(NodeId n) const { return in_degree_.at(static_cast<std::size_t>(n)); }
  const std::string& node_name(NodeId n) const { return names_.at(static_cast<std::size_t>(n)); }

  std::optional<ArcIndex> find_arc(NodeId from, NodeId to) const {
    auto it = lookup_.find({from, to});
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
  }

  /// Station nodes; when none were declared every node is a station.
  std::vector<NodeId> stations() const {
    if (!stations_.empty()) return stations_;
    std::vector<NodeId> all(node_count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<NodeId>(i);
    return all;
  }
  bool has_declared_stations() const { return !stations_.empty(); }

  void require_node(NodeId n) const {
    if (!contains(n)) throw GuidepathError("unknown node id " + std::to_string(n));
  }

 private:
  std::vector<std::string> names_;
  std::vector<Arc> arcs_;
  std::vector<std::vector<ArcIndex>> out_;
  std::vector<std::size_t> in_degree_;
  std::map<std::pair<NodeId, NodeId>, ArcIndex> lookup_;
  std::vector<NodeId> stations_;
};

// ---------------------------------------------------------------------------
// Guidepath documents
// ---------------------------------------------------------------------------

namespace detail {

inline std::int64_t json_int(const nlohmann::json& v, const std::string& where) {
  if (!v.is_number_integer()) throw GuidepathError(where + ": expected an integer");
  return v.get<std::int64_t>();
}

}  // namespace detail

inline GuidepathGraph guidepath_from_json(const nlohmann::json& doc) {
  using detail::json_int;
  if (!doc.is_object()) throw GuidepathError("guidepath: top level must be an object");
  if (!doc.contains("nodes") || !doc["nodes"].is_array()) {
    throw GuidepathError("guidepath: missing `nodes` list");
  }
  if (!doc.contains("arcs") || !doc["arcs"].is_array()) {
    throw GuidepathError("guidepath: missing `arcs` list");
  }

  const auto& nodes = doc["nodes"];
  std::vector<std::optional<std::string>> names(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string where = "nodes[" + std::to_string(i) + "]";
    const auto& n = nodes[i];
    if (!n.is_object() || !n.contains("id")) throw GuidepathError(where + ": missing `id`");
    const auto id = json_int(n["id"], where + ".id");
    if (id < 0 || static_cast<std::size_t>(id) >= nodes.size()) {
      throw GuidepathError(where + ".id: " + std::to_string(id) + " outside dense range [0, " +
                           std::to_string(nodes.size()) + ")");
    }
    auto& slot = names[static_cast<std::size_t>(id)];
    if (slot) throw GuidepathError(where + ".id: duplicate node id " + std::to_string(id));
    std::string name;
    if (n.contains("name")) {
      if (!n["name"].is_string()) throw GuidepathError(where + ".name: expected a string");
      name = n["name"].get<std::string>();
    }
    slot = std::move(name);
  }

  GuidepathGraph g;
  for (auto& name : names) g.add_node(std::move(*name));

  const auto& arcs = doc["arcs"];
  for (std::size_t i = 0; i < arcs.size(); ++i) {
    const std::string where = "arcs[" + std::to_string(i) + "]";
    const auto& a = arcs[i];
    if (!a.is_object()) throw GuidepathError(where + ": expected an object");
    for (const char* key : {"from", "to", "weight"}) {
      if (!a.contains(key)) throw GuidepathError(where + ": missing `" + key + "`");
    }
    const auto from = json_int(a["from"], where + ".from");
    const auto to = json_int(a["to"], where + ".to");
    if (!a["weight"].is_number()) throw GuidepathError(where + ".weight: expected a number");
    const double w = a["weight"].get<double>();
    if (!g.contains(static_cast<NodeId>(from)) || !g.contains(static_cast<NodeId>(to)) ||
        from > std::numeric_limits<NodeId>::max() || to > std::numeric_limits<NodeId>::max()) {
      throw GuidepathError(where + ": dangling arc endpoint " + std::to_string(from) + "->" +
                           std::to_string(to));
    }
    try {
      g.add_arc(static_cast<NodeId>(from), static_cast<NodeId>(to), w);
    } catch (const GuidepathError& e) {
      throw GuidepathError(where + ": " + e.what());
    }
  }

  if (doc.contains("stations")) {
    const auto& st = doc["stations"];
    if (!st.is_array()) throw GuidepathError("stations: expected a list");
    std::vector<NodeId> stations;
    for (std::size_t i = 0; i < st.size(); ++i) {
      stations.push_back(static_cast<NodeId>(json_int(st[i], "stations[" + std::to_string(i) + "]")));
    }
    try {
      g.set_stations(std::move(stations));
    } catch (const GuidepathError& e) {
      throw GuidepathError(std::string("stations: ") + e.what());
    }
  }
  return g;
}

/// Parses and validates a guidepath document. Syntax errors carry the
/// parser's line/column; semantic errors name the offending field.
inline GuidepathGraph load_guidepath(std::string_view document) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(document);
  } catch (const nlohmann::json::parse_error& e) {
    throw GuidepathError(std::string("guidepath parse error: ") + e.what());
  }
  return guidepath_from_json(doc);
}

inline nlohmann::json guidepath_to_json(const GuidepathGraph& g) {
  nlohmann::json doc;
  doc["nodes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    nlohmann::json n{{"id", i}};
    if (!g.node_name(static_cast<NodeId>(i)).empty()) n["name"] = g.node_name(static_cast<NodeId>(i));
    doc["nodes"].push_back(std::move(n));
  }
  doc["arcs"] = nlohmann::json::array();
  for (const Arc& a : g.arcs()) doc["arcs"].push_back({{"from", a.from}, {"to", a.to}, {"weight", a.weight}});
  if (g.has_declared_stations()) doc["stations"] = g.stations();
  return doc;
}

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

inline Route make_route(const GuidepathGraph& g, std::span<const NodeId> nodes) {
  Route r;
  r.origin = nodes.front();
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
    auto idx = g.find_arc(nodes[i], nodes[i + 1]);
    if (!idx) throw GuidepathError("route uses a missing arc");
    r.arcs.push_back(g.arc(*idx));
    r.total_cost += r.arcs.back().weight;
  }
  return r;
}

namespace detail {

// Label-setting search with (cost, node sequence) labels so that equal-cost
// paths resolve to the lexicographically smallest node sequence.
inline std::optional<std::vector<NodeId>> best_path(const GuidepathGraph& g, NodeId src, NodeId dst,
                                                     const std::vector<char>& node_blocked,
                                                     const std::set<std::pair<NodeId, NodeId>>& arc_blocked) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  const std::size_t n = g.node_count();
  std::vector<double> dist(n, kInf);
  std::vector<std::vector<NodeId>> path(n);
  std::vector<char> done(n, 0);
  dist[static_cast<std::size_t>(src)] = 0.0;
  path[static_cast<std::size_t>(src)] = {src};

  auto better = [&](double c, const std::vector<NodeId>& p, std::size_t v) {
    if (c != dist[v]) return c < dist[v];
    return p < path[v];
  };

  while (true) {
    std::size_t u = n;
    for (std::size_t v = 0; v < n; ++v) {
      if (done[v] || dist[v] == kInf) continue;
      if (u == n || better(dist[v], path[v], u)) u = v;
    }
    if (u == n) return std::nullopt;
    if (static_cast<NodeId>(u) == dst) return path[u];
    done[u] = 1;
    for (ArcIndex ai : g.out_arcs(static_cast<NodeId>(u))) {
      const Arc& a = g.arc(ai);
      const auto v = static_cast<std::size_t>(a.to);
      if (done[v] || node_blocked[v] || arc_blocked.contains({a.from, a.to})) continue;
      const double c = dist[u] + a.weight;
      auto p = path[u];
      p.push_back(a.to);
      if (dist[v] == kInf || better(c, p, v)) {
        dist[v] = c;
        path[v] = std::move(p);
      }
    }
  }
}

}  // namespace detail

/// Minimum-cost route, ties broken by the lexicographically smallest node
/// sequence. Returns nullopt if dst is unreachable.
inline std::optional<Route> shortest_path(const GuidepathGraph& g, NodeId src, NodeId dst) {
  g.require_node(src);
  g.require_node(dst);
  std::vector<char> blocked(g.node_count(), 0);
  auto nodes = detail::best_path(g, src, dst, blocked, {});
  if (!nodes) return std::nullopt;
  return make_route(g, *nodes);
}

/// Yen's k loopless shortest paths, ordered by (cost, node sequence).
inline std::vector<Route> k_shortest_paths(const GuidepathGraph& g, NodeId src, NodeId dst, std::size_t k) {
  g.require_node(src);
  g.require_node(dst);
  if (k == 0) throw std::invalid_argument("k_shortest_paths: k must be positive");

  std::vector<std::vector<NodeId>> accepted;
  std::vector<char> no_block(g.node_count(), 0);
  auto first = detail::best_path(g, src, dst, no_block, {});
  if (!first) return {};
  accepted.push_back(std::move(*first));

  auto path_cost = [&](const std::vector<NodeId>& p) { return make_route(g, p).total_cost; };
  std::set<std::pair<double, std::vector<NodeId>>> candidates;
  std::set<std::vector<NodeId>> seen{accepted.front()};

  while (accepted.size() < k) {
    const std::vector<NodeId> prev = accepted.back();
    for (std::size_t i = 0; i + 1 < prev.size(); ++i) {
      const NodeId spur = prev[i];
      std::set<std::pair<NodeId, NodeId>> arc_blocked;
      for (const auto& p : accepted) {
        if (p.size() > i + 1 && std::equal(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(i) + 1, prev.begin())) {
          arc_blocked.insert({p[i], p[i + 1]});
        }
      }
      std::vector<char> node_blocked(g.node_count(), 0);
      for (std::size_t j = 0; j < i; ++j) node_blocked[static_cast<std::size_t>(prev[j])] = 1;

      auto tail = detail::best_path(g, spur, dst, node_blocked, arc_blocked);
      if (!tail) continue;
      std::vector<NodeId> total(prev.begin(), prev.begin() + static_cast<std::ptrdiff_t>(i));
      total.insert(total.end(), tail->begin(), tail->end());
      if (seen.insert(total).second) candidates.emplace(path_cost(total), std::move(total));
    }
    if (candidates.empty()) break;
    accepted.push_back(candidates.begin()->second);
    candidates.erase(candidates.begin());
  }

  std::vector<Route> out;
  out.reserve(accepted.size());
  for (const auto& p : accepted) out.push_back(make_route(g, p));
  return out;
}

/// Memoizing front end over shortest_path / k_shortest_paths for a fixed graph.
class Router {
 public:
  explicit Router(const GuidepathGraph& g, std::size_t k = 3) : g_(&g), k_(k) {}

  const GuidepathGraph& graph() const { return *g_; }
  std::size_t k() const { return k_; }

  const std::optional<Route>& shortest(NodeId src, NodeId dst) const {
    auto key = std::pair{src, dst};
    auto it = shortest_.find(key);
    if (it == shortest_.end()) it = shortest_.emplace(key, shortest_path(*g_, src, dst)).first;
    return it->second;
  }

  std::optional<double> distance(NodeId src, NodeId dst) const {
    const auto& r = shortest(src, dst);
    if (!r) return std::nullopt;
    return r->total_cost;
  }

  const std::vector<Route>& alternatives(NodeId src, NodeId dst) const {
    auto key = std::pair{src, dst};
    auto it = alternatives_.find(key);
    if (it == alternatives_.end()) it = alternatives_.emplace(key, k_shortest_paths(*g_, src, dst, k_)).first;
    return it->second;
  }

 private:
  const GuidepathGraph* g_;
  std::size_t k_;
  mutable std::map<std::pair<NodeId, NodeId>, std::optional<Route>> shortest_;
  mutable std::map<std::pair<NodeId, NodeId>, std::vector<Route>> alternatives_;
};

}  // namespace fleetlab
