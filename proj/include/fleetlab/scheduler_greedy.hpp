#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "fleetlab/fleet.hpp"
#include "fleetlab/guidepath.hpp"

namespace fleetlab {

enum class EntryDecision { Granted, Wait };

/// Arc and node occupancy for the lock-based scheduler. A vehicle that is
/// granted an arc claims the arc and its ending node; it keeps the node
/// after arrival until it enters its next arc or parks off the path.
class ArcLockState {
 public:
  using Key = std::pair<NodeId, NodeId>;

  ArcLockState(const GuidepathGraph& g, bool share_antiparallel = false)
      : share_(share_antiparallel), node_occupant_(g.node_count()) {}

  Key key(const Arc& a) const {
    if (share_ && a.to < a.from) return {a.to, a.from};
    return {a.from, a.to};
  }

  /// Puts a vehicle at a node. With `hold`, it occupies the node.
  void place(VehicleId v, NodeId node, bool hold) {
    if (hold) {
      auto& occ = node_occupant_.at(static_cast<std::size_t>(node));
      if (occ && *occ != v) throw ContractViolation("node " + std::to_string(node) + " already occupied");
      occ = v;
    }
    pos_[v] = Position{node, std::nullopt, hold};
  }

  /// Moves a stopped vehicle off the traffic path, releasing its node.
  void park(VehicleId v) {
    Position& p = position(v);
    if (p.arc) throw ContractViolation("cannot park a moving vehicle");
    release_node(v, p.node);
    p.holds_node = false;
  }

  std::optional<VehicleId> arc_occupant(const Arc& a) const {
    auto it = arc_occupant_.find(key(a));
    if (it == arc_occupant_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<VehicleId> node_occupant(NodeId n) const { return node_occupant_.at(static_cast<std::size_t>(n)); }

  NodeId location(VehicleId v) const { return position(v).node; }
  std::optional<Arc> current_arc(VehicleId v) const { return position(v).arc; }
  bool holds_node(VehicleId v) const { return position(v).holds_node; }

  EntryDecision try_enter_arc(VehicleId v, const Arc& arc) {
    Position& p = position(v);
    if (p.arc) throw ContractViolation("vehicle " + std::to_string(v) + " is already on an arc");
    if (p.node != arc.from) {
      throw ContractViolation("vehicle " + std::to_string(v) + " is not at node " + std::to_string(arc.from));
    }
    const auto arc_holder = arc_occupant(arc);
    const auto node_holder = node_occupant(arc.to);
    if (arc_holder || (node_holder && *node_holder != v)) return EntryDecision::Wait;

    if (p.holds_node) release_node(v, p.node);
    arc_occupant_[key(arc)] = v;
    node_occupant_[static_cast<std::size_t>(arc.to)] = v;
    p.arc = arc;
    p.holds_node = true;
    return EntryDecision::Granted;
  }

  /// Completes the traversal: the arc is freed, the ending node stays held.
  void arrive(VehicleId v) {
    Position& p = position(v);
    if (!p.arc) throw ContractViolation("vehicle " + std::to_string(v) + " is not on an arc");
    arc_occupant_.erase(key(*p.arc));
    p.node = p.arc->to;
    p.arc.reset();
  }

  /// Holder of whatever blocks `v` from entering `arc`, excluding itself.
  std::vector<VehicleId> blockers(VehicleId v, const Arc& arc) const {
    std::vector<VehicleId> out;
    if (auto h = arc_occupant(arc); h && *h != v) out.push_back(*h);
    if (auto h = node_occupant(arc.to); h && *h != v && std::find(out.begin(), out.end(), *h) == out.end()) {
      out.push_back(*h);
    }
    return out;
  }

  /// No vehicle on two arcs, every moving vehicle on exactly one arc that it
  /// owns, and node ownership consistent with positions.
  bool invariants_hold() const {
    std::map<VehicleId, int> arcs_held;
    for (const auto& [k, v] : arc_occupant_) ++arcs_held[v];
    for (const auto& [v, p] : pos_) {
      const int held = arcs_held.contains(v) ? arcs_held.at(v) : 0;
      if (p.arc.has_value() != (held == 1) || held > 1) return false;
      if (p.arc) {
        auto owner = arc_occupant(*p.arc);
        if (!owner || *owner != v) return false;
        if (node_occupant(p.arc->to) != v) return false;
      } else if (p.holds_node && node_occupant(p.node) != v) {
        return false;
      }
    }
    return true;
  }

 private:
  struct Position {
    NodeId node = 0;
    std::optional<Arc> arc;
    bool holds_node = false;
  };

  Position& position(VehicleId v) {
    auto it = pos_.find(v);
    if (it == pos_.end()) throw ContractViolation("vehicle " + std::to_string(v) + " was never placed");
    return it->second;
  }
  const Position& position(VehicleId v) const {
    auto it = pos_.find(v);
    if (it == pos_.end()) throw ContractViolation("vehicle " + std::to_string(v) + " was never placed");
    return it->second;
  }

  void release_node(VehicleId v, NodeId n) {
    auto& occ = node_occupant_.at(static_cast<std::size_t>(n));
    if (occ && *occ == v) occ.reset();
  }

  bool share_;
  std::vector<std::optional<VehicleId>> node_occupant_;
  std::map<Key, VehicleId> arc_occupant_;
  std::map<VehicleId, Position> pos_;
};

inline EntryDecision try_enter_arc(ArcLockState& locks, VehicleId v, const Arc& arc) {
  return locks.try_enter_arc(v, arc);
}

/// Same-instant requests are served in ascending vehicle id. Returns the
/// granted vehicles.
inline std::vector<VehicleId> grant_simultaneous(ArcLockState& locks, std::vector<std::pair<VehicleId, Arc>> requests) {
  std::sort(requests.begin(), requests.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<VehicleId> granted;
  for (const auto& [v, arc] : requests) {
    if (locks.try_enter_arc(v, arc) == EntryDecision::Granted) granted.push_back(v);
  }
  return granted;
}

using WaitForGraph = std::map<VehicleId, std::set<VehicleId>>;

inline WaitForGraph build_wait_for_graph(const ArcLockState& locks, const std::map<VehicleId, Arc>& pending) {
  WaitForGraph g;
  for (const auto& [v, arc] : pending) {
    for (VehicleId h : locks.blockers(v, arc)) g[v].insert(h);
  }
  return g;
}

/// Every elementary cycle of the wait-for graph, each rotated to start at
/// its smallest vehicle id, in lexicographic order.
inline std::vector<std::vector<VehicleId>> detect_deadlock(const ArcLockState& locks,
                                                           const std::map<VehicleId, Arc>& pending) {
  const WaitForGraph g = build_wait_for_graph(locks, pending);
  std::vector<std::vector<VehicleId>> cycles;
  std::vector<VehicleId> path;
  std::set<VehicleId> on_path;

  std::function<void(VehicleId, VehicleId)> dfs = [&](VehicleId root, VehicleId u) {
    auto it = g.find(u);
    if (it == g.end()) return;
    for (VehicleId w : it->second) {
      if (w == root) {
        cycles.push_back(path);
      } else if (w > root && !on_path.contains(w)) {
        path.push_back(w);
        on_path.insert(w);
        dfs(root, w);
        on_path.erase(w);
        path.pop_back();
      }
    }
  };

  for (const auto& [root, out] : g) {
    path = {root};
    on_path = {root};
    dfs(root, root);
  }
  std::sort(cycles.begin(), cycles.end());
  return cycles;
}

/// True iff the graph has no opposing arc pair and its arcs form one directed
/// cycle through every node.
inline bool is_unidirectional_ring_safe(const GuidepathGraph& g) {
  if (g.node_count() < 2 || g.arc_count() != g.node_count()) return false;
  for (const Arc& a : g.arcs()) {
    if (g.find_arc(a.to, a.from)) return false;
  }
  for (std::size_t n = 0; n < g.node_count(); ++n) {
    if (g.out_degree(static_cast<NodeId>(n)) != 1 || g.in_degree(static_cast<NodeId>(n)) != 1) return false;
  }
  std::vector<char> seen(g.node_count(), 0);
  NodeId at = 0;
  for (std::size_t steps = 0; steps < g.node_count(); ++steps) {
    if (seen[static_cast<std::size_t>(at)]) return false;
    seen[static_cast<std::size_t>(at)] = 1;
    at = g.arc(g.out_arcs(at).front()).to;
  }
  return at == 0;
}

}  // namespace fleetlab
