#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "fleetlab/fleet.hpp"
#include "fleetlab/guidepath.hpp"
#include "fleetlab/text.hpp"

namespace fleetlab {

/// A reservation [start, end) of one arc by one vehicle.
struct TimeWindow {
  Arc arc;
  VehicleId vehicle = -1;
  double start = 0.0;
  double end = 0.0;

  double width() const { return end - start; }
  friend bool operator==(const TimeWindow&, const TimeWindow&) = default;
};

inline bool windows_overlap(const TimeWindow& a, const TimeWindow& b) {
  return a.start < b.end && b.start < a.end;
}

/// Per-arc sorted, pairwise disjoint windows. With `share_antiparallel`, the
/// arcs a->b and b->a are keyed as one corridor so opposing traffic excludes
/// each other.
class ArcReservationTable {
 public:
  using Key = std::pair<NodeId, NodeId>;

  explicit ArcReservationTable(bool share_antiparallel = false) : share_(share_antiparallel) {}

  bool shares_antiparallel() const { return share_; }

  Key key(const Arc& a) const {
    if (share_ && a.to < a.from) return {a.to, a.from};
    return {a.from, a.to};
  }

  std::span<const TimeWindow> windows(const Arc& a) const {
    auto it = table_.find(key(a));
    if (it == table_.end()) return {};
    return it->second;
  }

  void insert(const TimeWindow& w) {
    if (!(w.end > w.start)) throw ContractViolation("time window must have positive width");
    auto& list = table_[key(w.arc)];
    auto pos = std::lower_bound(list.begin(), list.end(), w.start,
                                [](const TimeWindow& x, double s) { return x.start < s; });
    if (pos != list.end() && windows_overlap(*pos, w)) throw ContractViolation("overlapping time window");
    if (pos != list.begin() && windows_overlap(*std::prev(pos), w)) {
      throw ContractViolation("overlapping time window");
    }
    list.insert(pos, w);
  }

  /// Drops every window with end <= now.
  std::size_t release_before(double now) {
    std::size_t n = 0;
    for (auto it = table_.begin(); it != table_.end();) {
      auto& list = it->second;
      const auto before = list.size();
      std::erase_if(list, [&](const TimeWindow& w) { return w.end <= now; });
      n += before - list.size();
      it = list.empty() ? table_.erase(it) : std::next(it);
    }
    return n;
  }

  /// Drops the vehicle's windows starting at or after `from`.
  std::size_t cancel_vehicle(VehicleId v, double from) {
    std::size_t n = 0;
    for (auto it = table_.begin(); it != table_.end();) {
      const auto before = it->second.size();
      std::erase_if(it->second, [&](const TimeWindow& w) { return w.vehicle == v && w.start >= from; });
      n += before - it->second.size();
      it = it->second.empty() ? table_.erase(it) : std::next(it);
    }
    return n;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [k, list] : table_) n += list.size();
    return n;
  }

  bool invariants_hold() const {
    for (const auto& [k, list] : table_) {
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (!(list[i].end > list[i].start)) return false;
        if (i > 0 && !(list[i - 1].end <= list[i].start)) return false;
      }
    }
    return true;
  }

  /// CSV with header arc_from,arc_to,vehicle,start,end ordered by arc then start.
  void dump_csv(std::ostream& os) const {
    os << "arc_from,arc_to,vehicle,start,end\n";
    for (const auto& [k, list] : table_) {
      for (const TimeWindow& w : list) {
        os << w.arc.from << ',' << w.arc.to << ',' << w.vehicle << ',' << format_number(w.start) << ','
           << format_number(w.end) << '\n';
      }
    }
  }

 private:
  bool share_;
  std::map<Key, std::vector<TimeWindow>> table_;
};

/// Earliest window of width w at or after t0 on `arc`: before the first
/// reservation if the leading gap fits, otherwise in the first gap between
/// reservations that fits, otherwise after the last one.
inline TimeWindow earliest_feasible_window(const ArcReservationTable& table, const Arc& arc, double t0, double w,
                                           VehicleId vehicle = -1) {
  if (!(w > 0.0)) throw ContractViolation("window width must be positive");
  double candidate = t0;
  for (const TimeWindow& r : table.windows(arc)) {
    if (r.end <= candidate) continue;
    if (candidate + w <= r.start) break;
    candidate = std::max(candidate, r.end);
  }
  return TimeWindow{arc, vehicle, candidate, candidate + w};
}

inline std::size_t release_completed_windows(ArcReservationTable& table, double now) {
  return table.release_before(now);
}

/// Chains earliest windows along the route and registers them. Waiting
/// happens at nodes between arcs.
inline std::vector<TimeWindow> reserve_route(ArcReservationTable& table, VehicleId vehicle, const Route& route,
                                             double t_depart) {
  std::vector<TimeWindow> out;
  double t = t_depart;
  for (const Arc& a : route.arcs) {
    TimeWindow w = earliest_feasible_window(table, a, t, a.weight, vehicle);
    table.insert(w);
    out.push_back(w);
    t = w.end;
  }
  return out;
}

struct RouteRequest {
  VehicleId vehicle = 0;
  int priority = 0;
  Route route;
  double t_depart = 0.0;
};

/// Orders requests by priority (desc) then vehicle id, the registration order
/// used for a batch of simultaneous departures.
inline void sort_by_priority(std::vector<RouteRequest>& requests) {
  std::stable_sort(requests.begin(), requests.end(), [](const RouteRequest& a, const RouteRequest& b) {
    if (a.priority != b.priority) return a.priority > b.priority;
    return a.vehicle < b.vehicle;
  });
}

inline std::map<VehicleId, std::vector<TimeWindow>> reserve_routes(ArcReservationTable& table,
                                                                   std::vector<RouteRequest> requests) {
  sort_by_priority(requests);
  std::map<VehicleId, std::vector<TimeWindow>> out;
  for (const auto& r : requests) out[r.vehicle] = reserve_route(table, r.vehicle, r.route, r.t_depart);
  return out;
}

// ---------------------------------------------------------------------------
// Node holds. A vehicle in the middle of a route holds each intermediate node
// from arrival until it departs on the next arc; the route endpoints are only
// crossed. Every hold lasts at least the crossing time, so two vehicles never
// reach a node at the same instant.
// ---------------------------------------------------------------------------

struct NodeHold {
  NodeId node = 0;
  VehicleId vehicle = -1;
  double arrive = 0.0;
  double depart = 0.0;

  friend bool operator==(const NodeHold&, const NodeHold&) = default;
};

class NodeHoldTable {
 public:
  explicit NodeHoldTable(double crossing_time = 0.0) : crossing_(crossing_time) {}

  double crossing_time() const { return crossing_; }
  double effective_end(const NodeHold& h) const { return std::max(h.depart, h.arrive + crossing_); }

  bool conflicts(const NodeHold& a, const NodeHold& b) const {
    if (a.node != b.node) return false;
    if (a.arrive == b.arrive) return true;
    return a.arrive < effective_end(b) && b.arrive < effective_end(a);
  }

  std::span<const NodeHold> holds(NodeId n) const {
    auto it = table_.find(n);
    if (it == table_.end()) return {};
    return it->second;
  }

  /// First existing hold that collides with `h`, if any.
  std::optional<NodeHold> find_conflict(const NodeHold& h) const {
    for (const NodeHold& o : holds(h.node)) {
      if (o.vehicle != h.vehicle && conflicts(o, h)) return o;
    }
    return std::nullopt;
  }

  void insert(const NodeHold& h) {
    if (find_conflict(h)) throw ContractViolation("conflicting node hold");
    auto& list = table_[h.node];
    auto pos = std::lower_bound(list.begin(), list.end(), h.arrive,
                                [](const NodeHold& x, double a) { return x.arrive < a; });
    list.insert(pos, h);
  }

  std::size_t release_before(double now) {
    std::size_t n = 0;
    for (auto it = table_.begin(); it != table_.end();) {
      const auto before = it->second.size();
      std::erase_if(it->second, [&](const NodeHold& h) { return effective_end(h) <= now; });
      n += before - it->second.size();
      it = it->second.empty() ? table_.erase(it) : std::next(it);
    }
    return n;
  }

  /// Drops the vehicle's holds that begin at or after `from`.
  std::size_t cancel_vehicle(VehicleId v, double from) {
    std::size_t n = 0;
    for (auto it = table_.begin(); it != table_.end();) {
      const auto before = it->second.size();
      std::erase_if(it->second, [&](const NodeHold& h) { return h.vehicle == v && h.arrive >= from; });
      n += before - it->second.size();
      it = it->second.empty() ? table_.erase(it) : std::next(it);
    }
    return n;
  }

  /// Cuts a hold the vehicle is currently sitting in short at `now`.
  void truncate_vehicle(VehicleId v, double now) {
    for (auto& [node, list] : table_) {
      for (NodeHold& h : list) {
        if (h.vehicle == v && h.arrive <= now && h.depart > now) h.depart = now;
      }
    }
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& [k, list] : table_) n += list.size();
    return n;
  }

 private:
  double crossing_;
  std::map<NodeId, std::vector<NodeHold>> table_;
};

struct RoutePlan {
  Route route;
  std::vector<TimeWindow> windows;
  std::vector<NodeHold> holds;

  double departure() const { return windows.empty() ? 0.0 : windows.front().start; }
  double arrival() const { return windows.empty() ? 0.0 : windows.back().end; }
};

/// Plans a route against both tables without mutating them. Departure from
/// the origin is pushed back until every node hold on the route is free; the
/// candidate departures are drawn from reservation end times, so the search
/// always terminates.
inline RoutePlan plan_route(const ArcReservationTable& arcs, const NodeHoldTable& nodes, VehicleId vehicle,
                            const Route& route, double t_depart) {
  RoutePlan plan{route, {}, {}};
  if (route.arcs.empty()) return plan;

  std::vector<double> offset(route.arcs.size(), 0.0);
  for (std::size_t i = 1; i < route.arcs.size(); ++i) offset[i] = offset[i - 1] + route.arcs[i - 1].weight;

  auto next_candidate = [&](double t) {
    double best = std::numeric_limits<double>::infinity();
    auto consider = [&](double c) {
      if (c > t && c < best) best = c;
    };
    for (std::size_t i = 0; i < route.arcs.size(); ++i) {
      for (const TimeWindow& w : arcs.windows(route.arcs[i])) consider(w.end - offset[i]);
      for (const NodeHold& h : nodes.holds(route.arcs[i].from)) consider(nodes.effective_end(h) - offset[i]);
    }
    const double to_end = offset.back() + route.arcs.back().weight;
    for (const NodeHold& h : nodes.holds(route.destination())) consider(nodes.effective_end(h) - to_end);
    return best;
  };

  double t_start = t_depart;
  while (true) {
    plan.windows.clear();
    plan.holds.clear();
    bool ok = true;
    double t = t_start;
    for (std::size_t i = 0; i < route.arcs.size() && ok; ++i) {
      const Arc& a = route.arcs[i];
      TimeWindow w = earliest_feasible_window(arcs, a, t, a.weight, vehicle);
      // The origin is only crossed at departure; a vehicle waits off the path.
      NodeHold h{a.from, vehicle, i == 0 ? w.start : t, w.start};
      if (nodes.find_conflict(h)) {
        ok = false;
        break;
      }
      plan.holds.push_back(h);
      plan.windows.push_back(w);
      t = w.end;
    }
    if (ok) {
      NodeHold last{route.destination(), vehicle, t, t};
      if (!nodes.find_conflict(last)) {
        plan.holds.push_back(last);
        return plan;
      }
    }
    const double next = next_candidate(t_start);
    if (!std::isfinite(next)) throw ContractViolation("plan_route: no feasible departure");
    t_start = next;
  }
}

inline void commit_plan(ArcReservationTable& arcs, NodeHoldTable& nodes, const RoutePlan& plan) {
  for (const TimeWindow& w : plan.windows) arcs.insert(w);
  for (const NodeHold& h : plan.holds) nodes.insert(h);
}

}  // namespace fleetlab
