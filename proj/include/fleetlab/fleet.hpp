#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fleetlab/guidepath.hpp"

namespace fleetlab {

using TaskId = std::int64_t;
using VehicleId = std::int32_t;

class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class TaskOrigin { Operator, Predicted };
enum class TaskStatus { Pending, Assigned, Executing, Completed, Cancelled };

inline const char* to_string(TaskOrigin o) { return o == TaskOrigin::Operator ? "operator" : "predicted"; }

inline const char* to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::Pending: return "pending";
    case TaskStatus::Assigned: return "assigned";
    case TaskStatus::Executing: return "executing";
    case TaskStatus::Completed: return "completed";
    case TaskStatus::Cancelled: return "cancelled";
  }
  return "?";
}

inline constexpr int kOperatorPriority = 10;
inline constexpr int kPredictedPriority = 0;

struct Task {
  TaskId id = 0;
  NodeId start = 0;
  NodeId destination = 0;
  int priority = kOperatorPriority;
  TaskOrigin origin = TaskOrigin::Operator;
  TaskStatus status = TaskStatus::Pending;
  double created_at = 0.0;
  std::optional<double> completed_at;
  std::optional<VehicleId> vehicle;

  double duration() const { return completed_at.value() - created_at; }
};

/// Task bookkeeping: T (live tasks), C (completed) and Q = T \ C.
/// Cancelled predicted tasks leave T and Q and are archived separately.
class TaskLedger {
 public:
  Task& add(Task t) {
    if (tasks_.contains(t.id)) throw ContractViolation("duplicate task id " + std::to_string(t.id));
    t.status = TaskStatus::Pending;
    t.completed_at.reset();
    t.vehicle.reset();
    const TaskId id = t.id;
    all_.insert(id);
    active_.insert(id);
    if (t.origin == TaskOrigin::Operator) ++operator_created_;
    return tasks_.emplace(id, std::move(t)).first->second;
  }

  const Task& get(TaskId id) const {
    auto it = tasks_.find(id);
    if (it == tasks_.end()) throw ContractViolation("unknown task id " + std::to_string(id));
    return it->second;
  }
  bool contains(TaskId id) const { return tasks_.contains(id); }

  void assign(TaskId id, VehicleId v) {
    Task& t = mut(id);
    require(t, t.status == TaskStatus::Pending, "assign");
    if (t.vehicle) throw ContractViolation("task " + std::to_string(id) + " was already assigned once");
    t.status = TaskStatus::Assigned;
    t.vehicle = v;
  }

  void start(TaskId id) {
    Task& t = mut(id);
    require(t, t.status == TaskStatus::Assigned, "start");
    t.status = TaskStatus::Executing;
  }

  void complete(TaskId id, double now) {
    Task& t = mut(id);
    require(t, t.status == TaskStatus::Executing, "complete");
    if (now < t.created_at) throw ContractViolation("completion precedes creation");
    t.status = TaskStatus::Completed;
    t.completed_at = now;
    completed_.insert(id);
    active_.erase(id);
    if (t.origin == TaskOrigin::Operator) {
      ++operator_completed_;
      operator_duration_sum_ += now - t.created_at;
    }
  }

  void cancel(TaskId id) {
    Task& t = mut(id);
    if (t.origin != TaskOrigin::Predicted) {
      throw ContractViolation("operator task " + std::to_string(id) + " cannot be cancelled");
    }
    require(t, t.status == TaskStatus::Pending || t.status == TaskStatus::Assigned ||
                   t.status == TaskStatus::Executing,
            "cancel");
    t.status = TaskStatus::Cancelled;
    all_.erase(id);
    active_.erase(id);
    cancelled_.insert(id);
  }

  const std::set<TaskId>& all() const { return all_; }
  const std::set<TaskId>& completed() const { return completed_; }
  const std::set<TaskId>& active() const { return active_; }
  const std::set<TaskId>& cancelled() const { return cancelled_; }

  std::size_t operator_created() const { return operator_created_; }
  std::size_t operator_completed() const { return operator_completed_; }
  double operator_duration_sum() const { return operator_duration_sum_; }

  /// Q == T \ C and C, Q partition T.
  bool identity_holds() const {
    std::vector<TaskId> diff;
    std::set_difference(all_.begin(), all_.end(), completed_.begin(), completed_.end(),
                        std::back_inserter(diff));
    if (!std::equal(diff.begin(), diff.end(), active_.begin(), active_.end())) return false;
    return std::includes(all_.begin(), all_.end(), completed_.begin(), completed_.end());
  }

  /// Pending tasks in dispatch order: priority desc, created_at asc, id asc.
  std::vector<TaskId> pending_in_dispatch_order() const {
    std::vector<const Task*> p;
    for (TaskId id : active_) {
      const Task& t = tasks_.at(id);
      if (t.status == TaskStatus::Pending) p.push_back(&t);
    }
    std::sort(p.begin(), p.end(), [](const Task* a, const Task* b) {
      if (a->priority != b->priority) return a->priority > b->priority;
      if (a->created_at != b->created_at) return a->created_at < b->created_at;
      return a->id < b->id;
    });
    std::vector<TaskId> out;
    for (const Task* t : p) out.push_back(t->id);
    return out;
  }

  const std::map<TaskId, Task>& tasks() const { return tasks_; }

 private:
  Task& mut(TaskId id) {
    auto it = tasks_.find(id);
    if (it == tasks_.end()) throw ContractViolation("unknown task id " + std::to_string(id));
    return it->second;
  }

  static void require(const Task& t, bool ok, const char* op) {
    if (!ok) {
      throw ContractViolation(std::string("illegal transition ") + op + " for task " + std::to_string(t.id) +
                              " in state " + to_string(t.status));
    }
  }

  std::map<TaskId, Task> tasks_;
  std::set<TaskId> all_, completed_, active_, cancelled_;
  std::size_t operator_created_ = 0;
  std::size_t operator_completed_ = 0;
  double operator_duration_sum_ = 0.0;
};

enum class VehicleStatus { Idle, Busy };

struct Vehicle {
  VehicleId id = 0;
  NodeId node = 0;                 // last node reached; the parking node when stopped
  std::optional<ArcIndex> on_arc;  // set while traversing
  double arc_entered_at = 0.0;
  VehicleStatus status = VehicleStatus::Idle;
  std::deque<TaskId> task_queue;

  bool moving() const { return on_arc.has_value(); }
  bool idle() const { return status == VehicleStatus::Idle; }

  /// Fraction of the current arc already covered at `now`.
  double progress(const GuidepathGraph& g, double now) const {
    if (!on_arc) return 0.0;
    return std::clamp((now - arc_entered_at) / g.arc(*on_arc).weight, 0.0, 1.0);
  }
};

struct FleetState {
  std::vector<Vehicle> vehicles;
  TaskLedger ledger;

  Vehicle& vehicle(VehicleId v) { return vehicles.at(static_cast<std::size_t>(v)); }
  const Vehicle& vehicle(VehicleId v) const { return vehicles.at(static_cast<std::size_t>(v)); }

  /// idle iff the queue is empty and the vehicle is not moving.
  bool vehicle_invariants_hold() const {
    for (const Vehicle& v : vehicles) {
      const bool should_idle = v.task_queue.empty() && !v.moving();
      if (v.idle() != should_idle) return false;
    }
    return true;
  }
};

/// Places N vehicles round-robin over the station list, starting at a
/// seed-derived offset.
inline std::vector<Vehicle> place_vehicles(std::size_t count, const std::vector<NodeId>& stations,
                                           std::uint64_t seed) {
  if (stations.empty()) throw ContractViolation("no station to place vehicles on");
  std::vector<Vehicle> out(count);
  const std::size_t offset = static_cast<std::size_t>(seed % stations.size());
  for (std::size_t i = 0; i < count; ++i) {
    out[i].id = static_cast<VehicleId>(i);
    out[i].node = stations[(offset + i) % stations.size()];
  }
  return out;
}

struct NearestVehicle {
  VehicleId vehicle = 0;
  double distance = 0.0;
};

inline std::optional<NearestVehicle> nearest_idle_vehicle(const FleetState& state, NodeId start,
                                                          const Router& router) {
  std::optional<NearestVehicle> best;
  for (const Vehicle& v : state.vehicles) {
    if (!v.idle()) continue;
    const auto d = router.distance(v.node, start);
    if (!d) continue;
    if (!best || *d < best->distance) best = NearestVehicle{v.id, *d};
  }
  return best;
}

struct Assignment {
  TaskId task = 0;
  VehicleId vehicle = 0;

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

/// Greedy dispatch: each pending task, in priority order, goes to the idle
/// vehicle nearest to its start. Tasks nobody can take stay pending.
inline std::vector<Assignment> dispatch_pending(FleetState& state, const Router& router) {
  std::vector<Assignment> out;
  for (TaskId id : state.ledger.pending_in_dispatch_order()) {
    const auto nearest = nearest_idle_vehicle(state, state.ledger.get(id).start, router);
    if (!nearest) continue;
    Vehicle& v = state.vehicle(nearest->vehicle);
    state.ledger.assign(id, v.id);
    v.task_queue.push_back(id);
    v.status = VehicleStatus::Busy;
    out.push_back({id, v.id});
  }
  return out;
}

}  // namespace fleetlab
