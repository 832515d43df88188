#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fleetlab/fleet.hpp"
#include "fleetlab/guidepath.hpp"
#include "fleetlab/prediction_manager.hpp"
#include "fleetlab/predictor.hpp"
#include "fleetlab/scheduler_dpstw.hpp"
#include "fleetlab/scheduler_greedy.hpp"
#include "fleetlab/text.hpp"
#include "fleetlab/workload.hpp"

namespace fleetlab {

enum class SchedulerKind { Dpstw, Greedy };

inline const char* to_string(SchedulerKind k) { return k == SchedulerKind::Dpstw ? "dpstw" : "greedy"; }

// ---------------------------------------------------------------------------
// Next-start predictors used by the coordinator
// ---------------------------------------------------------------------------

struct PredictionContext {
  const TaskSequence& sequence;
  std::size_t next_operator_index;  // index in the stream of the task not yet created
};

class NextStartPredictor {
 public:
  virtual ~NextStartPredictor() = default;
  virtual std::optional<NodeId> predict(const PredictionContext& ctx) = 0;
};

class LstmStartPredictor final : public NextStartPredictor {
 public:
  explicit LstmStartPredictor(std::shared_ptr<const SequenceModel> model) : model_(std::move(model)) {}
  std::optional<NodeId> predict(const PredictionContext& ctx) override {
    return predict_next_start(*model_, ctx.sequence).node;
  }

 private:
  std::shared_ptr<const SequenceModel> model_;
};

class MarkovStartPredictor final : public NextStartPredictor {
 public:
  MarkovStartPredictor(MarkovPredictor counts, StationMap stations)
      : counts_(std::move(counts)), stations_(std::move(stations)) {}
  std::optional<NodeId> predict(const PredictionContext& ctx) override {
    const auto v = ctx.sequence.values();
    if (v.empty()) return std::nullopt;
    return stations_.node(counts_.predict(v.back()));
  }

 private:
  MarkovPredictor counts_;
  StationMap stations_;
};

/// Knows the stream in advance; a perfect predictor for controlled experiments.
class OracleStartPredictor final : public NextStartPredictor {
 public:
  explicit OracleStartPredictor(std::vector<TaskSpec> stream) : stream_(std::move(stream)) {}
  std::optional<NodeId> predict(const PredictionContext& ctx) override {
    if (ctx.next_operator_index >= stream_.size()) return std::nullopt;
    return stream_[ctx.next_operator_index].start;
  }

 private:
  std::vector<TaskSpec> stream_;
};

// ---------------------------------------------------------------------------
// Options, results, metrics
// ---------------------------------------------------------------------------

struct SimOptions {
  SchedulerKind scheduler = SchedulerKind::Dpstw;
  std::size_t vehicles = 8;
  bool prediction = false;
  PredictionPolicy policy;
  std::size_t routing_k = 3;
  bool share_corridors = true;
  double node_crossing = -1.0;  // < 0: a tenth of the shortest arc
  std::uint64_t seed = 1;       // vehicle placement offset
  std::vector<NodeId> initial_positions;
  double train_fraction = 0.8;  // operator tasks past this share are the test split
  bool check_invariants = false;
  double stall_horizon = 1e6;
};

enum class RunStatus { Completed, Deadlock };

struct TaskRecord {
  TaskId id = 0;
  TaskOrigin origin = TaskOrigin::Operator;
  TaskStatus status = TaskStatus::Pending;
  double created_at = 0.0;
  std::optional<double> completed_at;
  std::optional<VehicleId> vehicle;
};

struct MetricsRecord {
  RunStatus status = RunStatus::Completed;
  std::vector<TaskRecord> tasks;         // every task, operator and predicted
  std::vector<TaskId> test_tasks;        // operator tasks in the test split
  std::vector<TaskSpec> stream;          // operator task stream the run consumed
  double tau_complete = 0.0;             // mean completion time over the test split
  double idle_fraction = 0.0;            // share of time with >= 1 idle vehicle
  double end_time = 0.0;
  std::size_t predictions_created = 0;
  std::size_t predictions_cancelled = 0;
  std::size_t predictions_chained = 0;
  std::optional<double> deadlock_time;
  std::vector<std::vector<VehicleId>> deadlock_cycles;
};

/// Mean of (completed_at - created_at) over `subset`.
inline double avg_completion_time(const MetricsRecord& rec, const std::vector<TaskId>& subset) {
  if (subset.empty()) throw std::invalid_argument("avg_completion_time: empty subset");
  std::map<TaskId, const TaskRecord*> by_id;
  for (const auto& t : rec.tasks) by_id[t.id] = &t;
  double sum = 0.0;
  for (TaskId id : subset) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw std::invalid_argument("avg_completion_time: unknown task " + std::to_string(id));
    if (!it->second->completed_at) {
      throw std::invalid_argument("avg_completion_time: task " + std::to_string(id) + " is not completed");
    }
    sum += *it->second->completed_at - it->second->created_at;
  }
  return sum / static_cast<double>(subset.size());
}

/// (baseline - predicted) / baseline over runs of the identical task stream.
inline double improvement(const MetricsRecord& baseline, const MetricsRecord& predicted) {
  if (baseline.stream != predicted.stream) throw std::invalid_argument("improvement: runs used different task streams");
  if (!(baseline.tau_complete > 0.0)) throw std::invalid_argument("improvement: baseline completion time is zero");
  return (baseline.tau_complete - predicted.tau_complete) / baseline.tau_complete;
}

class DeadlockAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Coordinator / discrete-event engine
// ---------------------------------------------------------------------------

enum class EventKind { TaskCreated, WindowStart, VehicleArrived, MonitorTick };

struct Event {
  double time = 0.0;
  std::uint64_t seq = 0;
  EventKind kind = EventKind::TaskCreated;
  VehicleId vehicle = -1;
  std::uint64_t epoch = 0;
  std::size_t index = 0;
};

struct EventAfter {
  bool operator()(const Event& a, const Event& b) const {
    if (a.time != b.time) return a.time > b.time;
    return a.seq > b.seq;
  }
};

inline constexpr const char* kEventLogHeader = "time,kind,vehicle,task,from,to,node";
inline constexpr const char* kDecisionLogHeader = "time,idle_measure,n_idle,action,predicted_node,actual_node";

/// Single-threaded coordinator: task creation, dispatch, routing, arc
/// scheduling (time windows or locks), vehicle motion and the prediction
/// manager, all serialized through one (time, sequence)-ordered queue. The
/// periodic monitor is one more event source on the same queue.
class Simulation {
 public:
  Simulation(const GuidepathGraph& g, SimOptions opt, std::vector<TaskSpec> stream,
             std::shared_ptr<NextStartPredictor> predictor = nullptr)
      : g_(&g),
        opt_(std::move(opt)),
        router_(g, opt_.routing_k),
        stations_(g.stations()),
        stream_(std::move(stream)),
        predictor_(std::move(predictor)),
        windows_(opt_.share_corridors),
        holds_(crossing_time(g, opt_.node_crossing)),
        locks_(g, opt_.share_corridors) {
    if (opt_.vehicles == 0) throw std::invalid_argument("need at least one vehicle");
    if (opt_.prediction && !predictor_) throw std::invalid_argument("prediction enabled without a predictor");
    opt_.policy.validate();
    validate_stream();

    if (opt_.initial_positions.empty()) {
      fleet_.vehicles = place_vehicles(opt_.vehicles, stations_.nodes(), opt_.seed);
    } else {
      if (opt_.initial_positions.size() != opt_.vehicles) throw std::invalid_argument("initial position count mismatch");
      fleet_.vehicles = place_vehicles(opt_.vehicles, stations_.nodes(), 0);
      for (std::size_t i = 0; i < opt_.vehicles; ++i) {
        g.require_node(opt_.initial_positions[i]);
        fleet_.vehicles[i].node = opt_.initial_positions[i];
      }
    }
    exec_.resize(opt_.vehicles);
    for (const Vehicle& v : fleet_.vehicles) locks_.place(v.id, v.node, false);
    if (opt_.prediction) manager_.emplace(opt_.policy, stations_);

    for (std::size_t i = 0; i < stream_.size(); ++i) push({stream_[i].created_at, 0, EventKind::TaskCreated, -1, 0, i});
    if (opt_.prediction) push({opt_.policy.monitor_period, 0, EventKind::MonitorTick, -1, 0, 0});
    log_ << kEventLogHeader << '\n';
    decisions_ << kDecisionLogHeader << '\n';
    test_begin_ = static_cast<std::size_t>(std::floor(static_cast<double>(stream_.size()) * opt_.train_fraction));
  }

  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  /// Runs to completion (or deadlock) and returns the metrics.
  MetricsRecord run() {
    run_until(std::numeric_limits<double>::infinity());
    return metrics();
  }

  /// Processes every event with time <= t, then moves the clock to t.
  /// Returns false once the run is over.
  bool run_until(double t) {
    while (!finished_) {
      if (all_done()) {
        finish();
        break;
      }
      if (queue_.empty()) throw std::runtime_error("simulation stalled with unfinished tasks");
      if (queue_.top().time > t) {
        if (t > now_) advance_clock(t);
        return true;
      }
      const Event e = queue_.top();
      queue_.pop();
      advance_clock(e.time);
      if (e.kind != EventKind::MonitorTick) last_progress_ = now_;
      if (now_ - last_progress_ > opt_.stall_horizon) throw std::runtime_error("simulation made no progress");
      handle(e);
      if (queue_.empty() || queue_.top().time > now_) end_of_instant();
      if (opt_.check_invariants) check_invariants();
    }
    return false;
  }

  /// Holds a stopped vehicle at its node for `delay` seconds. Under time
  /// windows its remaining reservations are cancelled and the rest of the leg
  /// is re-reserved from the current node. A delay that would keep the
  /// vehicle on a node another vehicle is already scheduled to cross is
  /// rejected and leaves the state untouched.
  void delay_vehicle(VehicleId v, double delay) {
    if (!(delay >= 0.0)) throw std::invalid_argument("delay must be non-negative");
    const Vehicle& veh = fleet_.vehicle(v);
    Exec& x = exec_.at(static_cast<std::size_t>(v));
    if (veh.moving()) throw ContractViolation("cannot delay a vehicle in the middle of an arc");
    const double until = std::max(x.hold_until, now_ + delay);
    if (opt_.scheduler != SchedulerKind::Dpstw || x.phase == Phase::None || x.planning || x.plan.windows.empty()) {
      x.hold_until = until;
      return;
    }
    Route rest;
    rest.origin = veh.node;
    for (std::size_t i = x.next_arc; i < x.plan.route.arcs.size(); ++i) {
      rest.arcs.push_back(x.plan.route.arcs[i]);
      rest.total_cost += rest.arcs.back().weight;
    }
    ArcReservationTable windows = windows_;
    NodeHoldTable holds = holds_;
    windows.cancel_vehicle(v, now_);
    holds.cancel_vehicle(v, after(now_));
    holds.truncate_vehicle(v, now_);
    RoutePlan plan = plan_route(windows, holds, v, rest, until);
    std::optional<NodeHold> here;
    if (x.at_intermediate) {
      here = NodeHold{veh.node, v, x.arrived_at, plan.departure()};
      if (auto other = holds.find_conflict(*here)) {
        throw ContractViolation("delay keeps vehicle " + std::to_string(v) + " on node " + std::to_string(veh.node) +
                                " while vehicle " + std::to_string(other->vehicle) + " is scheduled through it");
      }
    }
    commit_plan(windows, holds, plan);
    if (here) holds.insert(*here);
    windows_ = std::move(windows);
    holds_ = std::move(holds);
    x.hold_until = until;
    ++x.epoch;
    x.plan = std::move(plan);
    x.next_arc = 0;
    push({x.plan.windows.front().start, 0, EventKind::WindowStart, v, x.epoch, 0});
  }

  double now() const { return now_; }
  bool finished() const { return finished_; }
  const FleetState& fleet() const { return fleet_; }
  const TaskLedger& ledger() const { return fleet_.ledger; }
  const GuidepathGraph& graph() const { return *g_; }
  const std::optional<PredictionManager>& prediction_manager() const { return manager_; }
  const ArcReservationTable& reservations() const { return windows_; }
  const NodeHoldTable& node_holds() const { return holds_; }
  const ArcLockState& locks() const { return locks_; }
  std::string event_log() const { return log_.str(); }
  std::string decision_log() const { return decisions_.str(); }
  RunStatus status() const { return status_; }

  MetricsRecord metrics() const {
    MetricsRecord m;
    m.status = status_;
    m.stream = stream_;
    m.end_time = now_;
    m.idle_fraction = now_ > 0.0 ? idle_time_ / now_ : 1.0;
    m.predictions_created = predictions_created_;
    m.predictions_cancelled = predictions_cancelled_;
    m.predictions_chained = predictions_chained_;
    m.deadlock_time = deadlock_time_;
    m.deadlock_cycles = deadlock_cycles_;
    for (const auto& [id, t] : fleet_.ledger.tasks()) {
      m.tasks.push_back({id, t.origin, t.status, t.created_at, t.completed_at, t.vehicle});
      if (t.origin == TaskOrigin::Operator && static_cast<std::size_t>(id) >= test_begin_) m.test_tasks.push_back(id);
    }
    if (status_ == RunStatus::Completed && !m.test_tasks.empty()) m.tau_complete = avg_completion_time(m, m.test_tasks);
    return m;
  }

 private:
  enum class Phase { None, ToPickup, ToDelivery };

  struct Exec {
    Phase phase = Phase::None;
    TaskId task = -1;
    NodeId target = 0;
    bool planning = false;              // waiting for the end-of-instant reservation pass
    RoutePlan plan;                     // dpstw: reserved windows of the current leg
    Route route;                        // greedy: current leg
    std::size_t next_arc = 0;
    bool requesting = false;            // greedy: waiting for an arc grant
    double wait_since = 0.0;
    bool wait_logged = false;
    bool at_intermediate = false;       // stopped mid-leg, holding the node
    double arrived_at = 0.0;
    bool stop_requested = false;        // stop at the next node, then idle
    std::uint64_t epoch = 0;
    double hold_until = 0.0;
  };

  static double after(double t) { return std::nextafter(t, std::numeric_limits<double>::infinity()); }

  static double crossing_time(const GuidepathGraph& g, double requested) {
    if (requested >= 0.0) return requested;
    double w = std::numeric_limits<double>::infinity();
    for (const Arc& a : g.arcs()) w = std::min(w, a.weight);
    return std::isfinite(w) ? 0.1 * w : 0.0;
  }

  void validate_stream() {
    for (std::size_t i = 0; i < stream_.size(); ++i) {
      const TaskSpec& t = stream_[i];
      if (!stations_.find(t.start) || !stations_.find(t.destination)) {
        throw std::invalid_argument("task " + std::to_string(i) + " uses a non-station endpoint");
      }
      if (i > 0 && t.created_at < stream_[i - 1].created_at) throw std::invalid_argument("task stream is not time ordered");
    }
    // Vehicles can stop at any node after a cancellation, so every node
    // must reach every station.
    for (std::size_t n = 0; n < g_->node_count(); ++n) {
      for (NodeId s : stations_.nodes()) {
        if (!router_.distance(static_cast<NodeId>(n), s)) {
          throw std::invalid_argument("unreachable task endpoint: station " + std::to_string(s) + " from node " +
                                      std::to_string(n));
        }
      }
    }
  }

  void push(Event e) {
    e.seq = next_seq_++;
    if (e.time < now_) throw std::logic_error("event scheduled in the past");
    queue_.push(e);
  }

  void advance_clock(double t) {
    if (t < now_) throw std::logic_error("event time went backwards");
    if (count_idle_vehicles(fleet_) > 0) idle_time_ += t - now_;
    now_ = t;
  }

  bool all_done() const {
    return created_operator_ == stream_.size() && fleet_.ledger.operator_completed() == stream_.size();
  }

  void finish() {
    finished_ = true;
    row("run_end", {}, {}, {}, {}, {});
  }

  // -- logging ---------------------------------------------------------------

  void row(const char* kind, std::optional<VehicleId> v, std::optional<TaskId> t, std::optional<NodeId> from,
           std::optional<NodeId> to, std::optional<NodeId> node) {
    log_ << format_number(now_) << ',' << kind << ',';
    if (v) log_ << *v;
    log_ << ',';
    if (t) log_ << *t;
    log_ << ',';
    if (from) log_ << *from;
    log_ << ',';
    if (to) log_ << *to;
    log_ << ',';
    if (node) log_ << *node;
    log_ << '\n';
  }

  void decision(double idle, std::size_t n, const char* action, std::optional<NodeId> predicted,
                std::optional<NodeId> actual) {
    decisions_ << format_number(now_) << ',' << format_number(idle) << ',' << n << ',' << action << ',';
    if (predicted) decisions_ << *predicted;
    decisions_ << ',';
    if (actual) decisions_ << *actual;
    decisions_ << '\n';
  }

  // -- event handlers --------------------------------------------------------

  void handle(const Event& e) {
    switch (e.kind) {
      case EventKind::TaskCreated: on_task_created(e.index); break;
      case EventKind::WindowStart: on_window_start(e); break;
      case EventKind::VehicleArrived: on_arrival(e); break;
      case EventKind::MonitorTick:
        if (e.index == 0) on_monitor_tick();
        break;
    }
  }

  void on_task_created(std::size_t index) {
    const TaskSpec& spec = stream_[index];
    Task t;
    t.id = static_cast<TaskId>(index);
    t.start = spec.start;
    t.destination = spec.destination;
    t.priority = spec.priority;
    t.origin = TaskOrigin::Operator;
    t.created_at = now_;
    const Task& added = fleet_.ledger.add(t);
    ++created_operator_;
    row("task_created", {}, added.id, added.start, added.destination, {});

    if (manager_) apply_resolution(manager_->on_operator_task_created(added, fleet_), added);
    dispatch();
    if (manager_) maybe_predict(false);
  }

  void apply_resolution(const Resolution& r, const Task& t) {
    const double idle = idle_measure(idle_inputs(fleet_, now_));
    switch (r.kind) {
      case ResolutionKind::None:
      case ResolutionKind::WrongCompleted:
      case ResolutionKind::RightCompleted:
        break;
      case ResolutionKind::Wrong:
      case ResolutionKind::RightUnserved:
        cancel_predicted(r.predicted_task);
        decision(idle, count_idle_vehicles(fleet_), "cancelled", r.predicted_node, t.start);
        break;
      case ResolutionKind::RightChain: {
        const VehicleId v = r.vehicle.value();
        fleet_.ledger.assign(t.id, v);
        fleet_.vehicle(v).task_queue.push_back(t.id);
        fleet_.vehicle(v).status = VehicleStatus::Busy;
        ++predictions_chained_;
        row("task_chained", v, t.id, {}, {}, {});
        decision(idle, count_idle_vehicles(fleet_), "chained", r.predicted_node, t.start);
        break;
      }
    }
  }

  void on_monitor_tick() {
    if (manager_) maybe_predict(true);
    if (!all_done()) push({now_ + opt_.policy.monitor_period, 0, EventKind::MonitorTick, -1, 0, 0});
  }

  void maybe_predict(bool from_tick) {
    if (!manager_->can_evaluate()) return;
    const double idle = idle_measure(idle_inputs(fleet_, now_));
    const std::size_t n = count_idle_vehicles(fleet_);
    if (!manager_->ready_to_predict(idle, n)) {
      if (!from_tick) decision(idle, n, "suppressed", {}, {});
      return;
    }
    const auto node = predictor_->predict(PredictionContext{manager_->sequence(), created_operator_});
    if (!node) return;
    Task p;
    p.id = static_cast<TaskId>(stream_.size() + predictions_created_);
    p.start = *node;
    p.destination = *node;
    p.priority = kPredictedPriority;
    p.origin = TaskOrigin::Predicted;
    p.created_at = now_;
    fleet_.ledger.add(p);
    manager_->record_prediction(p.id, *node);
    ++predictions_created_;
    row("prediction_created", {}, p.id, {}, {}, *node);
    decision(idle, n, "created", *node, {});
    dispatch();
  }

  void cancel_predicted(TaskId p) {
    const Task& task = fleet_.ledger.get(p);
    const auto v = task.vehicle;
    const bool was_pending = task.status == TaskStatus::Pending;
    fleet_.ledger.cancel(p);
    ++predictions_cancelled_;
    row("task_cancelled", v, p, {}, {}, {});
    if (was_pending || !v) return;

    Vehicle& veh = fleet_.vehicle(*v);
    auto& q = veh.task_queue;
    q.erase(std::remove(q.begin(), q.end(), p), q.end());
    Exec& x = exec_.at(static_cast<std::size_t>(*v));
    if (x.task != p) return;  // queued behind another task, nothing in motion for it
    x.phase = Phase::None;
    x.task = -1;
    if (veh.moving()) {
      x.stop_requested = true;
      if (opt_.scheduler == SchedulerKind::Dpstw) {
        const double arrival = x.plan.windows.at(x.next_arc - 1).end;
        windows_.cancel_vehicle(*v, arrival);
        holds_.cancel_vehicle(*v, after(arrival));
        holds_.truncate_vehicle(*v, arrival);
      }
      return;
    }
    stop_here(*v);
  }

  // Brings a stopped vehicle to rest at its node and makes it available.
  void stop_here(VehicleId v) {
    Vehicle& veh = fleet_.vehicle(v);
    Exec& x = exec_.at(static_cast<std::size_t>(v));
    if (opt_.scheduler == SchedulerKind::Dpstw) {
      // The vehicle docks here; its own holds at and beyond this node go.
      holds_.truncate_vehicle(v, now_);
      windows_.cancel_vehicle(v, now_);
      holds_.cancel_vehicle(v, after(now_));
      std::erase(pending_plans_, v);
    } else {
      std::erase(requests_, v);
      locks_.park(v);
    }
    const double hold = x.hold_until;
    const std::uint64_t epoch = x.epoch + 1;
    x = Exec{};
    x.epoch = epoch;
    x.hold_until = hold;
    row("dock", v, {}, {}, {}, veh.node);
    begin_next_task(v);
  }

  void dispatch() {
    for (const Assignment& a : dispatch_pending(fleet_, router_)) {
      row("task_assigned", a.vehicle, a.task, {}, {}, {});
      if (exec_.at(static_cast<std::size_t>(a.vehicle)).phase == Phase::None) begin_next_task(a.vehicle);
    }
  }

  void begin_next_task(VehicleId v) {
    Vehicle& veh = fleet_.vehicle(v);
    Exec& x = exec_.at(static_cast<std::size_t>(v));
    if (veh.task_queue.empty()) {
      veh.status = VehicleStatus::Idle;
      x.phase = Phase::None;
      need_dispatch_ = true;
      return;
    }
    veh.status = VehicleStatus::Busy;
    const TaskId id = veh.task_queue.front();
    fleet_.ledger.start(id);
    x.task = id;
    x.phase = Phase::ToPickup;
    row("task_started", v, id, {}, {}, {});
    start_leg(v, fleet_.ledger.get(id).start);
  }

  void start_leg(VehicleId v, NodeId target) {
    Vehicle& veh = fleet_.vehicle(v);
    Exec& x = exec_.at(static_cast<std::size_t>(v));
    x.target = target;
    x.next_arc = 0;
    x.stop_requested = false;
    if (veh.node == target) {
      leg_done(v);
      return;
    }
    if (opt_.scheduler == SchedulerKind::Dpstw) {
      x.planning = true;
      pending_plans_.push_back(v);
    } else {
      x.route = router_.shortest(veh.node, target).value();
      request_arc(v);
    }
  }

  void leg_done(VehicleId v) {
    Vehicle& veh = fleet_.vehicle(v);
    Exec& x = exec_.at(static_cast<std::size_t>(v));
    const Task& task = fleet_.ledger.get(x.task);
    if (x.phase == Phase::ToPickup) {
      x.phase = Phase::ToDelivery;
      row("pickup", v, task.id, {}, {}, veh.node);
      start_leg(v, task.destination);
      return;
    }
    const TaskId id = x.task;
    fleet_.ledger.complete(id, now_);
    row("task_completed", v, id, {}, {}, veh.node);
    veh.task_queue.pop_front();
    x.phase = Phase::None;
    x.task = -1;
    begin_next_task(v);
  }

  // -- DPSTW -----------------------------------------------------------------

  void flush_plans() {
    if (pending_plans_.empty()) return;
    std::vector<VehicleId> batch;
    batch.swap(pending_plans_);
    std::sort(batch.begin(), batch.end(), [&](VehicleId a, VehicleId b) {
      const int pa = priority_of(a), pb = priority_of(b);
      if (pa != pb) return pa > pb;
      return a < b;
    });
    for (VehicleId v : batch) {
      Exec& x = exec_.at(static_cast<std::size_t>(v));
      const Vehicle& veh = fleet_.vehicle(v);
      x.planning = false;
      const double t0 = std::max(now_, x.hold_until);
      std::optional<RoutePlan> best;
      auto consider = [&](const Route& r) {
        RoutePlan p = plan_route(windows_, holds_, v, r, t0);
        if (!best || p.arrival() < best->arrival()) best = std::move(p);
      };
      for (const Route& r : router_.alternatives(veh.node, x.target)) consider(r);
      commit_plan(windows_, holds_, *best);
      x.plan = std::move(*best);
      x.next_arc = 0;
      push({x.plan.windows.front().start, 0, EventKind::WindowStart, v, x.epoch, 0});
    }
  }

  int priority_of(VehicleId v) const {
    const Exec& x = exec_.at(static_cast<std::size_t>(v));
    return x.task >= 0 ? fleet_.ledger.get(x.task).priority : kPredictedPriority;
  }

  void on_window_start(const Event& e) {
    Exec& x = exec_.at(static_cast<std::size_t>(e.vehicle));
    if (e.epoch != x.epoch || x.next_arc != e.index) return;
    const TimeWindow& w = x.plan.windows.at(e.index);
    enter_arc(e.vehicle, w.arc, w.end);
  }

  // -- GREEDY ----------------------------------------------------------------

  void request_arc(VehicleId v) {
    Exec& x = exec_.at(static_cast<std::size_t>(v));
    x.requesting = true;
    x.wait_since = std::max(now_, x.hold_until);
    requests_.push_back(v);
  }

  void grant_requests() {
    bool progress = true;
    std::set<VehicleId> logged_wait;
    while (progress && !requests_.empty()) {
      progress = false;
      std::sort(requests_.begin(), requests_.end(), [&](VehicleId a, VehicleId b) {
        const double wa = exec_[static_cast<std::size_t>(a)].wait_since;
        const double wb = exec_[static_cast<std::size_t>(b)].wait_since;
        if (wa != wb) return wa < wb;
        return a < b;
      });
      for (std::size_t i = 0; i < requests_.size();) {
        const VehicleId v = requests_[i];
        Exec& x = exec_[static_cast<std::size_t>(v)];
        if (x.hold_until > now_) {
          ++i;
          continue;
        }
        const Arc& arc = x.route.arcs.at(x.next_arc);
        if (locks_.try_enter_arc(v, arc) == EntryDecision::Granted) {
          requests_.erase(requests_.begin() + static_cast<std::ptrdiff_t>(i));
          x.requesting = false;
          enter_arc(v, arc, now_ + arc.weight);
          progress = true;
        } else {
          if (!x.wait_logged) {
            row("wait", v, x.task >= 0 ? std::optional<TaskId>(x.task) : std::nullopt, arc.from, arc.to, {});
            x.wait_logged = true;
          }
          ++i;
        }
      }
    }
  }

  std::map<VehicleId, Arc> pending_requests() const {
    std::map<VehicleId, Arc> out;
    for (VehicleId v : requests_) {
      const Exec& x = exec_[static_cast<std::size_t>(v)];
      out.emplace(v, x.route.arcs.at(x.next_arc));
    }
    return out;
  }

  // -- motion ----------------------------------------------------------------

  void enter_arc(VehicleId v, const Arc& arc, double arrival) {
    Vehicle& veh = fleet_.vehicle(v);
    Exec& x = exec_.at(static_cast<std::size_t>(v));
    veh.on_arc = g_->find_arc(arc.from, arc.to).value();
    veh.arc_entered_at = now_;
    x.wait_logged = false;
    x.at_intermediate = false;
    row("depart", v, x.task >= 0 ? std::optional<TaskId>(x.task) : std::nullopt, arc.from, arc.to, {});
    push({arrival, 0, EventKind::VehicleArrived, v, x.epoch, x.next_arc});
    ++x.next_arc;
  }

  void on_arrival(const Event& e) {
    const VehicleId v = e.vehicle;
    Vehicle& veh = fleet_.vehicle(v);
    Exec& x = exec_.at(static_cast<std::size_t>(v));
    const Arc& arc = g_->arc(veh.on_arc.value());
    veh.node = arc.to;
    veh.on_arc.reset();
    if (opt_.scheduler == SchedulerKind::Greedy) locks_.arrive(v);
    row("arrive", v, x.task >= 0 ? std::optional<TaskId>(x.task) : std::nullopt, arc.from, arc.to, arc.to);

    if (x.stop_requested) {
      stop_here(v);
      return;
    }
    const std::size_t total = opt_.scheduler == SchedulerKind::Dpstw ? x.plan.windows.size() : x.route.arcs.size();
    if (x.next_arc < total) {
      x.at_intermediate = true;
      x.arrived_at = now_;
      if (opt_.scheduler == SchedulerKind::Dpstw) {
        push({x.plan.windows[x.next_arc].start, 0, EventKind::WindowStart, v, x.epoch, x.next_arc});
      } else {
        request_arc(v);
      }
      return;
    }
    if (opt_.scheduler == SchedulerKind::Greedy) locks_.park(v);
    row("dock", v, x.task, {}, {}, veh.node);
    leg_done(v);
  }

  // -- end of instant --------------------------------------------------------

  void end_of_instant() {
    for (int guard = 0; guard < 64; ++guard) {
      if (need_dispatch_) {
        need_dispatch_ = false;
        dispatch();
      }
      if (opt_.scheduler == SchedulerKind::Dpstw) {
        flush_plans();
      } else {
        grant_requests();
      }
      if (!need_dispatch_ && pending_plans_.empty()) break;
    }
    if (opt_.scheduler == SchedulerKind::Dpstw) {
      windows_.release_before(now_);
      holds_.release_before(now_);
    } else {
      schedule_hold_wakeups();
      auto cycles = detect_deadlock(locks_, pending_requests());
      if (!cycles.empty()) {
        status_ = RunStatus::Deadlock;
        deadlock_time_ = now_;
        deadlock_cycles_ = cycles;
        for (const auto& c : cycles) {
          log_ << format_number(now_) << ",deadlock,";
          for (std::size_t i = 0; i < c.size(); ++i) log_ << (i ? ";" : "") << c[i];
          log_ << ",,,,\n";
        }
        finished_ = true;
      }
    }
  }

  // Greedy vehicles held by an injected delay need a wake-up to retry.
  void schedule_hold_wakeups() {
    for (VehicleId v : requests_) {
      const Exec& x = exec_[static_cast<std::size_t>(v)];
      if (x.hold_until > now_ && !wakeups_.contains({x.hold_until, v})) {
        wakeups_.insert({x.hold_until, v});
        push({x.hold_until, 0, EventKind::MonitorTick, -1, 0, 1});
      }
    }
  }

  void check_invariants() const {
    if (!fleet_.ledger.identity_holds()) throw ContractViolation("ledger identity Q = T \\ C violated");
    if (!fleet_.vehicle_invariants_hold()) throw ContractViolation("vehicle idle/busy invariant violated");
    if (!windows_.invariants_hold()) throw ContractViolation("reservation table overlap");
    if (!locks_.invariants_hold()) throw ContractViolation("lock state inconsistent");
    std::size_t outstanding = 0;
    for (TaskId id : fleet_.ledger.active()) {
      const Task& t = fleet_.ledger.get(id);
      if (t.origin == TaskOrigin::Predicted && manager_ && manager_->outstanding() &&
          manager_->outstanding()->task == id) {
        ++outstanding;
      }
    }
    if (outstanding > 1) throw ContractViolation("more than one outstanding prediction");
    for (const Vehicle& v : fleet_.vehicles) {
      std::size_t executing = 0;
      for (TaskId id : v.task_queue) executing += fleet_.ledger.get(id).status == TaskStatus::Executing ? 1 : 0;
      if (executing > 1) throw ContractViolation("vehicle executes more than one task");
    }
  }

  const GuidepathGraph* g_;
  SimOptions opt_;
  Router router_;
  StationMap stations_;
  std::vector<TaskSpec> stream_;
  std::shared_ptr<NextStartPredictor> predictor_;

  FleetState fleet_;
  std::vector<Exec> exec_;
  std::optional<PredictionManager> manager_;
  ArcReservationTable windows_;
  NodeHoldTable holds_;
  ArcLockState locks_;

  std::priority_queue<Event, std::vector<Event>, EventAfter> queue_;
  std::uint64_t next_seq_ = 0;
  double now_ = 0.0;
  double last_progress_ = 0.0;
  double idle_time_ = 0.0;
  bool finished_ = false;
  bool need_dispatch_ = false;
  std::vector<VehicleId> pending_plans_;
  std::vector<VehicleId> requests_;
  std::set<std::pair<double, VehicleId>> wakeups_;
  std::size_t created_operator_ = 0;
  std::size_t test_begin_ = 0;
  std::size_t predictions_created_ = 0;
  std::size_t predictions_cancelled_ = 0;
  std::size_t predictions_chained_ = 0;
  RunStatus status_ = RunStatus::Completed;
  std::optional<double> deadlock_time_;
  std::vector<std::vector<VehicleId>> deadlock_cycles_;
  std::ostringstream log_;
  std::ostringstream decisions_;
};

}  // namespace fleetlab
