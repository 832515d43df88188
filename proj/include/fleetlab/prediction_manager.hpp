#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fleetlab/fleet.hpp"
#include "fleetlab/predictor.hpp"

namespace fleetlab {

struct IdleMeasureInputs {
  double elapsed = 0.0;           // tau
  std::size_t created = 0;        // |T|
  std::size_t completed = 0;      // |C|
  double completed_duration = 0;  // sum over C of (tau_end - tau_start)

  static IdleMeasureInputs from_intervals(double elapsed, std::size_t created,
                                          const std::vector<std::pair<double, double>>& completed_start_end) {
    IdleMeasureInputs in{elapsed, created, completed_start_end.size(), 0.0};
    for (const auto& [s, e] : completed_start_end) in.completed_duration += e - s;
    return in;
  }
};

/// Mean completion duration over C divided by mean creation interval tau/|T|.
/// Larger values mean a busier system. Returns 0 without history.
inline double idle_measure(const IdleMeasureInputs& in) {
  if (in.completed == 0 || in.created == 0 || !(in.elapsed > 0.0)) return 0.0;
  const double mean_completion = in.completed_duration / static_cast<double>(in.completed);
  const double mean_interval = in.elapsed / static_cast<double>(in.created);
  return mean_completion / mean_interval;
}

struct PredictionPolicy {
  std::array<double, 3> thresholds{0.8, 1.2, 1.6};
  std::array<std::size_t, 4> required_idle{1, 2, 3, 4};  // n1..n4
  std::size_t window = 5;                                // R
  double monitor_period = 10.0;

  void validate() const {
    if (!(thresholds[0] < thresholds[1] && thresholds[1] < thresholds[2])) {
      throw std::invalid_argument("idle thresholds must be increasing");
    }
    for (std::size_t i = 1; i < required_idle.size(); ++i) {
      if (required_idle[i - 1] > required_idle[i]) throw std::invalid_argument("n1..n4 must be nondecreasing");
    }
    if (window == 0) throw std::invalid_argument("window must be positive");
    if (!(monitor_period > 0.0)) throw std::invalid_argument("monitor period must be positive");
  }
};

/// The four-regime gate; the regime at exactly the top threshold belongs to
/// the busiest branch.
inline bool should_create_predicted(double idle, std::size_t n_idle, const PredictionPolicy& p) {
  if (idle < p.thresholds[0]) return n_idle >= p.required_idle[0];
  if (idle < p.thresholds[1]) return n_idle >= p.required_idle[1];
  if (idle < p.thresholds[2]) return n_idle >= p.required_idle[2];
  return n_idle >= p.required_idle[3];
}

inline std::size_t count_idle_vehicles(const FleetState& state) {
  std::size_t n = 0;
  for (const Vehicle& v : state.vehicles) n += v.idle() ? 1 : 0;
  return n;
}

inline IdleMeasureInputs idle_inputs(const FleetState& state, double now) {
  const auto& l = state.ledger;
  return {now, l.operator_created(), l.operator_completed(), l.operator_duration_sum()};
}

struct OutstandingPrediction {
  TaskId task = 0;
  NodeId node = 0;
};

enum class ResolutionKind {
  None,            // nothing was outstanding
  Wrong,           // cancel p, free its vehicle, t is dispatched normally
  WrongCompleted,  // p already done, nothing to undo
  RightChain,      // t goes straight onto the queue of p's vehicle
  RightCompleted,  // p already done, t is dispatched normally
  RightUnserved,   // p never got a vehicle; it is dropped and t dispatched
};

struct Resolution {
  ResolutionKind kind = ResolutionKind::None;
  TaskId predicted_task = 0;
  NodeId predicted_node = 0;
  std::optional<VehicleId> vehicle;
};

/// Sequence window, the single outstanding prediction, and the decisions
/// taken when an operator task arrives. The coordinator applies the
/// returned effects to the fleet.
class PredictionManager {
 public:
  PredictionManager(PredictionPolicy policy, StationMap stations)
      : policy_(policy), stations_(std::move(stations)), seq_(policy.window) {
    policy_.validate();
  }

  const PredictionPolicy& policy() const { return policy_; }
  const StationMap& stations() const { return stations_; }
  const TaskSequence& sequence() const { return seq_; }
  const std::optional<OutstandingPrediction>& outstanding() const { return outstanding_; }

  /// Steps 1-2 for a newly created operator task: extend the window, then
  /// compare the outstanding prediction (if any) with t's start.
  Resolution on_operator_task_created(const Task& t, const FleetState& state) {
    if (t.origin != TaskOrigin::Operator) throw ContractViolation("prediction is resolved by operator tasks only");
    seq_.push(stations_.index(t.start));

    Resolution r;
    if (!outstanding_) return r;
    const OutstandingPrediction p = *std::exchange(outstanding_, std::nullopt);
    const Task& pt = state.ledger.get(p.task);
    r.predicted_task = p.task;
    r.predicted_node = p.node;
    r.vehicle = pt.vehicle;
    if (p.node != t.start) {
      r.kind = pt.status == TaskStatus::Completed ? ResolutionKind::WrongCompleted : ResolutionKind::Wrong;
    } else if (pt.status == TaskStatus::Completed) {
      r.kind = ResolutionKind::RightCompleted;
    } else if (pt.status == TaskStatus::Pending) {
      r.kind = ResolutionKind::RightUnserved;
    } else {
      r.kind = ResolutionKind::RightChain;
    }
    return r;
  }

  /// Step 3 guard: a full window, nothing outstanding, and the idle gate.
  bool ready_to_predict(double idle, std::size_t n_idle) const {
    return seq_.full() && !outstanding_ && should_create_predicted(idle, n_idle, policy_);
  }

  bool can_evaluate() const { return seq_.full() && !outstanding_; }

  void record_prediction(TaskId task, NodeId node) {
    if (outstanding_) throw ContractViolation("a prediction is already outstanding");
    outstanding_ = OutstandingPrediction{task, node};
  }

 private:
  PredictionPolicy policy_;
  StationMap stations_;
  TaskSequence seq_;
  std::optional<OutstandingPrediction> outstanding_;
};

}  // namespace fleetlab
