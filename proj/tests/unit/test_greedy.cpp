#include <gtest/gtest.h>

#include "fleetlab/scheduler_greedy.hpp"
#include "fleetlab/workload.hpp"

using namespace fleetlab;

namespace {

// Row 0 of a 5x5 grid: 0 - 1 - 2 - 3 - 4.
const GuidepathGraph& grid() {
  static const GuidepathGraph g = make_grid(5, 5, 1.0);
  return g;
}

Arc arc(NodeId a, NodeId b) { return grid().arc(*grid().find_arc(a, b)); }

}  // namespace

TEST(TryEnterArc, GrantedWhenArcAndEndingNodeFree) {
  ArcLockState locks(grid());
  locks.place(0, 0, true);
  EXPECT_EQ(try_enter_arc(locks, 0, arc(0, 1)), EntryDecision::Granted);
  EXPECT_EQ(locks.arc_occupant(arc(0, 1)), 0);
  EXPECT_EQ(locks.node_occupant(1), 0);
  EXPECT_FALSE(locks.node_occupant(0));  // released on grant
  EXPECT_TRUE(locks.invariants_hold());
  locks.arrive(0);
  EXPECT_FALSE(locks.arc_occupant(arc(0, 1)));
  EXPECT_EQ(locks.node_occupant(1), 0);
  EXPECT_EQ(locks.location(0), 1);
}

TEST(TryEnterArc, WaitsWhenEndingNodeHeldByParkedVehicle) {
  ArcLockState locks(grid());
  locks.place(0, 0, true);
  locks.place(1, 1, true);
  EXPECT_EQ(try_enter_arc(locks, 0, arc(0, 1)), EntryDecision::Wait);
  EXPECT_EQ(locks.node_occupant(0), 0);  // unchanged
  EXPECT_FALSE(locks.current_arc(0));
}

TEST(TryEnterArc, DockedVehicleDoesNotBlock) {
  ArcLockState locks(grid());
  locks.place(0, 0, true);
  locks.place(1, 1, false);
  EXPECT_EQ(try_enter_arc(locks, 0, arc(0, 1)), EntryDecision::Granted);
}

TEST(TryEnterArc, ContractViolations) {
  ArcLockState locks(grid());
  locks.place(0, 0, true);
  EXPECT_THROW(try_enter_arc(locks, 0, arc(1, 2)), ContractViolation);
  EXPECT_THROW(try_enter_arc(locks, 7, arc(0, 1)), ContractViolation);
  ASSERT_EQ(try_enter_arc(locks, 0, arc(0, 1)), EntryDecision::Granted);
  EXPECT_THROW(try_enter_arc(locks, 0, arc(0, 1)), ContractViolation);
  EXPECT_THROW(locks.park(0), ContractViolation);
}

TEST(TryEnterArc, SameInstantLowerIdWins) {
  // Vehicles 3 and 5 both at the two ends feeding node 2's arcs; both want an
  // arc ending at node 2. Request order must not matter.
  for (bool reversed : {false, true}) {
    ArcLockState locks(grid());
    locks.place(3, 1, true);
    locks.place(5, 3, true);
    std::vector<std::pair<VehicleId, Arc>> reqs{{5, arc(3, 2)}, {3, arc(1, 2)}};
    if (reversed) std::swap(reqs[0], reqs[1]);
    const auto granted = grant_simultaneous(locks, reqs);
    EXPECT_EQ(granted, (std::vector<VehicleId>{3}));
    EXPECT_EQ(locks.node_occupant(2), 3);
  }
}

TEST(TryEnterArc, SharedCorridorBlocksOpposingTraffic) {
  ArcLockState shared(grid(), true), separate(grid(), false);
  for (ArcLockState* l : {&shared, &separate}) {
    l->place(0, 0, true);
    ASSERT_EQ(try_enter_arc(*l, 0, arc(0, 1)), EntryDecision::Granted);
  }
  EXPECT_EQ(shared.arc_occupant(arc(1, 0)), 0);
  EXPECT_EQ(separate.arc_occupant(arc(1, 0)), std::nullopt);
}

TEST(DetectDeadlock, NoWaitersNoCycle) {
  ArcLockState locks(grid());
  locks.place(0, 0, true);
  EXPECT_TRUE(detect_deadlock(locks, {}).empty());
}

TEST(DetectDeadlock, TwoVehiclesHoldingEachOthersNode) {
  ArcLockState locks(grid());
  locks.place(0, 1, true);
  locks.place(1, 2, true);
  const std::map<VehicleId, Arc> pending{{0, arc(1, 2)}, {1, arc(2, 1)}};
  EXPECT_EQ(try_enter_arc(locks, 0, arc(1, 2)), EntryDecision::Wait);
  EXPECT_EQ(try_enter_arc(locks, 1, arc(2, 1)), EntryDecision::Wait);
  const auto cycles = detect_deadlock(locks, pending);
  ASSERT_EQ(cycles.size(), 1u);
  EXPECT_EQ(cycles[0], (std::vector<VehicleId>{0, 1}));
}

TEST(DetectDeadlock, FourVehiclesAroundASquare) {
  // Square 0 - 1 - 6 - 5: each vehicle wants the node the next one holds.
  ArcLockState locks(grid());
  locks.place(0, 0, true);
  locks.place(1, 1, true);
  locks.place(2, 6, true);
  locks.place(3, 5, true);
  const std::map<VehicleId, Arc> pending{{0, arc(0, 1)}, {1, arc(1, 6)}, {2, arc(6, 5)}, {3, arc(5, 0)}};
  const auto cycles = detect_deadlock(locks, pending);
  ASSERT_EQ(cycles.size(), 1u);
  EXPECT_EQ(cycles[0], (std::vector<VehicleId>{0, 1, 2, 3}));
}

TEST(DetectDeadlock, ChainEndingAtParkedVehicleIsNotACycle) {
  ArcLockState locks(grid());
  locks.place(0, 1, true);
  locks.place(1, 6, true);
  locks.place(2, 5, true);
  locks.place(3, 0, true);
  const std::map<VehicleId, Arc> pending{{0, arc(1, 6)}, {1, arc(6, 5)}, {2, arc(5, 0)}};
  EXPECT_TRUE(detect_deadlock(locks, pending).empty());
}

TEST(DetectDeadlock, DirectedTriangle) {
  // Triangle 0 -> 1 -> 2 -> 0 of a directed graph.
  GuidepathGraph g;
  for (int i = 0; i < 3; ++i) g.add_node();
  g.add_arc(0, 1, 1);
  g.add_arc(1, 2, 1);
  g.add_arc(2, 0, 1);
  ArcLockState locks(g);
  locks.place(0, 0, true);
  locks.place(1, 1, true);
  locks.place(2, 2, true);
  const std::map<VehicleId, Arc> pending{{0, g.arc(0)}, {1, g.arc(1)}, {2, g.arc(2)}};
  for (const auto& [v, a] : pending) EXPECT_EQ(locks.try_enter_arc(v, a), EntryDecision::Wait);
  const auto cycles = detect_deadlock(locks, pending);
  ASSERT_EQ(cycles.size(), 1u);
  EXPECT_EQ(cycles[0], (std::vector<VehicleId>{0, 1, 2}));
  const auto wfg = build_wait_for_graph(locks, pending);
  EXPECT_EQ(wfg.at(0), (std::set<VehicleId>{1}));
  EXPECT_EQ(wfg.at(2), (std::set<VehicleId>{0}));
}

TEST(RingSafety, Examples) {
  EXPECT_TRUE(is_unidirectional_ring_safe(make_ring(12)));
  EXPECT_FALSE(is_unidirectional_ring_safe(make_grid(5, 5)));
  GuidepathGraph two;
  two.add_node();
  two.add_node();
  two.add_arc(0, 1, 1);
  two.add_arc(1, 0, 1);
  EXPECT_FALSE(is_unidirectional_ring_safe(two));
  // Two disjoint directed triangles: degrees fine, not a single cycle.
  GuidepathGraph split;
  for (int i = 0; i < 6; ++i) split.add_node();
  for (int i = 0; i < 3; ++i) split.add_arc(i, (i + 1) % 3, 1);
  for (int i = 0; i < 3; ++i) split.add_arc(3 + i, 3 + (i + 1) % 3, 1);
  EXPECT_FALSE(is_unidirectional_ring_safe(split));
}

TEST(RingSafety, AllRingsFrom3To20) {
  for (int n = 3; n <= 20; ++n) {
    const auto g = make_ring(n);
    EXPECT_EQ(g.arc_count(), static_cast<std::size_t>(n));
    EXPECT_TRUE(is_unidirectional_ring_safe(g)) << n;
  }
}
