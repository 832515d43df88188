#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "fleetlab/scheduler_dpstw.hpp"
#include "fleetlab/workload.hpp"
#include "support/oracles.hpp"

using namespace fleetlab;

namespace {

const Arc kArc{0, 1, 8.0};

ArcReservationTable table_with(std::initializer_list<std::pair<double, double>> busy, const Arc& arc = kArc) {
  ArcReservationTable t;
  VehicleId v = 100;
  for (auto [s, e] : busy) t.insert({arc, v++, s, e});
  return t;
}

}  // namespace

TEST(EarliestWindow, UnconstrainedStartsAtT0) {
  ArcReservationTable t;
  const auto w = earliest_feasible_window(t, kArc, 5, 8);
  EXPECT_EQ(w.start, 5);
  EXPECT_EQ(w.end, 13);
}

TEST(EarliestWindow, FitsBeforeFirstInterval) {
  const auto t = table_with({{10, 20}, {30, 40}});
  const auto w = earliest_feasible_window(t, kArc, 0, 8);
  EXPECT_EQ(w.start, 0);
  EXPECT_EQ(w.end, 8);
}

TEST(EarliestWindow, NoGapFitsGoesAfterLast) {
  const auto t = table_with({{10, 20}, {30, 40}});
  const auto w = earliest_feasible_window(t, kArc, 0, 12);
  EXPECT_EQ(w.start, 40);
  EXPECT_EQ(w.end, 52);
}

TEST(EarliestWindow, BackToBackIsLegal) {
  const auto t = table_with({{10, 20}, {30, 40}});
  const auto w = earliest_feasible_window(t, kArc, 0, 10);
  EXPECT_EQ(w.start, 0);
  EXPECT_EQ(earliest_feasible_window(t, kArc, 12, 10).start, 20);
  EXPECT_THROW(earliest_feasible_window(t, kArc, 0, 0), ContractViolation);
}

// Property: the scan agrees with the exhaustive gap search on random tables.
TEST(EarliestWindowProperty, MatchesBruteForceGapSearch) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> count(0, 10), len(1, 15), gap(0, 12), t0d(0, 120), wd(1, 20);
  for (int trial = 0; trial < 2000; ++trial) {
    ArcReservationTable t;
    std::vector<std::pair<double, double>> busy;
    double at = gap(rng);
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      const double e = at + len(rng);
      t.insert({kArc, i, at, e});
      busy.emplace_back(at, e);
      at = e + gap(rng);
    }
    const double t0 = t0d(rng);
    const double w = wd(rng);
    const auto got = earliest_feasible_window(t, kArc, t0, w);
    ASSERT_EQ(got.start, oracle::earliest_gap(busy, t0, w)) << "trial " << trial;
    ASSERT_EQ(got.end, got.start + w);
    t.insert(got);
    ASSERT_TRUE(t.invariants_hold());
  }
}

TEST(ReservationTable, RejectsOverlapAndKeepsOrder) {
  ArcReservationTable t;
  t.insert({kArc, 1, 10, 20});
  t.insert({kArc, 2, 0, 10});
  t.insert({kArc, 3, 20, 25});
  EXPECT_THROW(t.insert({kArc, 4, 19, 21}), ContractViolation);
  EXPECT_THROW(t.insert({kArc, 4, 5, 6}), ContractViolation);
  EXPECT_THROW(t.insert({kArc, 4, 7, 7}), ContractViolation);
  const auto ws = t.windows(kArc);
  ASSERT_EQ(ws.size(), 3u);
  EXPECT_EQ(ws[0].start, 0);
  EXPECT_EQ(ws[1].start, 10);
  EXPECT_EQ(ws[2].start, 20);
  EXPECT_TRUE(t.invariants_hold());
}

TEST(ReservationTable, SharedCorridorExcludesOpposingArc) {
  ArcReservationTable separate(false), shared(true);
  const Arc back{1, 0, 8.0};
  separate.insert({kArc, 1, 0, 8});
  shared.insert({kArc, 1, 0, 8});
  EXPECT_EQ(earliest_feasible_window(separate, back, 0, 8).start, 0);
  EXPECT_EQ(earliest_feasible_window(shared, back, 0, 8).start, 8);
}

TEST(ReservationTable, DumpCsv) {
  const auto t = table_with({{0, 5}, {7, 9.5}});
  std::ostringstream os;
  t.dump_csv(os);
  EXPECT_EQ(os.str(), "arc_from,arc_to,vehicle,start,end\n0,1,100,0,5\n0,1,101,7,9.5\n");
}

TEST(ReserveRoute, SingleArc) {
  ArcReservationTable t;
  GuidepathGraph g;
  g.add_node();
  g.add_node();
  g.add_arc(0, 1, 6);
  const std::vector<NodeId> nodes{0, 1};
  const auto ws = reserve_route(t, 1, make_route(g, nodes), 0);
  ASSERT_EQ(ws.size(), 1u);
  EXPECT_EQ(ws[0].start, 0);
  EXPECT_EQ(ws[0].end, 6);
}

TEST(ReserveRoute, WaitsAtNodeForOccupiedSecondArc) {
  GuidepathGraph g;
  for (int i = 0; i < 3; ++i) g.add_node();
  g.add_arc(0, 1, 5);
  g.add_arc(1, 2, 5);
  ArcReservationTable t;
  t.insert({g.arc(1), 9, 5, 9});
  const std::vector<NodeId> nodes{0, 1, 2};
  const auto ws = reserve_route(t, 1, make_route(g, nodes), 0);
  ASSERT_EQ(ws.size(), 2u);
  EXPECT_EQ(ws[0].start, 0);
  EXPECT_EQ(ws[0].end, 5);
  EXPECT_EQ(ws[1].start, 9);
  EXPECT_EQ(ws[1].end, 14);
  EXPECT_EQ(ws[1].start - ws[0].end, 4);
}

TEST(ReserveRoute, HigherPriorityRegistersFirst) {
  GuidepathGraph g;
  g.add_node();
  g.add_node();
  g.add_arc(0, 1, 4);
  const std::vector<NodeId> nodes{0, 1};
  const Route r = make_route(g, nodes);
  for (bool low_first : {true, false}) {
    ArcReservationTable t;
    std::vector<RouteRequest> reqs{{1, 0, r, 0}, {2, 10, r, 0}};
    if (!low_first) std::swap(reqs[0], reqs[1]);
    const auto got = reserve_routes(t, reqs);
    EXPECT_EQ(got.at(2).front().start, 0);
    EXPECT_EQ(got.at(1).front().start, 4);
    EXPECT_EQ(got.at(1).front().end, 8);
  }
}

TEST(ReleaseWindows, Examples) {
  auto a = table_with({{0, 5}});
  EXPECT_EQ(release_completed_windows(a, 5), 1u);
  auto b = table_with({{0, 5}, {7, 9}});
  EXPECT_EQ(release_completed_windows(b, 6), 1u);
  ASSERT_EQ(b.windows(kArc).size(), 1u);
  EXPECT_EQ(b.windows(kArc)[0].start, 7);
  ArcReservationTable empty;
  EXPECT_EQ(release_completed_windows(empty, 100), 0u);
}

TEST(NodeHolds, CrossingTimeSeparatesArrivals) {
  NodeHoldTable h(1.0);
  h.insert({4, 1, 10, 10});
  EXPECT_TRUE(h.find_conflict({4, 2, 10, 10}));
  EXPECT_TRUE(h.find_conflict({4, 2, 10.5, 12}));
  EXPECT_FALSE(h.find_conflict({4, 2, 11, 12}));
  EXPECT_FALSE(h.find_conflict({5, 2, 10, 10}));
  EXPECT_FALSE(h.find_conflict({4, 1, 10, 10}));  // own hold
  EXPECT_THROW(h.insert({4, 3, 9.5, 10.2}), ContractViolation);
}

TEST(NodeHolds, CancelAndTruncate) {
  NodeHoldTable h(0.5);
  h.insert({1, 7, 0, 10});
  h.insert({2, 7, 15, 20});
  h.truncate_vehicle(7, 4);
  EXPECT_EQ(h.holds(1)[0].depart, 4);
  EXPECT_EQ(h.cancel_vehicle(7, 4), 1u);
  EXPECT_EQ(h.size(), 1u);
  EXPECT_EQ(h.release_before(4.5), 1u);
  EXPECT_EQ(h.size(), 0u);
}

TEST(PlanRoute, DelaysDepartureToAvoidHeadOnMeetingAtNode) {
  // Path graph 0 - 1 - 2 with corridors. Vehicle 1 is scheduled through
  // node 1 during [10, 20); vehicle 2 wants 0 -> 2 starting at 5.
  const auto g = make_grid(3, 2, 10.0);
  ArcReservationTable arcs(true);
  NodeHoldTable holds(1.0);
  holds.insert({1, 1, 10, 20});
  const std::vector<NodeId> nodes{0, 1, 2};
  const auto plan = plan_route(arcs, holds, 2, make_route(g, nodes), 5);
  for (const auto& hld : plan.holds) EXPECT_FALSE(holds.find_conflict(hld));
  EXPECT_GE(plan.departure(), 10.0);
  commit_plan(arcs, holds, plan);
  EXPECT_EQ(plan.holds.size(), 3u);  // origin crossing, intermediate, destination crossing
}

// Property: committing plans from random requests never produces an arc
// overlap or a node-hold conflict.
TEST(PlanRouteProperty, CommittedPlansStayConflictFree) {
  const auto g = make_grid(4, 4, 5.0);
  Router router(g, 3);
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> node(0, 15);
  std::uniform_real_distribution<double> when(0, 200);
  for (int round = 0; round < 20; ++round) {
    ArcReservationTable arcs(true);
    NodeHoldTable holds(0.5);
    std::vector<NodeHold> all;
    for (int v = 0; v < 40; ++v) {
      const NodeId s = node(rng);
      NodeId d = node(rng);
      if (d == s) d = (s + 5) % 16;
      const auto& alts = router.alternatives(s, d);
      const auto plan = plan_route(arcs, holds, v, alts[static_cast<std::size_t>(v) % alts.size()], when(rng));
      commit_plan(arcs, holds, plan);
      for (std::size_t i = 0; i + 1 < plan.windows.size(); ++i) {
        EXPECT_LE(plan.windows[i].end, plan.windows[i + 1].start);
      }
      all.insert(all.end(), plan.holds.begin(), plan.holds.end());
    }
    EXPECT_TRUE(arcs.invariants_hold());
    for (std::size_t i = 0; i < all.size(); ++i) {
      for (std::size_t j = i + 1; j < all.size(); ++j) {
        if (all[i].vehicle != all[j].vehicle) {
          ASSERT_FALSE(holds.conflicts(all[i], all[j]));
        }
      }
    }
  }
}
