#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "fleetlab/workload.hpp"

using namespace fleetlab;

namespace {

StationMap stations(std::size_t n) {
  std::vector<NodeId> nodes;
  for (std::size_t i = 0; i < n; ++i) nodes.push_back(static_cast<NodeId>(i));
  return StationMap(nodes);
}

}  // namespace

TEST(SyntheticGuidepath, GridAndRingShapes) {
  const auto g = make_grid(2, 2);
  EXPECT_EQ(g.node_count(), 4u);
  EXPECT_EQ(g.arc_count(), 8u);
  EXPECT_TRUE(g.find_arc(0, 1));
  EXPECT_TRUE(g.find_arc(2, 0));
  EXPECT_FALSE(g.find_arc(0, 3));
  const auto big = make_grid(5, 5, 10.0);
  EXPECT_EQ(big.arc_count(), 80u);
  EXPECT_EQ(big.arc(0).weight, 10.0);
  const auto r = make_ring(3);
  EXPECT_EQ(r.arc_count(), 3u);
  EXPECT_TRUE(r.find_arc(2, 0));
  EXPECT_FALSE(r.find_arc(0, 2));
  EXPECT_THROW(make_ring(2), GuidepathError);
  EXPECT_THROW(make_grid(1, 4), GuidepathError);
}

TEST(Transition, ValidationAndDominantMatrix) {
  EXPECT_THROW(TransitionMatrix::from_rows({{0.5, 0.5}, {0.6, 0.5}}), std::invalid_argument);
  EXPECT_THROW(TransitionMatrix::from_rows({{1.2, 0.0}, {-0.2, 1.0}}), std::invalid_argument);
  const auto m = dominant_transition_matrix(4, 0.7);
  EXPECT_DOUBLE_EQ(m.at(1, 0), 0.7);
  EXPECT_DOUBLE_EQ(m.at(0, 3), 0.7);
  EXPECT_DOUBLE_EQ(m.at(2, 0), 0.1);
  EXPECT_DOUBLE_EQ(m.column_max(2), 0.7);
}

TEST(Generator, IdentityMatrixRepeatsTheInitialStart) {
  TransitionMatrix id(3);
  for (std::size_t i = 0; i < 3; ++i) id.at(i, i) = 1.0;
  MarkovTaskGenerator gen(id, stations(3), 60.0, 1, 2);
  for (const auto& t : generate_tasks(gen, 50)) {
    EXPECT_EQ(t.start, 2);
    EXPECT_NE(t.destination, 2);
  }
}

TEST(Generator, PermutationAlternates) {
  const auto swap = TransitionMatrix::from_rows({{0, 1}, {1, 0}});
  MarkovTaskGenerator gen(swap, stations(2), 60.0, 9, 0);
  const auto ts = generate_tasks(gen, 10);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    EXPECT_EQ(ts[k].start, static_cast<NodeId>((k + 1) % 2));
    EXPECT_EQ(ts[k].destination, static_cast<NodeId>(k % 2));
  }
}

TEST(Generator, EmpiricalTransitionFrequencies) {
  const std::size_t n = 5;
  MarkovTaskGenerator gen(dominant_transition_matrix(n, 0.9), stations(n), 120.0, 3);
  const auto seq = start_sequence(generate_tasks(gen, 20000), stations(n));
  std::vector<std::size_t> from(n, 0), dominant(n, 0);
  for (std::size_t k = 1; k < seq.size(); ++k) {
    ++from[seq[k - 1]];
    if (seq[k] == (seq[k - 1] + 1) % n) ++dominant[seq[k - 1]];
  }
  for (std::size_t j = 0; j < n; ++j) {
    EXPECT_NEAR(static_cast<double>(dominant[j]) / static_cast<double>(from[j]), 0.9, 0.02) << j;
  }
}

TEST(Generator, ArrivalRateMatchesBusyness) {
  MarkovTaskGenerator gen(dominant_transition_matrix(4, 0.9), stations(4), 360.0, 8);
  const auto ts = generate_tasks(gen, 20000);
  const double mean_gap = ts.back().created_at / 20000.0;
  EXPECT_NEAR(mean_gap, 10.0, 0.3);
  for (std::size_t k = 1; k < ts.size(); ++k) EXPECT_GE(ts[k].created_at, ts[k - 1].created_at);
}

TEST(Generator, StartsDoNotDependOnBusyness) {
  MarkovTaskGenerator slow(dominant_transition_matrix(6, 0.8), stations(6), 60.0, 21);
  MarkovTaskGenerator fast(dominant_transition_matrix(6, 0.8), stations(6), 400.0, 21);
  const auto a = generate_tasks(slow, 500), b = generate_tasks(fast, 500);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].start, b[k].start);
    EXPECT_EQ(a[k].destination, b[k].destination);
  }
  MarkovTaskGenerator again(dominant_transition_matrix(6, 0.8), stations(6), 60.0, 21);
  EXPECT_EQ(generate_tasks(again, 500), a);
}

TEST(Generator, RejectsBadArguments) {
  EXPECT_THROW(MarkovTaskGenerator(dominant_transition_matrix(3, 0.9), stations(4), 60.0, 1), std::invalid_argument);
  EXPECT_THROW(MarkovTaskGenerator(dominant_transition_matrix(3, 0.9), stations(3), 0.0, 1), std::invalid_argument);
}

TEST(TaskCsv, RoundTripAndErrors) {
  MarkovTaskGenerator gen(dominant_transition_matrix(4, 0.9), stations(4), 120.0, 2);
  const auto ts = generate_tasks(gen, 100);
  std::stringstream ss;
  write_task_csv(ss, ts);
  const auto back = read_task_csv(ss);
  ASSERT_EQ(back.size(), ts.size());
  for (std::size_t k = 0; k < ts.size(); ++k) {
    EXPECT_EQ(back[k].created_at, ts[k].created_at);
    EXPECT_EQ(back[k].start, ts[k].start);
    EXPECT_EQ(back[k].destination, ts[k].destination);
  }
  std::istringstream bad_header("time,a,b\n");
  EXPECT_THROW(read_task_csv(bad_header), std::runtime_error);
  std::istringstream short_row("created_at,start_node,dest_node\n1.0,2\n");
  EXPECT_THROW(read_task_csv(short_row), std::runtime_error);
  std::istringstream not_number("created_at,start_node,dest_node\nx,1,2\n");
  EXPECT_THROW(read_task_csv(not_number), std::runtime_error);
}
