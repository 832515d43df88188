#include <random>

#include <gtest/gtest.h>

#include "fleetlab/guidepath.hpp"
#include "support/oracles.hpp"

using namespace fleetlab;

namespace {

GuidepathGraph diamond() {
  // 0 -> 1 -> 3 (cost 2), 0 -> 2 -> 3 (cost 3), 0 -> 3 (cost 4)
  GuidepathGraph g;
  for (int i = 0; i < 4; ++i) g.add_node();
  g.add_arc(0, 1, 1);
  g.add_arc(1, 3, 1);
  g.add_arc(0, 2, 1);
  g.add_arc(2, 3, 2);
  g.add_arc(0, 3, 4);
  return g;
}

}  // namespace

TEST(Guidepath, RejectsMalformedArcs) {
  GuidepathGraph g;
  g.add_node();
  g.add_node();
  EXPECT_THROW(g.add_arc(0, 2, 1.0), GuidepathError);
  EXPECT_THROW(g.add_arc(0, 0, 1.0), GuidepathError);
  EXPECT_THROW(g.add_arc(0, 1, 0.0), GuidepathError);
  EXPECT_THROW(g.add_arc(0, 1, -3.0), GuidepathError);
  g.add_arc(0, 1, 2.0);
  EXPECT_THROW(g.add_arc(0, 1, 2.0), GuidepathError);
}

TEST(Guidepath, StationsDefaultToAllNodes) {
  auto g = diamond();
  EXPECT_EQ(g.stations(), (std::vector<NodeId>{0, 1, 2, 3}));
  g.set_stations({3, 0});
  EXPECT_TRUE(g.has_declared_stations());
  EXPECT_THROW(g.set_stations({7}), GuidepathError);
}

TEST(GuidepathDocument, RoundTrip) {
  auto g = diamond();
  g.set_stations({0, 3});
  const auto back = load_guidepath(guidepath_to_json(g).dump());
  ASSERT_EQ(back.node_count(), 4u);
  ASSERT_EQ(back.arc_count(), 5u);
  for (std::size_t i = 0; i < g.arc_count(); ++i) {
    EXPECT_EQ(back.arc(i).from, g.arc(i).from);
    EXPECT_EQ(back.arc(i).to, g.arc(i).to);
    EXPECT_EQ(back.arc(i).weight, g.arc(i).weight);
  }
  EXPECT_EQ(back.stations(), (std::vector<NodeId>{0, 3}));
}

TEST(GuidepathDocument, ErrorsNameTheField) {
  const char* bad_weight = R"({"nodes":[{"id":0},{"id":1}],"arcs":[{"from":0,"to":1,"weight":-1}]})";
  try {
    load_guidepath(bad_weight);
    FAIL();
  } catch (const GuidepathError& e) {
    EXPECT_NE(std::string(e.what()).find("arcs[0]"), std::string::npos) << e.what();
  }
  const char* dangling = R"({"nodes":[{"id":0}],"arcs":[{"from":0,"to":5,"weight":1}]})";
  EXPECT_THROW(load_guidepath(dangling), GuidepathError);
  const char* syntax = "{\"nodes\": [\n  {\"id\": 0},\n  oops]}";
  try {
    load_guidepath(syntax);
    FAIL();
  } catch (const GuidepathError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_guidepath(R"({"nodes":[{"id":0},{"id":0}],"arcs":[]})"), GuidepathError);
  EXPECT_THROW(load_guidepath(R"({"nodes":[{"id":0}],"arcs":[],"stations":[3]})"), GuidepathError);
}

TEST(Routing, ShortestPathOnDiamond) {
  const auto g = diamond();
  const auto r = shortest_path(g, 0, 3);
  ASSERT_TRUE(r);
  EXPECT_EQ(r->nodes(), (std::vector<NodeId>{0, 1, 3}));
  EXPECT_DOUBLE_EQ(r->total_cost, 2.0);
  EXPECT_TRUE(route_is_well_formed(*r));
  EXPECT_FALSE(shortest_path(g, 3, 0));
}

TEST(Routing, KShortestOnDiamondInCostOrder) {
  const auto g = diamond();
  const auto rs = k_shortest_paths(g, 0, 3, 5);
  ASSERT_EQ(rs.size(), 3u);
  EXPECT_DOUBLE_EQ(rs[0].total_cost, 2.0);
  EXPECT_DOUBLE_EQ(rs[1].total_cost, 3.0);
  EXPECT_DOUBLE_EQ(rs[2].total_cost, 4.0);
  EXPECT_THROW(k_shortest_paths(g, 0, 3, 0), std::invalid_argument);
}

TEST(Routing, SourceEqualsDestinationIsTheEmptyRoute) {
  const auto g = diamond();
  const auto rs = k_shortest_paths(g, 2, 2, 3);
  ASSERT_EQ(rs.size(), 1u);
  EXPECT_TRUE(rs[0].empty());
  EXPECT_EQ(rs[0].total_cost, 0.0);
}

// Property: Yen's output equals the first k of the exhaustively enumerated
// simple paths, with equal-cost groups compared as sets.
TEST(RoutingProperty, MatchesExhaustiveEnumeration) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(2, 8);
  std::uniform_real_distribution<double> dens(0.2, 0.6);
  int checked = 0;
  for (int trial = 0; trial < 250; ++trial) {
    const int n = size(rng);
    const auto g = oracle::random_graph(rng, n, dens(rng));
    std::uniform_int_distribution<int> node(0, n - 1);
    const NodeId s = node(rng);
    NodeId d = node(rng);
    if (d == s) d = (s + 1) % n;
    const auto all = oracle::all_loopless_paths(g, s, d);
    for (std::size_t k = 1; k <= 5; ++k) {
      const auto got = k_shortest_paths(g, s, d, k);
      ASSERT_EQ(got.size(), std::min(k, all.size()));
      for (std::size_t i = 0; i < got.size(); ++i) {
        EXPECT_TRUE(route_is_well_formed(got[i]));
        EXPECT_EQ(got[i].origin, s);
        EXPECT_EQ(got[i].destination(), d);
        EXPECT_DOUBLE_EQ(got[i].total_cost, all[i].cost);
      }
      // Within each cost level fully inside the prefix, the path sets agree.
      std::set<std::vector<NodeId>> got_set, want_set;
      const double last_cost = got.empty() ? 0.0 : got.back().total_cost;
      for (const auto& r : got) {
        if (r.total_cost < last_cost) got_set.insert(r.nodes());
      }
      for (const auto& p : all) {
        if (p.cost < last_cost) want_set.insert(p.nodes);
      }
      EXPECT_EQ(got_set, want_set);
      ++checked;
    }
  }
  EXPECT_GE(checked, 1000);
}

TEST(Routing, RouterMemoizes) {
  const auto g = diamond();
  Router router(g, 2);
  EXPECT_EQ(router.distance(0, 3), 2.0);
  EXPECT_FALSE(router.distance(3, 0));
  EXPECT_EQ(router.alternatives(0, 3).size(), 2u);
  EXPECT_EQ(&router.alternatives(0, 3), &router.alternatives(0, 3));
}
