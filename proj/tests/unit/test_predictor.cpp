#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "fleetlab/predictor.hpp"
#include "fleetlab/workload.hpp"

using namespace fleetlab;

namespace {

SequenceModel small_model(std::size_t stations, std::size_t hidden, std::size_t fc, std::size_t window,
                          std::uint64_t seed, double scale = 0.3) {
  std::vector<NodeId> nodes;
  for (std::size_t i = 0; i < stations; ++i) nodes.push_back(static_cast<NodeId>(10 * i));
  SequenceModel m({stations, hidden, fc, window}, nodes);
  m.initialize(seed, scale);
  return m;
}

std::vector<StationIndex> cycle(std::size_t n, std::size_t len) {
  std::vector<StationIndex> s;
  for (std::size_t k = 0; k < len; ++k) s.push_back(k % n);
  return s;
}

}  // namespace

TEST(Encoding, OneHotWindowOfTheLastRStarts) {
  const std::vector<StationIndex> seq{3, 0, 1, 2, 2, 1};
  const auto enc = encode_window(seq, 5, 4);
  ASSERT_EQ(enc.size(), 5u);
  EXPECT_EQ(enc[0], (OneHotVector{4, 0}));
  EXPECT_EQ(enc[4], (OneHotVector{4, 1}));
  EXPECT_EQ(enc[2].dense(), (std::vector<double>{0, 0, 1, 0}));
  EXPECT_THROW(encode_window(std::vector<StationIndex>{1, 2}, 5, 4), std::invalid_argument);
  EXPECT_THROW(encode_window(std::vector<StationIndex>{0, 1, 2, 3, 4}, 5, 4), std::out_of_range);

  TaskSequence ts(3);
  for (StationIndex s : {0, 1, 2, 3}) ts.push(s);
  EXPECT_TRUE(ts.full());
  EXPECT_EQ(ts.values(), (std::vector<StationIndex>{1, 2, 3}));
}

TEST(Encoding, StationMapRoundTrip) {
  StationMap m({7, 3, 9});
  EXPECT_EQ(m.index(3), 1u);
  EXPECT_EQ(m.node(2), 9);
  EXPECT_FALSE(m.find(4));
  EXPECT_THROW(m.index(4), std::out_of_range);
  EXPECT_THROW(StationMap({1, 1}), std::invalid_argument);
}

TEST(Softmax, SumsToOneAndIsShiftInvariant) {
  const std::vector<double> l{1.0, 2.0, 3.0};
  const auto p = softmax(l);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-15);
  EXPECT_NEAR(p[2], std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)), 1e-15);
  const std::vector<double> big{1001.0, 1002.0, 1003.0};
  const auto q = softmax(big);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  EXPECT_EQ(argmax(std::vector<double>{1, 3, 3}), 1u);
}

TEST(Model, ParameterLayoutCoversEveryBlock) {
  const auto m = small_model(4, 3, 5, 2, 1);
  const std::size_t S = 4, H = 3, F = 5;
  const std::size_t want = 4 * H * (S + H) + 4 * H + 4 * H * 2 * H + 4 * H + F * H + F + S * F + S;
  EXPECT_EQ(m.param_count(), want);
  EXPECT_EQ(m.layout(ParamBlock::OutBias).offset + S, want);
}

TEST(Model, ForwardIsDeterministic) {
  const auto a = small_model(5, 8, 8, 5, 42);
  const auto b = small_model(5, 8, 8, 5, 42);
  const std::vector<StationIndex> w{0, 1, 4, 2, 3};
  EXPECT_EQ(forward(a, w), forward(b, w));
  std::vector<OneHotVector> oh;
  for (auto s : w) oh.push_back({5, s});
  EXPECT_EQ(forward(a, std::span<const OneHotVector>(oh)), forward(a, w));
  const auto c = small_model(5, 8, 8, 5, 43);
  EXPECT_NE(forward(a, w), forward(c, w));
}

// Analytic gradient against central differences, every parameter.
TEST(Gradient, MatchesCentralDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto m = small_model(4, 3, 4, 3, seed, 0.5);
    const std::vector<StationIndex> w{2, 0, 3};
    const StationIndex target = 1;
    const auto g = loss_gradient(m, w, target);
    auto p = m.params();
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + h;
      const double up = cross_entropy(m, w, target);
      p[i] = keep - h;
      const double down = cross_entropy(m, w, target);
      p[i] = keep;
      const double num = (up - down) / (2 * h);
      const double denom = std::max(std::abs(num) + std::abs(g[i]), 1e-6);
      worst = std::max(worst, std::abs(num - g[i]) / denom);
    }
    EXPECT_LT(worst, 1e-4) << "seed " << seed;
  }
}

TEST(Training, LearnsADeterministicCycle) {
  auto m = small_model(4, 16, 16, 5, 7, 0.08);
  const auto seq = cycle(4, 200);
  TrainConfig cfg;
  cfg.epochs = 40;
  cfg.seed = 3;
  const auto res = train(m, seq, cfg);
  ASSERT_EQ(res.epoch_loss.size(), 40u);
  EXPECT_LT(res.epoch_loss.back(), res.epoch_loss.front());
  EXPECT_DOUBLE_EQ(top1_accuracy(m, seq, 160, 200), 1.0);
}

TEST(Training, PreconditionsAndDivergence) {
  auto m = small_model(3, 4, 4, 5, 1);
  TrainConfig cfg;
  EXPECT_THROW(train(m, std::vector<StationIndex>{}, cfg), std::invalid_argument);
  EXPECT_THROW(train(m, cycle(3, 5), cfg), std::invalid_argument);
  auto bad = small_model(3, 4, 4, 5, 1, 1e308);
  cfg.epochs = 2;
  EXPECT_THROW(train(bad, cycle(3, 50), cfg), TrainingDivergence);
}

TEST(Training, SameSeedGivesIdenticalParameters) {
  auto a = small_model(4, 8, 8, 5, 11, 0.08);
  auto b = small_model(4, 8, 8, 5, 11, 0.08);
  const auto seq = cycle(4, 80);
  TrainConfig cfg;
  cfg.epochs = 3;
  train(a, seq, cfg);
  train(b, seq, cfg);
  EXPECT_TRUE(std::equal(a.params().begin(), a.params().end(), b.params().begin()));
}

TEST(Prediction, NextStartMapsBackToNode) {
  auto m = small_model(4, 16, 16, 5, 7, 0.08);
  TrainConfig cfg;
  cfg.epochs = 40;
  train(m, cycle(4, 200), cfg);
  TaskSequence ts(5);
  for (StationIndex s : {3, 0, 1, 2, 3}) ts.push(s);
  const auto p = predict_next_start(m, ts);
  EXPECT_EQ(p.station, 0u);
  EXPECT_EQ(p.node, 0);
  TaskSequence shorter(4);
  EXPECT_THROW(predict_next_start(m, shorter), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto m = small_model(5, 6, 7, 5, 99);
  std::ostringstream a;
  save_checkpoint(m, a);
  std::istringstream in(a.str());
  const auto back = load_checkpoint(in);
  EXPECT_EQ(back.shape(), m.shape());
  EXPECT_EQ(back.stations().nodes(), m.stations().nodes());
  std::ostringstream b;
  save_checkpoint(back, b);
  EXPECT_EQ(a.str(), b.str());
  const std::vector<StationIndex> w{0, 1, 2, 3, 4};
  EXPECT_EQ(forward(back, w), forward(m, w));

  std::istringstream truncated(a.str().substr(0, a.str().size() - 3));
  EXPECT_THROW(load_checkpoint(truncated), std::runtime_error);
  std::istringstream garbage("not json\n");
  EXPECT_THROW(load_checkpoint(garbage), std::runtime_error);
}

TEST(Markov, CountsAndFallback) {
  MarkovPredictor mp(3);
  mp.fit(std::vector<StationIndex>{0, 1, 0, 1, 0, 2});
  EXPECT_EQ(mp.count(1, 0), 2u);
  EXPECT_EQ(mp.count(2, 0), 1u);
  EXPECT_EQ(mp.predict(0), 1u);
  EXPECT_EQ(mp.predict(1), 0u);
  EXPECT_EQ(mp.predict(2), 0u);  // unseen: global mode
  EXPECT_THROW(mp.predict(3), std::out_of_range);
}

// Fitted on a long sample, the predictor recovers the dominant successor and
// its accuracy approaches the Bayes rate.
TEST(Markov, LargeSampleRecoversTheChain) {
  const std::size_t n = 6;
  std::vector<NodeId> nodes;
  for (std::size_t i = 0; i < n; ++i) nodes.push_back(static_cast<NodeId>(i));
  MarkovTaskGenerator gen(dominant_transition_matrix(n, 0.9), StationMap(nodes), 100.0, 5);
  const auto seq = start_sequence(generate_tasks(gen, 20000), StationMap(nodes));
  MarkovPredictor mp(n);
  mp.fit(std::span<const StationIndex>(seq).first(16000));
  for (StationIndex j = 0; j < n; ++j) EXPECT_EQ(mp.predict(j), (j + 1) % n);
  EXPECT_NEAR(mp.top1_accuracy(seq, 16000, 20000), 0.9, 0.02);
}
