#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fleetlab/guidepath.hpp"

namespace fleetlab {

class TrainingDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using StationIndex = std::size_t;

/// Sliding window over the start stations of the most recent R tasks.
class TaskSequence {
 public:
  explicit TaskSequence(std::size_t window) : window_(window) {
    if (window == 0) throw std::invalid_argument("sequence window must be positive");
  }

  void push(StationIndex s) {
    seq_.push_back(s);
    if (seq_.size() > window_) seq_.pop_front();
  }

  std::size_t window() const { return window_; }
  std::size_t size() const { return seq_.size(); }
  bool full() const { return seq_.size() == window_; }
  std::vector<StationIndex> values() const { return {seq_.begin(), seq_.end()}; }

 private:
  std::size_t window_;
  std::deque<StationIndex> seq_;
};

/// Bidirectional NodeId <-> station index map.
class StationMap {
 public:
  StationMap() = default;
  explicit StationMap(std::vector<NodeId> nodes) : nodes_(std::move(nodes)) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!index_.emplace(nodes_[i], i).second) throw std::invalid_argument("duplicate station node");
    }
  }

  std::size_t size() const { return nodes_.size(); }
  NodeId node(StationIndex i) const { return nodes_.at(i); }
  const std::vector<NodeId>& nodes() const { return nodes_; }

  std::optional<StationIndex> find(NodeId n) const {
    auto it = index_.find(n);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  StationIndex index(NodeId n) const {
    auto i = find(n);
    if (!i) throw std::out_of_range("node " + std::to_string(n) + " is not a station");
    return *i;
  }

 private:
  std::vector<NodeId> nodes_;
  std::map<NodeId, StationIndex> index_;
};

struct OneHotVector {
  std::size_t dimension = 0;
  std::size_t index = 0;

  std::vector<double> dense() const {
    std::vector<double> v(dimension, 0.0);
    v.at(index) = 1.0;
    return v;
  }
  friend bool operator==(const OneHotVector&, const OneHotVector&) = default;
};

inline std::vector<OneHotVector> encode_window(std::span<const StationIndex> seq, std::size_t window,
                                               std::size_t station_count) {
  if (seq.size() < window) throw std::invalid_argument("sequence shorter than the window");
  std::vector<OneHotVector> out;
  for (std::size_t i = seq.size() - window; i < seq.size(); ++i) {
    if (seq[i] >= station_count) {
      throw std::out_of_range("station index " + std::to_string(seq[i]) + " out of range");
    }
    out.push_back({station_count, seq[i]});
  }
  return out;
}

inline std::vector<OneHotVector> encode_window(const TaskSequence& seq, std::size_t station_count) {
  const auto v = seq.values();
  return encode_window(v, seq.window(), station_count);
}

// ---------------------------------------------------------------------------
// Two-layer LSTM -> fully connected (tanh) -> linear logits.
// Gate rows within each LSTM block are ordered input, forget, output,
// candidate.
// ---------------------------------------------------------------------------

struct ModelShape {
  std::size_t stations = 0;  // one-hot input width and output width
  std::size_t hidden = 64;
  std::size_t fc = 64;
  std::size_t window = 5;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

enum class ParamBlock : std::size_t {
  Lstm1Weights,
  Lstm1Bias,
  Lstm2Weights,
  Lstm2Bias,
  FcWeights,
  FcBias,
  OutWeights,
  OutBias,
};
inline constexpr std::size_t kParamBlockCount = 8;

inline const char* block_name(ParamBlock b) {
  static constexpr std::array<const char*, kParamBlockCount> names = {
      "lstm1.weight", "lstm1.bias", "lstm2.weight", "lstm2.bias", "fc.weight", "fc.bias", "out.weight", "out.bias"};
  return names[static_cast<std::size_t>(b)];
}

struct BlockLayout {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

inline std::array<BlockLayout, kParamBlockCount> block_layout(const ModelShape& s) {
  const std::size_t H = s.hidden, S = s.stations, F = s.fc;
  std::array<std::pair<std::size_t, std::size_t>, kParamBlockCount> dims = {{
      {4 * H, S + H}, {4 * H, 1}, {4 * H, 2 * H}, {4 * H, 1}, {F, H}, {F, 1}, {S, F}, {S, 1},
  }};
  std::array<BlockLayout, kParamBlockCount> out{};
  std::size_t off = 0;
  for (std::size_t i = 0; i < kParamBlockCount; ++i) {
    out[i] = {off, dims[i].first, dims[i].second};
    off += out[i].size();
  }
  return out;
}

class SequenceModel {
 public:
  SequenceModel() = default;

  SequenceModel(ModelShape shape, std::vector<NodeId> station_nodes) : shape_(shape), stations_(std::move(station_nodes)) {
    if (shape_.stations == 0 || shape_.hidden == 0 || shape_.fc == 0 || shape_.window == 0) {
      throw std::invalid_argument("model dimensions must be positive");
    }
    if (stations_.size() != shape_.stations) throw std::invalid_argument("station mapping size mismatch");
    layout_ = block_layout(shape_);
    params_.assign(layout_.back().offset + layout_.back().size(), 0.0);
  }

  /// uniform(-scale, scale) on every parameter.
  void initialize(std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (double& p : params_) p = u(rng);
  }

  const ModelShape& shape() const { return shape_; }
  const StationMap& stations() const { return stations_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }
  const BlockLayout& layout(ParamBlock b) const { return layout_[static_cast<std::size_t>(b)]; }

  std::span<double> block(ParamBlock b) {
    const auto& l = layout(b);
    return std::span<double>(params_).subspan(l.offset, l.size());
  }
  std::span<const double> block(ParamBlock b) const {
    const auto& l = layout(b);
    return std::span<const double>(params_).subspan(l.offset, l.size());
  }

 private:
  ModelShape shape_;
  StationMap stations_;
  std::array<BlockLayout, kParamBlockCount> layout_{};
  std::vector<double> params_;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Activations kept from a forward pass, one row of H per time step.
struct ForwardCache {
  std::size_t steps = 0, hidden = 0;
  std::vector<double> i1, f1, o1, g1, c1, tc1, h1;
  std::vector<double> i2, f2, o2, g2, c2, tc2, h2;
  std::vector<double> z, logits, pre;

  void resize(const ModelShape& s) {
    steps = s.window;
    hidden = s.hidden;
    const std::size_t n = s.window * s.hidden;
    for (auto* v : {&i1, &f1, &o1, &g1, &c1, &tc1, &h1, &i2, &f2, &o2, &g2, &c2, &tc2, &h2}) v->assign(n, 0.0);
    z.assign(s.fc, 0.0);
    logits.assign(s.stations, 0.0);
    pre.assign(4 * s.hidden, 0.0);
  }
};

// One LSTM step. `pre` already holds W_x x + b; adds W_h h_prev.
inline void lstm_cell(std::span<double> pre, std::span<const double> w, std::size_t cols, std::size_t h_col0,
                      std::span<const double> h_prev, std::span<const double> c_prev, std::size_t H, double* gi,
                      double* gf, double* go, double* gg, double* c, double* tc, double* h) {
  for (std::size_t r = 0; r < 4 * H; ++r) {
    const double* row = w.data() + r * cols + h_col0;
    double acc = 0.0;
    for (std::size_t k = 0; k < H; ++k) acc += row[k] * h_prev[k];
    pre[r] += acc;
  }
  for (std::size_t k = 0; k < H; ++k) {
    gi[k] = sigmoid(pre[k]);
    gf[k] = sigmoid(pre[H + k]);
    go[k] = sigmoid(pre[2 * H + k]);
    gg[k] = std::tanh(pre[3 * H + k]);
    c[k] = gf[k] * c_prev[k] + gi[k] * gg[k];
    tc[k] = std::tanh(c[k]);
    h[k] = go[k] * tc[k];
  }
}

inline void forward_cached(const SequenceModel& m, std::span<const StationIndex> window, ForwardCache& fc) {
  const ModelShape& s = m.shape();
  if (window.size() != s.window) throw std::invalid_argument("window length does not match the model");
  fc.resize(s);
  const std::size_t H = s.hidden, S = s.stations, F = s.fc;
  const auto w1 = m.block(ParamBlock::Lstm1Weights);
  const auto b1 = m.block(ParamBlock::Lstm1Bias);
  const auto w2 = m.block(ParamBlock::Lstm2Weights);
  const auto b2 = m.block(ParamBlock::Lstm2Bias);
  const std::vector<double> zeros(H, 0.0);

  for (std::size_t t = 0; t < s.window; ++t) {
    const StationIndex x = window[t];
    if (x >= S) throw std::out_of_range("station index out of range");
    const std::size_t row = t * H;
    std::span<const double> h1p = t ? std::span<const double>(fc.h1).subspan(row - H, H) : std::span<const double>(zeros);
    std::span<const double> c1p = t ? std::span<const double>(fc.c1).subspan(row - H, H) : std::span<const double>(zeros);
    const std::size_t cols1 = S + H;
    for (std::size_t r = 0; r < 4 * H; ++r) fc.pre[r] = b1[r] + w1[r * cols1 + x];
    lstm_cell(fc.pre, w1, cols1, S, h1p, c1p, H, &fc.i1[row], &fc.f1[row], &fc.o1[row], &fc.g1[row], &fc.c1[row],
              &fc.tc1[row], &fc.h1[row]);

    std::span<const double> h2p = t ? std::span<const double>(fc.h2).subspan(row - H, H) : std::span<const double>(zeros);
    std::span<const double> c2p = t ? std::span<const double>(fc.c2).subspan(row - H, H) : std::span<const double>(zeros);
    const std::size_t cols2 = 2 * H;
    const double* h1 = &fc.h1[row];
    for (std::size_t r = 0; r < 4 * H; ++r) {
      const double* wr = w2.data() + r * cols2;
      double acc = b2[r];
      for (std::size_t k = 0; k < H; ++k) acc += wr[k] * h1[k];
      fc.pre[r] = acc;
    }
    lstm_cell(fc.pre, w2, cols2, H, h2p, c2p, H, &fc.i2[row], &fc.f2[row], &fc.o2[row], &fc.g2[row], &fc.c2[row],
              &fc.tc2[row], &fc.h2[row]);
  }

  const double* top = &fc.h2[(s.window - 1) * H];
  const auto wf = m.block(ParamBlock::FcWeights);
  const auto bf = m.block(ParamBlock::FcBias);
  for (std::size_t r = 0; r < F; ++r) {
    double acc = bf[r];
    for (std::size_t k = 0; k < H; ++k) acc += wf[r * H + k] * top[k];
    fc.z[r] = std::tanh(acc);
  }
  const auto wo = m.block(ParamBlock::OutWeights);
  const auto bo = m.block(ParamBlock::OutBias);
  for (std::size_t r = 0; r < S; ++r) {
    double acc = bo[r];
    for (std::size_t k = 0; k < F; ++k) acc += wo[r * F + k] * fc.z[k];
    fc.logits[r] = acc;
  }
}

// Backward through one LSTM layer. dh holds dL/dh_t per step on entry (from
// above); on exit dx (if non-null) holds dL/d(layer input)_t for a dense
// input of width `in` (the lower layer's h).
inline void lstm_backward(std::size_t steps, std::size_t H, std::size_t in_width, std::size_t cols,
                          std::span<const double> w, std::span<double> dw, std::span<double> db,
                          const std::vector<double>& gi, const std::vector<double>& gf, const std::vector<double>& go,
                          const std::vector<double>& gg, const std::vector<double>& c, const std::vector<double>& tc,
                          const std::vector<double>& h, std::vector<double>& dh, const double* dense_input,
                          std::span<const StationIndex> onehot_input, std::vector<double>* dx) {
  std::vector<double> dc_next(H, 0.0), dh_rec(H, 0.0), da(4 * H, 0.0);
  if (dx) dx->assign(steps * in_width, 0.0);
  for (std::size_t t = steps; t-- > 0;) {
    const std::size_t row = t * H;
    for (std::size_t k = 0; k < H; ++k) {
      const double dhk = dh[row + k] + dh_rec[k];
      const double o = go[row + k], tck = tc[row + k];
      const double dc = dc_next[k] + dhk * o * (1.0 - tck * tck);
      const double cprev = t ? c[row - H + k] : 0.0;
      const double i = gi[row + k], f = gf[row + k], g = gg[row + k];
      da[k] = dc * g * i * (1.0 - i);
      da[H + k] = dc * cprev * f * (1.0 - f);
      da[2 * H + k] = dhk * tck * o * (1.0 - o);
      da[3 * H + k] = dc * i * (1.0 - g * g);
      dc_next[k] = dc * f;
    }
    std::fill(dh_rec.begin(), dh_rec.end(), 0.0);
    const double* hprev = t ? &h[row - H] : nullptr;
    const double* xin = dense_input ? dense_input + t * in_width : nullptr;
    for (std::size_t r = 0; r < 4 * H; ++r) {
      const double a = da[r];
      db[r] += a;
      double* dwr = dw.data() + r * cols;
      const double* wr = w.data() + r * cols;
      if (xin) {
        for (std::size_t k = 0; k < in_width; ++k) dwr[k] += a * xin[k];
        if (dx) {
          double* dxt = dx->data() + t * in_width;
          for (std::size_t k = 0; k < in_width; ++k) dxt[k] += a * wr[k];
        }
      } else {
        dwr[onehot_input[t]] += a;
      }
      if (hprev) {
        for (std::size_t k = 0; k < H; ++k) {
          dwr[in_width + k] += a * hprev[k];
          dh_rec[k] += a * wr[in_width + k];
        }
      }
    }
  }
}

// Adds dL/dparams for one (window, target) pair into grad; returns the loss.
inline double backward(const SequenceModel& m, std::span<const StationIndex> window, StationIndex target,
                       ForwardCache& fc, std::span<double> grad) {
  forward_cached(m, window, fc);
  const ModelShape& s = m.shape();
  const std::size_t H = s.hidden, S = s.stations, F = s.fc, R = s.window;
  if (target >= S) throw std::out_of_range("target station out of range");

  const double mx = *std::max_element(fc.logits.begin(), fc.logits.end());
  double sum = 0.0;
  for (double l : fc.logits) sum += std::exp(l - mx);
  const double log_z = mx + std::log(sum);
  const double loss = log_z - fc.logits[target];

  auto gblock = [&](ParamBlock b) {
    const auto& l = m.layout(b);
    return grad.subspan(l.offset, l.size());
  };

  std::vector<double> dlogits(S);
  for (std::size_t r = 0; r < S; ++r) dlogits[r] = std::exp(fc.logits[r] - log_z) - (r == target ? 1.0 : 0.0);

  auto dwo = gblock(ParamBlock::OutWeights);
  auto dbo = gblock(ParamBlock::OutBias);
  const auto wo = m.block(ParamBlock::OutWeights);
  std::vector<double> dz(F, 0.0);
  for (std::size_t r = 0; r < S; ++r) {
    dbo[r] += dlogits[r];
    for (std::size_t k = 0; k < F; ++k) {
      dwo[r * F + k] += dlogits[r] * fc.z[k];
      dz[k] += dlogits[r] * wo[r * F + k];
    }
  }

  auto dwf = gblock(ParamBlock::FcWeights);
  auto dbf = gblock(ParamBlock::FcBias);
  const auto wf = m.block(ParamBlock::FcWeights);
  const double* top = &fc.h2[(R - 1) * H];
  std::vector<double> dh2(R * H, 0.0);
  for (std::size_t r = 0; r < F; ++r) {
    const double a = dz[r] * (1.0 - fc.z[r] * fc.z[r]);
    dbf[r] += a;
    for (std::size_t k = 0; k < H; ++k) {
      dwf[r * H + k] += a * top[k];
      dh2[(R - 1) * H + k] += a * wf[r * H + k];
    }
  }

  std::vector<double> dh1;
  lstm_backward(R, H, H, 2 * H, m.block(ParamBlock::Lstm2Weights), gblock(ParamBlock::Lstm2Weights),
                gblock(ParamBlock::Lstm2Bias), fc.i2, fc.f2, fc.o2, fc.g2, fc.c2, fc.tc2, fc.h2, dh2, fc.h1.data(), {},
                &dh1);
  lstm_backward(R, H, S, S + H, m.block(ParamBlock::Lstm1Weights), gblock(ParamBlock::Lstm1Weights),
                gblock(ParamBlock::Lstm1Bias), fc.i1, fc.f1, fc.o1, fc.g1, fc.c1, fc.tc1, fc.h1, dh1, nullptr, window,
                nullptr);
  return loss;
}

}  // namespace detail

inline std::vector<double> forward(const SequenceModel& m, std::span<const StationIndex> window) {
  detail::ForwardCache fc;
  detail::forward_cached(m, window, fc);
  return fc.logits;
}

inline std::vector<double> forward(const SequenceModel& m, std::span<const OneHotVector> window) {
  std::vector<StationIndex> idx;
  for (const auto& v : window) {
    if (v.dimension != m.shape().stations) throw std::invalid_argument("one-hot dimension mismatch");
    idx.push_back(v.index);
  }
  return forward(m, std::span<const StationIndex>(idx));
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += (p[i] = std::exp(logits[i] - mx));
  for (double& x : p) x /= sum;
  return p;
}

/// Mean cross-entropy of softmax(logits) against the target station.
inline double cross_entropy(const SequenceModel& m, std::span<const StationIndex> window, StationIndex target) {
  const auto logits = forward(m, window);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - mx);
  return mx + std::log(sum) - logits.at(target);
}

/// Analytic gradient of the cross-entropy for a single example.
inline std::vector<double> loss_gradient(const SequenceModel& m, std::span<const StationIndex> window,
                                         StationIndex target) {
  std::vector<double> grad(m.param_count(), 0.0);
  detail::ForwardCache fc;
  detail::backward(m, window, target, fc, grad);
  return grad;
}

/// Lowest index among the maxima.
inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct Prediction {
  StationIndex station = 0;
  NodeId node = 0;
  std::vector<double> probabilities;
};

inline Prediction predict_next_start(const SequenceModel& m, const TaskSequence& seq) {
  if (!seq.full() || seq.window() != m.shape().window) throw std::invalid_argument("sequence shorter than the window");
  const auto v = seq.values();
  const auto logits = forward(m, std::span<const StationIndex>(v));
  Prediction p;
  p.probabilities = softmax(logits);
  p.station = argmax(logits);
  p.node = m.stations().node(p.station);
  return p;
}

// ---------------------------------------------------------------------------
// Data and training
// ---------------------------------------------------------------------------

/// Temporal split of a start-station sequence: the first `train_fraction`
/// is for training, the rest for testing.
struct Dataset {
  std::vector<StationIndex> sequence;
  std::size_t split = 0;

  static Dataset temporal_split(std::vector<StationIndex> seq, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw std::invalid_argument("train fraction must be in (0, 1]");
    Dataset d;
    d.split = static_cast<std::size_t>(std::floor(static_cast<double>(seq.size()) * train_fraction));
    d.sequence = std::move(seq);
    return d;
  }

  std::span<const StationIndex> train() const { return std::span<const StationIndex>(sequence).first(split); }
  std::span<const StationIndex> test() const { return std::span<const StationIndex>(sequence).subspan(split); }
};

/// Targets in [begin, end) of `seq` that have a full window of history.
inline std::vector<std::size_t> example_targets(std::size_t begin, std::size_t end, std::size_t window) {
  std::vector<std::size_t> out;
  for (std::size_t k = std::max(begin, window); k < end; ++k) out.push_back(k);
  return out;
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
  double init_scale = 0.08;
  std::uint64_t seed = 1;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean training cross-entropy per epoch
};

/// Mini-batch Adam with global-norm clipping over sliding windows of the
/// training prefix. The gradient of a batch is accumulated in example order.
inline TrainResult train(SequenceModel& m, std::span<const StationIndex> train_seq, const TrainConfig& cfg) {
  const std::size_t R = m.shape().window;
  if (train_seq.empty()) throw std::invalid_argument("empty training set");
  if (train_seq.size() <= R) throw std::invalid_argument("training set must be longer than the window");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch size must be positive");

  auto targets = example_targets(0, train_seq.size(), R);
  std::vector<double> grad(m.param_count()), mom(m.param_count(), 0.0), vel(m.param_count(), 0.0);
  std::mt19937_64 rng(cfg.seed ^ 0x5eedULL);
  detail::ForwardCache fc;
  TrainResult res;
  std::uint64_t step = 0;
  auto params = m.params();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(targets.begin(), targets.end(), rng);
    double epoch_sum = 0.0;
    for (std::size_t b0 = 0; b0 < targets.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(targets.size(), b0 + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t e = b0; e < b1; ++e) {
        const std::size_t k = targets[e];
        batch_loss += detail::backward(m, train_seq.subspan(k - R, R), train_seq[k], fc, grad);
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingDivergence("non-finite loss at epoch " + std::to_string(epoch));
      }
      epoch_sum += batch_loss;
      const double inv = 1.0 / static_cast<double>(b1 - b0);
      double norm2 = 0.0;
      for (double& g : grad) {
        g *= inv;
        norm2 += g * g;
      }
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm)) throw TrainingDivergence("non-finite gradient at epoch " + std::to_string(epoch));
      const double scale = norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;

      ++step;
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i] * scale;
        mom[i] = cfg.beta1 * mom[i] + (1.0 - cfg.beta1) * g;
        vel[i] = cfg.beta2 * vel[i] + (1.0 - cfg.beta2) * g * g;
        params[i] -= cfg.learning_rate * (mom[i] / c1) / (std::sqrt(vel[i] / c2) + cfg.epsilon);
      }
    }
    res.epoch_loss.push_back(epoch_sum / static_cast<double>(targets.size()));
  }
  return res;
}

/// Top-1 accuracy on targets [begin, end) of `seq`, using preceding history
/// (which may reach back into the training prefix) as the window.
inline double top1_accuracy(const SequenceModel& m, std::span<const StationIndex> seq, std::size_t begin,
                            std::size_t end) {
  const std::size_t R = m.shape().window;
  const auto targets = example_targets(begin, end, R);
  if (targets.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t k : targets) {
    if (argmax(forward(m, seq.subspan(k - R, R))) == seq[k]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

// ---------------------------------------------------------------------------
// Empirical first-order Markov baseline
// ---------------------------------------------------------------------------

/// counts(i, j): number of times start j was followed by start i.
class MarkovPredictor {
 public:
  explicit MarkovPredictor(std::size_t stations) : n_(stations), counts_(stations * stations, 0), freq_(stations, 0) {}

  std::size_t stations() const { return n_; }

  void fit(std::span<const StationIndex> seq) {
    for (std::size_t k = 0; k < seq.size(); ++k) {
      ++freq_.at(seq[k]);
      if (k > 0) observe(seq[k - 1], seq[k]);
    }
  }

  void observe(StationIndex prev, StationIndex next) { ++counts_.at(next * n_ + prev); }

  std::uint64_t count(StationIndex next, StationIndex prev) const { return counts_.at(next * n_ + prev); }
  void set_count(StationIndex next, StationIndex prev, std::uint64_t c) { counts_.at(next * n_ + prev) = c; }
  void set_frequency(StationIndex s, std::uint64_t c) { freq_.at(s) = c; }

  StationIndex global_mode() const {
    return static_cast<StationIndex>(std::max_element(freq_.begin(), freq_.end()) - freq_.begin());
  }

  /// argmax_i counts(i, prev); falls back to the global mode for an unseen prev.
  StationIndex predict(StationIndex prev) const {
    if (prev >= n_) throw std::out_of_range("station index out of range");
    std::optional<StationIndex> best;
    for (StationIndex i = 0; i < n_; ++i) {
      const auto c = count(i, prev);
      if (c > 0 && (!best || c > count(*best, prev))) best = i;
    }
    return best ? *best : global_mode();
  }

  double top1_accuracy(std::span<const StationIndex> seq, std::size_t begin, std::size_t end) const {
    std::size_t hits = 0, total = 0;
    for (std::size_t k = std::max<std::size_t>(begin, 1); k < end; ++k, ++total) {
      if (predict(seq[k - 1]) == seq[k]) ++hits;
    }
    return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
  }

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
  std::vector<std::uint64_t> freq_;
};

inline StationIndex markov_fit_predict(const MarkovPredictor& counts, StationIndex last) { return counts.predict(last); }

// ---------------------------------------------------------------------------
// Checkpoint: one line of JSON header, then param_count little-endian
// IEEE-754 binary64 values in block order.
// ---------------------------------------------------------------------------

inline constexpr const char* kCheckpointFormat = "fleetlab-lstm";

inline void save_checkpoint(const SequenceModel& m, std::ostream& os) {
  const auto& s = m.shape();
  nlohmann::json h;
  h["format"] = kCheckpointFormat;
  h["version"] = 1;
  h["stations"] = s.stations;
  h["hidden"] = s.hidden;
  h["fc"] = s.fc;
  h["window"] = s.window;
  h["station_nodes"] = m.stations().nodes();
  h["param_count"] = m.param_count();
  h["blocks"] = nlohmann::json::array();
  for (std::size_t b = 0; b < kParamBlockCount; ++b) {
    const auto& l = m.layout(static_cast<ParamBlock>(b));
    h["blocks"].push_back({{"name", block_name(static_cast<ParamBlock>(b))}, {"rows", l.rows}, {"cols", l.cols}});
  }
  os << h.dump() << '\n';
  for (double p : m.params()) {
    const auto bits = std::bit_cast<std::uint64_t>(p);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffU);
    os.write(bytes, 8);
  }
  if (!os) throw std::runtime_error("checkpoint write failed");
}

inline SequenceModel load_checkpoint(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw std::runtime_error("checkpoint: missing header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: bad header: ") + e.what());
  }
  if (h.value("format", "") != kCheckpointFormat) throw std::runtime_error("checkpoint: unknown format");
  ModelShape s;
  s.stations = h.at("stations").get<std::size_t>();
  s.hidden = h.at("hidden").get<std::size_t>();
  s.fc = h.at("fc").get<std::size_t>();
  s.window = h.at("window").get<std::size_t>();
  SequenceModel m(s, h.at("station_nodes").get<std::vector<NodeId>>());
  if (h.at("param_count").get<std::size_t>() != m.param_count()) {
    throw std::runtime_error("checkpoint: parameter count mismatch");
  }
  auto params = m.params();
  for (double& p : params) {
    unsigned char bytes[8];
    if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw std::runtime_error("checkpoint: truncated parameters");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    p = std::bit_cast<double>(bits);
  }
  return m;
}

}  // namespace fleetlab
