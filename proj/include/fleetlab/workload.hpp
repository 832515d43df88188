#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fleetlab/fleet.hpp"
#include "fleetlab/guidepath.hpp"
#include "fleetlab/predictor.hpp"
#include "fleetlab/text.hpp"

namespace fleetlab {

// ---------------------------------------------------------------------------
// Synthetic guidepaths
// ---------------------------------------------------------------------------

/// w x h lattice, node id = y * w + x, arcs both ways between 4-neighbours.
inline GuidepathGraph make_grid(int width, int height, double weight = 1.0) {
  if (width < 2 || height < 2) throw GuidepathError("grid needs width, height >= 2");
  GuidepathGraph g;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) g.add_node("r" + std::to_string(y) + "c" + std::to_string(x));
  }
  auto id = [&](int x, int y) { return static_cast<NodeId>(y * width + x); };
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (x + 1 < width) {
        g.add_arc(id(x, y), id(x + 1, y), weight);
        g.add_arc(id(x + 1, y), id(x, y), weight);
      }
      if (y + 1 < height) {
        g.add_arc(id(x, y), id(x, y + 1), weight);
        g.add_arc(id(x, y + 1), id(x, y), weight);
      }
    }
  }
  return g;
}

/// n nodes on one directed cycle 0 -> 1 -> ... -> n-1 -> 0.
inline GuidepathGraph make_ring(int n, double weight = 1.0) {
  if (n < 3) throw GuidepathError("ring needs n >= 3");
  GuidepathGraph g;
  for (int i = 0; i < n; ++i) g.add_node("n" + std::to_string(i));
  for (int i = 0; i < n; ++i) g.add_arc(static_cast<NodeId>(i), static_cast<NodeId>((i + 1) % n), weight);
  return g;
}

struct GuidepathSpec {
  enum class Kind { Grid, Ring } kind = Kind::Grid;
  int width = 5;
  int height = 5;
  int nodes = 12;
  double weight = 1.0;
};

inline GuidepathGraph make_synthetic_guidepath(const GuidepathSpec& spec) {
  return spec.kind == GuidepathSpec::Kind::Grid ? make_grid(spec.width, spec.height, spec.weight)
                                                : make_ring(spec.nodes, spec.weight);
}

// ---------------------------------------------------------------------------
// Markov workload
// ---------------------------------------------------------------------------

/// Column-stochastic: at(i, j) = Pr(next start = i | current start = j).
class TransitionMatrix {
 public:
  explicit TransitionMatrix(std::size_t n) : n_(n), p_(n * n, 0.0) {}

  static TransitionMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    TransitionMatrix m(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.size()) throw std::invalid_argument("transition matrix must be square");
      for (std::size_t j = 0; j < rows.size(); ++j) m.at(i, j) = rows[i][j];
    }
    m.validate();
    return m;
  }

  std::size_t size() const { return n_; }
  double& at(std::size_t next, std::size_t prev) { return p_.at(next * n_ + prev); }
  double at(std::size_t next, std::size_t prev) const { return p_.at(next * n_ + prev); }

  void validate() const {
    if (n_ == 0) throw std::invalid_argument("transition matrix is empty");
    for (std::size_t j = 0; j < n_; ++j) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n_; ++i) {
        if (!(at(i, j) >= 0.0)) throw std::invalid_argument("transition probabilities must be non-negative");
        sum += at(i, j);
      }
      if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("column " + std::to_string(j) + " of the transition matrix sums to " +
                                    format_number(sum));
      }
    }
  }

  /// Highest probability in column j (the Bayes accuracy for that state).
  double column_max(std::size_t j) const {
    double m = 0.0;
    for (std::size_t i = 0; i < n_; ++i) m = std::max(m, at(i, j));
    return m;
  }

 private:
  std::size_t n_;
  std::vector<double> p_;
};

/// Each state j moves to (j + 1) mod n with probability d and to every other
/// state uniformly otherwise.
inline TransitionMatrix dominant_transition_matrix(std::size_t n, double dominant) {
  if (n < 2) throw std::invalid_argument("need at least two stations");
  if (!(dominant >= 0.0 && dominant <= 1.0)) throw std::invalid_argument("dominant probability must be in [0, 1]");
  TransitionMatrix m(n);
  const double rest = (1.0 - dominant) / static_cast<double>(n - 1);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) m.at(i, j) = (i == (j + 1) % n) ? dominant : rest;
  }
  m.validate();
  return m;
}

struct TaskSpec {
  double created_at = 0.0;
  NodeId start = 0;
  NodeId destination = 0;
  int priority = kOperatorPriority;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

/// Poisson arrivals at busyness/3600 per second; starts follow the Markov
/// chain over stations; destinations are uniform over the other stations.
/// Starts, destinations and arrival gaps draw from separate seeded streams,
/// so the start sequence does not depend on busyness.
class MarkovTaskGenerator {
 public:
  MarkovTaskGenerator(TransitionMatrix p, StationMap stations, double busyness, std::uint64_t seed,
                      std::optional<StationIndex> initial_start = std::nullopt)
      : p_(std::move(p)), stations_(std::move(stations)), rate_(busyness / 3600.0) {
    p_.validate();
    if (p_.size() != stations_.size()) throw std::invalid_argument("transition matrix / station count mismatch");
    if (stations_.size() < 2) throw std::invalid_argument("need at least two stations");
    if (!(busyness > 0.0)) throw std::invalid_argument("busyness must be positive");
    std::seed_seq s1{seed, std::uint64_t{1}}, s2{seed, std::uint64_t{2}}, s3{seed, std::uint64_t{3}};
    starts_.seed(s1);
    dests_.seed(s2);
    arrivals_.seed(s3);
    if (initial_start) {
      if (*initial_start >= stations_.size()) throw std::out_of_range("initial start out of range");
      current_ = *initial_start;
    }
  }

  double rate() const { return rate_; }
  const StationMap& stations() const { return stations_; }

  TaskSpec next() {
    std::exponential_distribution<double> gap(rate_);
    clock_ += gap(arrivals_);
    StationIndex s;
    if (!current_) {
      s = std::uniform_int_distribution<std::size_t>(0, stations_.size() - 1)(starts_);
    } else {
      s = sample_column(*current_);
    }
    current_ = s;
    std::size_t d = std::uniform_int_distribution<std::size_t>(0, stations_.size() - 2)(dests_);
    if (d >= s) ++d;
    return TaskSpec{clock_, stations_.node(s), stations_.node(d), kOperatorPriority};
  }

 private:
  StationIndex sample_column(StationIndex j) {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(starts_);
    double acc = 0.0;
    StationIndex last_positive = 0;
    for (StationIndex i = 0; i < p_.size(); ++i) {
      const double pij = p_.at(i, j);
      if (pij <= 0.0) continue;
      last_positive = i;
      acc += pij;
      if (u < acc) return i;
    }
    return last_positive;
  }

  TransitionMatrix p_;
  StationMap stations_;
  double rate_;
  std::mt19937_64 starts_, dests_, arrivals_;
  std::optional<StationIndex> current_;
  double clock_ = 0.0;
};

inline std::vector<TaskSpec> generate_tasks(MarkovTaskGenerator& gen, std::size_t count) {
  std::vector<TaskSpec> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen.next());
  return out;
}

inline constexpr const char* kTaskCsvHeader = "created_at,start_node,dest_node";

inline void write_task_csv(std::ostream& os, const std::vector<TaskSpec>& tasks) {
  os << kTaskCsvHeader << '\n';
  for (const TaskSpec& t : tasks) os << format_number(t.created_at) << ',' << t.start << ',' << t.destination << '\n';
}

inline std::vector<TaskSpec> read_task_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("task CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTaskCsvHeader) throw std::runtime_error("task CSV: unexpected header '" + line + "'");
  std::vector<TaskSpec> out;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 3) throw std::runtime_error("task CSV row " + std::to_string(row) + ": expected 3 fields");
    try {
      out.push_back(TaskSpec{parse_double(f[0]), static_cast<NodeId>(parse_int(f[1])),
                             static_cast<NodeId>(parse_int(f[2])), kOperatorPriority});
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("task CSV row " + std::to_string(row) + ": " + e.what());
    }
  }
  return out;
}

/// Start stations of a task stream, as station indices.
inline std::vector<StationIndex> start_sequence(const std::vector<TaskSpec>& tasks, const StationMap& stations) {
  std::vector<StationIndex> out;
  out.reserve(tasks.size());
  for (const TaskSpec& t : tasks) out.push_back(stations.index(t.start));
  return out;
}

}  // namespace fleetlab
