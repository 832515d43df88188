#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fleetlab/predictor.hpp"
#include "fleetlab/scenario.hpp"
#include "fleetlab/simulator.hpp"
#include "fleetlab/text.hpp"
#include "fleetlab/workload.hpp"

namespace fleetlab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDeadlock = 3;
inline constexpr int kExitDivergence = 4;

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scheduler;
  std::optional<std::string> predictor;
  std::optional<double> busyness;
  std::optional<std::size_t> tasks;
};

/// Seed precedence: flag, then the config file, then FLEETLAB_SEED, then 1.
inline ScenarioConfig resolve_config(const std::optional<std::string>& path, const ConfigOverrides& o) {
  ScenarioConfig c;
  bool file_seed = false;
  if (path) {
    c = load_scenario(*path);
    file_seed = nlohmann::json::parse(read_file(*path)).contains("seed");
  }
  if (o.seed) {
    c.seed = *o.seed;
  } else if (!file_seed) {
    if (const char* env = std::getenv("FLEETLAB_SEED"); env && *env) {
      try {
        c.seed = static_cast<std::uint64_t>(parse_int(env));
      } catch (const std::invalid_argument&) {
        throw ConfigError(std::string("FLEETLAB_SEED: not an integer: ") + env);
      }
    }
  }
  if (o.scheduler) c.scheduler = parse_scheduler_kind(*o.scheduler);
  if (o.predictor) c.predictor = parse_predictor_kind(*o.predictor);
  if (o.busyness) c.busyness = *o.busyness;
  if (o.tasks) c.tasks = *o.tasks;
  validate(c);
  return c;
}

/// Writes to a sibling temporary file, then renames over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp.string(), content);
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

inline void cmd_generate(const ScenarioConfig& c, std::ostream& out) {
  const GuidepathGraph g = build_guidepath(c);
  write_task_csv(out, build_task_stream(c, g));
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainReport {
  std::vector<double> epoch_loss;
  double test_accuracy = 0.0;
  std::size_t train_examples = 0;
  std::size_t test_examples = 0;
  std::filesystem::path checkpoint;
  std::filesystem::path loss_trace;
};

inline constexpr const char* kLossTraceHeader = "epoch,loss";

/// Stations come from the config's guidepath when one is given, otherwise
/// from the distinct node ids in the CSV.
inline std::vector<NodeId> infer_stations(const std::vector<TaskSpec>& tasks) {
  std::set<NodeId> s;
  for (const TaskSpec& t : tasks) {
    s.insert(t.start);
    s.insert(t.destination);
  }
  return {s.begin(), s.end()};
}

/// Trains on the first train_fraction of the rows (in time order) and
/// reports top-1 accuracy on the rest. Writes model.ckpt and loss_trace.csv.
inline TrainReport cmd_train(const ScenarioConfig& c, const std::optional<GuidepathGraph>& g,
                             const std::string& task_csv, const std::filesystem::path& out_dir) {
  std::ifstream in(task_csv);
  if (!in) throw ConfigError("cannot open " + task_csv);
  std::vector<TaskSpec> tasks;
  try {
    tasks = read_task_csv(in);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  const std::size_t R = c.policy.window;
  if (tasks.size() <= R) {
    throw std::invalid_argument("training data has " + std::to_string(tasks.size()) +
                                " rows; need more than the window length " + std::to_string(R));
  }
  StationMap stations(g ? g->stations() : infer_stations(tasks));
  std::vector<StationIndex> seq;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto idx = stations.find(tasks[i].start);
    if (!idx) throw ConfigError("row " + std::to_string(i + 2) + ": start node is not a station");
    seq.push_back(*idx);
  }
  const Dataset data = Dataset::temporal_split(seq, c.train_fraction);
  if (data.split <= R) throw std::invalid_argument("training split is not longer than the window length");

  SequenceModel m(ModelShape{stations.size(), c.lstm.hidden, c.lstm.fc, R}, stations.nodes());
  TrainConfig tc = c.lstm.train;
  tc.seed = c.seed;
  m.initialize(tc.seed, tc.init_scale);
  const TrainResult tr = train(m, data.train(), tc);

  TrainReport rep;
  rep.epoch_loss = tr.epoch_loss;
  rep.train_examples = example_targets(0, data.split, R).size();
  rep.test_examples = example_targets(data.split, seq.size(), R).size();
  rep.test_accuracy = top1_accuracy(m, seq, data.split, seq.size());

  std::filesystem::create_directories(out_dir);
  rep.checkpoint = out_dir / "model.ckpt";
  rep.loss_trace = out_dir / "loss_trace.csv";
  std::ostringstream ck;
  save_checkpoint(m, ck);
  write_file_atomic(rep.checkpoint, ck.str());
  std::ostringstream lt;
  lt << kLossTraceHeader << '\n';
  for (std::size_t e = 0; e < tr.epoch_loss.size(); ++e) lt << e + 1 << ',' << format_number(tr.epoch_loss[e]) << '\n';
  write_file_atomic(rep.loss_trace, lt.str());
  return rep;
}

// ---------------------------------------------------------------------------
// metrics rows
// ---------------------------------------------------------------------------

inline constexpr const char* kMetricsHeader =
    "busyness,seed,scheduler,prediction,predictor,status,tau_complete,improvement,idle_fraction,"
    "predictions_created,predictions_cancelled,end_time";

struct MetricsRow {
  double busyness = 0.0;
  std::uint64_t seed = 0;
  SchedulerKind scheduler = SchedulerKind::Dpstw;
  bool prediction = false;
  PredictorKind predictor = PredictorKind::None;
  RunStatus status = RunStatus::Completed;
  double tau_complete = 0.0;
  std::optional<double> improvement;
  double idle_fraction = 0.0;
  std::size_t predictions_created = 0;
  std::size_t predictions_cancelled = 0;
  double end_time = 0.0;
};

inline std::string to_csv(const MetricsRow& r) {
  std::ostringstream os;
  const bool ok = r.status == RunStatus::Completed;
  os << format_number(r.busyness) << ',' << r.seed << ',' << to_string(r.scheduler) << ','
     << (r.prediction ? "true" : "false") << ',' << to_string(r.predictor) << ','
     << (ok ? "completed" : "deadlock") << ',';
  if (ok) os << format_number(r.tau_complete);
  os << ',';
  if (r.improvement) os << format_number(*r.improvement);
  os << ',' << format_number(r.idle_fraction) << ',' << r.predictions_created << ',' << r.predictions_cancelled
     << ',' << format_number(r.end_time) << '\n';
  return os.str();
}

inline MetricsRow metrics_row(const ScenarioConfig& c, bool prediction, const MetricsRecord& m) {
  MetricsRow r;
  r.busyness = c.busyness;
  r.seed = c.seed;
  r.scheduler = c.scheduler;
  r.prediction = prediction;
  r.predictor = prediction ? c.predictor : PredictorKind::None;
  r.status = m.status;
  r.tau_complete = m.tau_complete;
  r.idle_fraction = m.idle_fraction;
  r.predictions_created = m.predictions_created;
  r.predictions_cancelled = m.predictions_cancelled;
  r.end_time = m.end_time;
  return r;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

struct RunReport {
  MetricsRecord metrics;
  MetricsRow row;
};

/// One simulation of the config. Writes config.json, tasks.csv, events.csv,
/// decisions.csv and metrics.csv into out_dir.
inline RunReport cmd_run(const ScenarioConfig& c, const std::filesystem::path& out_dir,
                         std::shared_ptr<const SequenceModel> model = nullptr) {
  const GuidepathGraph g = build_guidepath(c);
  const auto stream = build_task_stream(c, g);
  const SimOptions opt = sim_options(c);
  auto predictor = opt.prediction ? build_predictor(c, g, stream, std::move(model)) : nullptr;
  Simulation sim(g, opt, stream, predictor);
  RunReport rep;
  rep.metrics = sim.run();
  rep.row = metrics_row(c, opt.prediction, rep.metrics);

  std::filesystem::create_directories(out_dir);
  write_file_atomic(out_dir / "config.json", scenario_to_json(c).dump(2) + "\n");
  std::ostringstream tasks;
  write_task_csv(tasks, stream);
  write_file_atomic(out_dir / "tasks.csv", tasks.str());
  write_file_atomic(out_dir / "events.csv", sim.event_log());
  write_file_atomic(out_dir / "decisions.csv", sim.decision_log());
  write_file_atomic(out_dir / "metrics.csv", std::string(kMetricsHeader) + "\n" + to_csv(rep.row));
  return rep;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepOptions {
  std::vector<double> busyness;
  std::vector<std::uint64_t> seeds;
  std::size_t jobs = 1;
  std::optional<std::string> config_path;  // recorded in the manifest
};

struct SweepReport {
  std::vector<MetricsRow> rows;  // baseline, predicted per (busyness, seed)
  std::size_t aborted = 0;
  std::filesystem::path metrics;
  bool deadlock_dominated() const { return !rows.empty() && 2 * aborted > rows.size(); }
};

namespace detail {

template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

/// Baseline and prediction-enabled runs on the identical stream for every
/// (busyness, seed). LSTM models are trained once per seed unless the config
/// names a checkpoint. Entries run on up to `jobs` threads, each writing its
/// own file; the merged metrics.csv is ordered by (busyness, seed).
inline SweepReport cmd_sweep(const ScenarioConfig& base, const SweepOptions& so, const std::filesystem::path& out_dir) {
  if (so.busyness.empty()) throw ConfigError("sweep: empty busyness list");
  if (so.seeds.empty()) throw ConfigError("sweep: empty seed list");
  for (double b : so.busyness) {
    if (!(b > 0.0)) throw ConfigError("sweep: busyness must be positive");
  }
  const GuidepathGraph g = build_guidepath(base);
  std::filesystem::create_directories(out_dir / "entries");

  std::map<std::uint64_t, std::shared_ptr<const SequenceModel>> models;
  if (base.prediction && base.predictor == PredictorKind::Lstm) {
    if (!base.lstm.checkpoint.empty()) {
      auto shared = std::make_shared<const SequenceModel>(load_model_file(base.lstm.checkpoint));
      for (auto s : so.seeds) models[s] = shared;
    } else {
      std::vector<std::shared_ptr<const SequenceModel>> trained(so.seeds.size());
      detail::parallel_for(so.seeds.size(), so.jobs, [&](std::size_t i) {
        ScenarioConfig c = base;
        c.seed = so.seeds[i];
        trained[i] = std::make_shared<const SequenceModel>(train_on_stream(c, g, build_task_stream(c, g)));
      });
      for (std::size_t i = 0; i < so.seeds.size(); ++i) models[so.seeds[i]] = trained[i];
    }
  }

  const std::size_t entries = so.busyness.size() * so.seeds.size();
  std::vector<std::pair<MetricsRow, MetricsRow>> results(entries);
  detail::parallel_for(entries, so.jobs, [&](std::size_t i) {
    ScenarioConfig c = base;
    c.busyness = so.busyness[i / so.seeds.size()];
    c.seed = so.seeds[i % so.seeds.size()];
    const auto stream = build_task_stream(c, g);

    SimOptions opt = sim_options(c);
    opt.prediction = false;
    Simulation baseline(g, opt, stream);
    const MetricsRecord mb = baseline.run();
    MetricsRow rb = metrics_row(c, false, mb);

    opt.prediction = c.predictor != PredictorKind::None;
    MetricsRow rp;
    if (opt.prediction) {
      auto model = models.contains(c.seed) ? models.at(c.seed) : nullptr;
      Simulation predicted(g, opt, stream, build_predictor(c, g, stream, model));
      const MetricsRecord mp = predicted.run();
      rp = metrics_row(c, true, mp);
      if (mb.status == RunStatus::Completed && mp.status == RunStatus::Completed) rp.improvement = improvement(mb, mp);
    } else {
      rp = rb;
      rp.improvement = 0.0;
    }
    std::ostringstream entry;
    entry << to_csv(rb) << to_csv(rp);
    write_file_atomic(out_dir / "entries" / ("entry_" + std::to_string(i) + ".csv"), entry.str());
    results[i] = {rb, rp};
  });

  SweepReport rep;
  std::ostringstream merged;
  merged << kMetricsHeader << '\n';
  for (std::size_t i = 0; i < entries; ++i) {
    merged << read_file((out_dir / "entries" / ("entry_" + std::to_string(i) + ".csv")).string());
    for (const MetricsRow* r : {&results[i].first, &results[i].second}) {
      rep.rows.push_back(*r);
      if (r->status == RunStatus::Deadlock) ++rep.aborted;
    }
  }
  rep.metrics = out_dir / "metrics.csv";
  write_file_atomic(rep.metrics, merged.str());

  nlohmann::json manifest;
  manifest["config"] = so.config_path ? nlohmann::json(*so.config_path) : nlohmann::json(nullptr);
  manifest["seeds"] = so.seeds;
  manifest["busyness"] = so.busyness;
  manifest["output"] = out_dir.string();
  manifest["resolved"] = scenario_to_json(base);
  write_file_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
  write_file_atomic(out_dir / "config.json", scenario_to_json(base).dump(2) + "\n");
  return rep;
}

/// Parses "60,120,180" style lists.
inline std::vector<double> parse_number_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& f : split_csv_line(s)) {
    if (f.empty()) continue;
    out.push_back(parse_double(f));
  }
  return out;
}

}  // namespace fleetlab
