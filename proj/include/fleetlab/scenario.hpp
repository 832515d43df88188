#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fleetlab/guidepath.hpp"
#include "fleetlab/prediction_manager.hpp"
#include "fleetlab/predictor.hpp"
#include "fleetlab/simulator.hpp"
#include "fleetlab/text.hpp"
#include "fleetlab/workload.hpp"

namespace fleetlab {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PredictorKind { Lstm, Markov, Oracle, None };

inline const char* to_string(PredictorKind k) {
  switch (k) {
    case PredictorKind::Lstm: return "lstm";
    case PredictorKind::Markov: return "markov";
    case PredictorKind::Oracle: return "oracle";
    case PredictorKind::None: return "none";
  }
  return "?";
}

inline PredictorKind parse_predictor_kind(const std::string& s) {
  if (s == "lstm") return PredictorKind::Lstm;
  if (s == "markov") return PredictorKind::Markov;
  if (s == "oracle") return PredictorKind::Oracle;
  if (s == "none") return PredictorKind::None;
  throw ConfigError("predictor: expected one of lstm, markov, oracle, none (got '" + s + "')");
}

inline SchedulerKind parse_scheduler_kind(const std::string& s) {
  if (s == "dpstw") return SchedulerKind::Dpstw;
  if (s == "greedy") return SchedulerKind::Greedy;
  throw ConfigError("scheduler: expected dpstw or greedy (got '" + s + "')");
}

struct LstmSettings {
  std::size_t hidden = 64;
  std::size_t fc = 64;
  TrainConfig train;
  std::string checkpoint;  // empty: train on the leading share of each stream
};

struct ScenarioConfig {
  // Guidepath: a file, or a synthetic grid/ring.
  std::string guidepath_file;
  GuidepathSpec synthetic;
  std::vector<NodeId> stations;  // overrides the guidepath's station list when non-empty

  std::size_t vehicles = 8;
  SchedulerKind scheduler = SchedulerKind::Dpstw;
  bool prediction = true;
  PredictorKind predictor = PredictorKind::Lstm;
  double busyness = 120.0;
  double dominant = 0.9;
  std::vector<std::vector<double>> matrix;  // explicit P (rows = next, columns = previous) if non-empty
  std::size_t tasks = 500;
  std::uint64_t seed = 1;
  PredictionPolicy policy;
  std::size_t routing_k = 3;
  double train_fraction = 0.8;
  LstmSettings lstm;
};

namespace detail {

template <class T>
T config_value(const nlohmann::json& obj, const char* key, const std::string& where, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + key + ": wrong type");
  }
}

inline void require_object(const nlohmann::json& v, const std::string& where) {
  if (!v.is_object()) throw ConfigError(where + ": expected an object");
}

}  // namespace detail

inline void validate(const ScenarioConfig& c) {
  if (c.vehicles < 1) throw ConfigError("vehicles: must be at least 1");
  if (!(c.busyness > 0.0)) throw ConfigError("busyness: must be positive");
  if (c.routing_k < 1) throw ConfigError("routing_k: must be at least 1");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw ConfigError("train_fraction: must be in (0, 1)");
  if (c.matrix.empty() && !(c.dominant >= 0.0 && c.dominant <= 1.0)) {
    throw ConfigError("transition.dominant: must be in [0, 1]");
  }
  try {
    c.policy.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("policy: ") + e.what());
  }
}

/// Relative guidepath paths are resolved against `base_dir`.
inline ScenarioConfig scenario_from_json(const nlohmann::json& doc, const std::string& base_dir = "") {
  using detail::config_value;
  detail::require_object(doc, "scenario");
  ScenarioConfig c;

  if (doc.contains("guidepath")) {
    const auto& gp = doc["guidepath"];
    detail::require_object(gp, "guidepath");
    if (gp.contains("file")) {
      c.guidepath_file = config_value<std::string>(gp, "file", "guidepath.", "");
      if (!base_dir.empty() && std::filesystem::path(c.guidepath_file).is_relative()) {
        c.guidepath_file = (std::filesystem::path(base_dir) / c.guidepath_file).string();
      }
    } else {
      const auto kind = config_value<std::string>(gp, "kind", "guidepath.", "grid");
      if (kind == "grid") {
        c.synthetic.kind = GuidepathSpec::Kind::Grid;
      } else if (kind == "ring") {
        c.synthetic.kind = GuidepathSpec::Kind::Ring;
      } else {
        throw ConfigError("guidepath.kind: expected grid or ring (got '" + kind + "')");
      }
      c.synthetic.width = config_value<int>(gp, "width", "guidepath.", c.synthetic.width);
      c.synthetic.height = config_value<int>(gp, "height", "guidepath.", c.synthetic.height);
      c.synthetic.nodes = config_value<int>(gp, "n", "guidepath.", c.synthetic.nodes);
      c.synthetic.weight = config_value<double>(gp, "arc_weight", "guidepath.", c.synthetic.weight);
    }
    c.stations = config_value<std::vector<NodeId>>(gp, "stations", "guidepath.", {});
  }

  c.vehicles = config_value<std::size_t>(doc, "vehicles", "", c.vehicles);
  c.scheduler = parse_scheduler_kind(config_value<std::string>(doc, "scheduler", "", "dpstw"));
  c.prediction = config_value<bool>(doc, "prediction", "", c.prediction);
  c.predictor = parse_predictor_kind(config_value<std::string>(doc, "predictor", "", "lstm"));
  c.busyness = config_value<double>(doc, "busyness", "", c.busyness);
  c.tasks = config_value<std::size_t>(doc, "tasks", "", c.tasks);
  c.seed = config_value<std::uint64_t>(doc, "seed", "", c.seed);
  c.routing_k = config_value<std::size_t>(doc, "routing_k", "", c.routing_k);
  c.train_fraction = config_value<double>(doc, "train_fraction", "", c.train_fraction);

  if (doc.contains("transition")) {
    const auto& t = doc["transition"];
    detail::require_object(t, "transition");
    c.dominant = config_value<double>(t, "dominant", "transition.", c.dominant);
    c.matrix = config_value<std::vector<std::vector<double>>>(t, "matrix", "transition.", {});
  }

  if (doc.contains("policy")) {
    const auto& p = doc["policy"];
    detail::require_object(p, "policy");
    c.policy.thresholds = config_value<std::array<double, 3>>(p, "thresholds", "policy.", c.policy.thresholds);
    c.policy.required_idle = config_value<std::array<std::size_t, 4>>(p, "n", "policy.", c.policy.required_idle);
    c.policy.window = config_value<std::size_t>(p, "window", "policy.", c.policy.window);
    c.policy.monitor_period = config_value<double>(p, "monitor_period", "policy.", c.policy.monitor_period);
  }

  if (doc.contains("lstm")) {
    const auto& l = doc["lstm"];
    detail::require_object(l, "lstm");
    c.lstm.hidden = config_value<std::size_t>(l, "hidden", "lstm.", c.lstm.hidden);
    c.lstm.fc = config_value<std::size_t>(l, "fc", "lstm.", c.lstm.fc);
    c.lstm.train.epochs = config_value<std::size_t>(l, "epochs", "lstm.", c.lstm.train.epochs);
    c.lstm.train.batch_size = config_value<std::size_t>(l, "batch", "lstm.", c.lstm.train.batch_size);
    c.lstm.train.learning_rate = config_value<double>(l, "learning_rate", "lstm.", c.lstm.train.learning_rate);
    c.lstm.train.clip_norm = config_value<double>(l, "clip", "lstm.", c.lstm.train.clip_norm);
    c.lstm.train.init_scale = config_value<double>(l, "init_scale", "lstm.", c.lstm.train.init_scale);
    c.lstm.checkpoint = config_value<std::string>(l, "checkpoint", "lstm.", "");
    if (!c.lstm.checkpoint.empty() && !base_dir.empty() && std::filesystem::path(c.lstm.checkpoint).is_relative()) {
      c.lstm.checkpoint = (std::filesystem::path(base_dir) / c.lstm.checkpoint).string();
    }
  }
  validate(c);
  return c;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return scenario_from_json(doc, std::filesystem::path(path).parent_path().string());
}

/// The fully resolved configuration, suitable for replaying a run.
inline nlohmann::json scenario_to_json(const ScenarioConfig& c) {
  nlohmann::json doc;
  nlohmann::json gp;
  if (!c.guidepath_file.empty()) {
    gp["file"] = c.guidepath_file;
  } else if (c.synthetic.kind == GuidepathSpec::Kind::Grid) {
    gp = {{"kind", "grid"}, {"width", c.synthetic.width}, {"height", c.synthetic.height}};
    gp["arc_weight"] = c.synthetic.weight;
  } else {
    gp = {{"kind", "ring"}, {"n", c.synthetic.nodes}, {"arc_weight", c.synthetic.weight}};
  }
  if (!c.stations.empty()) gp["stations"] = c.stations;
  doc["guidepath"] = gp;
  doc["vehicles"] = c.vehicles;
  doc["scheduler"] = to_string(c.scheduler);
  doc["prediction"] = c.prediction;
  doc["predictor"] = to_string(c.predictor);
  doc["busyness"] = c.busyness;
  doc["tasks"] = c.tasks;
  doc["seed"] = c.seed;
  doc["routing_k"] = c.routing_k;
  doc["train_fraction"] = c.train_fraction;
  if (c.matrix.empty()) {
    doc["transition"] = {{"dominant", c.dominant}};
  } else {
    doc["transition"] = {{"matrix", c.matrix}};
  }
  doc["policy"] = {{"thresholds", c.policy.thresholds},
                   {"n", c.policy.required_idle},
                   {"window", c.policy.window},
                   {"monitor_period", c.policy.monitor_period}};
  doc["lstm"] = {{"hidden", c.lstm.hidden},
                 {"fc", c.lstm.fc},
                 {"epochs", c.lstm.train.epochs},
                 {"batch", c.lstm.train.batch_size},
                 {"learning_rate", c.lstm.train.learning_rate},
                 {"clip", c.lstm.train.clip_norm},
                 {"init_scale", c.lstm.train.init_scale}};
  if (!c.lstm.checkpoint.empty()) doc["lstm"]["checkpoint"] = c.lstm.checkpoint;
  return doc;
}

inline GuidepathGraph build_guidepath(const ScenarioConfig& c) {
  GuidepathGraph g;
  try {
    if (!c.guidepath_file.empty()) {
      g = load_guidepath(read_file(c.guidepath_file));
    } else {
      g = make_synthetic_guidepath(c.synthetic);
    }
    if (!c.stations.empty()) g.set_stations(c.stations);
  } catch (const std::runtime_error& e) {
    throw ConfigError(std::string("guidepath: ") + e.what());
  }
  return g;
}

inline TransitionMatrix build_transition_matrix(const ScenarioConfig& c, std::size_t stations) {
  try {
    if (!c.matrix.empty()) {
      auto m = TransitionMatrix::from_rows(c.matrix);
      if (m.size() != stations) throw std::invalid_argument("matrix size does not match the station count");
      return m;
    }
    return dominant_transition_matrix(stations, c.dominant);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("transition: ") + e.what());
  }
}

/// The operator task stream of (config, seed). Only busyness changes the
/// arrival times; the start/destination sequence is fixed by the seed.
inline std::vector<TaskSpec> build_task_stream(const ScenarioConfig& c, const GuidepathGraph& g) {
  StationMap stations(g.stations());
  MarkovTaskGenerator gen(build_transition_matrix(c, stations.size()), stations, c.busyness, c.seed);
  return generate_tasks(gen, c.tasks);
}

inline std::size_t training_prefix(const ScenarioConfig& c, std::size_t stream_size) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(stream_size) * c.train_fraction));
}

inline SequenceModel load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path);
  try {
    return load_checkpoint(in);
  } catch (const std::runtime_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Trains a model on the training prefix of the stream's start sequence.
inline SequenceModel train_on_stream(const ScenarioConfig& c, const GuidepathGraph& g,
                                     const std::vector<TaskSpec>& stream) {
  StationMap stations(g.stations());
  const auto seq = start_sequence(stream, stations);
  const std::size_t n = training_prefix(c, seq.size());
  SequenceModel m(ModelShape{stations.size(), c.lstm.hidden, c.lstm.fc, c.policy.window}, stations.nodes());
  TrainConfig tc = c.lstm.train;
  tc.seed = c.seed;
  m.initialize(tc.seed, tc.init_scale);
  train(m, std::span<const StationIndex>(seq).first(n), tc);
  return m;
}

/// Predictor for a run. `model` is used for lstm when given; otherwise it is
/// trained on the stream's training prefix.
inline std::shared_ptr<NextStartPredictor> build_predictor(const ScenarioConfig& c, const GuidepathGraph& g,
                                                           const std::vector<TaskSpec>& stream,
                                                           std::shared_ptr<const SequenceModel> model = nullptr) {
  StationMap stations(g.stations());
  switch (c.predictor) {
    case PredictorKind::None:
      return nullptr;
    case PredictorKind::Oracle:
      return std::make_shared<OracleStartPredictor>(stream);
    case PredictorKind::Markov: {
      const auto seq = start_sequence(stream, stations);
      MarkovPredictor mp(stations.size());
      mp.fit(std::span<const StationIndex>(seq).first(training_prefix(c, seq.size())));
      return std::make_shared<MarkovStartPredictor>(std::move(mp), stations);
    }
    case PredictorKind::Lstm: {
      if (!model) {
        model = c.lstm.checkpoint.empty() ? std::make_shared<SequenceModel>(train_on_stream(c, g, stream))
                                          : std::make_shared<SequenceModel>(load_model_file(c.lstm.checkpoint));
      }
      if (model->stations().nodes() != stations.nodes()) {
        throw ConfigError("checkpoint stations do not match the guidepath stations");
      }
      if (model->shape().window != c.policy.window) throw ConfigError("checkpoint window does not match policy.window");
      return std::make_shared<LstmStartPredictor>(std::move(model));
    }
  }
  return nullptr;
}

inline SimOptions sim_options(const ScenarioConfig& c) {
  SimOptions o;
  o.scheduler = c.scheduler;
  o.vehicles = c.vehicles;
  o.prediction = c.prediction && c.predictor != PredictorKind::None;
  o.policy = c.policy;
  o.routing_k = c.routing_k;
  o.seed = c.seed;
  o.train_fraction = c.train_fraction;
  return o;
}

}  // namespace fleetlab
