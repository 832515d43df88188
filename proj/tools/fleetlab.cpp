#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "fleetlab/cli.hpp"

using namespace fleetlab;

namespace {

struct CommonFlags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> scheduler;
  std::optional<std::string> predictor;
  std::optional<std::size_t> tasks;
  std::string busyness;  // a single value, or a comma list for sweep
  std::string out;

  void attach(CLI::App* app, bool out_required) {
    app->add_option("--config", config, "scenario JSON file");
    app->add_option("--seed", seed, "random seed (default: config, then FLEETLAB_SEED, then 1)");
    app->add_option("--scheduler", scheduler, "dpstw or greedy");
    app->add_option("--predictor", predictor, "lstm, markov, oracle or none");
    app->add_option("--tasks", tasks, "number of operator tasks");
    app->add_option("--busyness", busyness, "operator tasks per hour");
    auto* o = app->add_option("--out", out, "output file or directory");
    if (out_required) o->required();
  }

  ConfigOverrides overrides(bool single_busyness) const {
    ConfigOverrides o;
    o.seed = seed;
    o.scheduler = scheduler;
    o.predictor = predictor;
    o.tasks = tasks;
    if (single_busyness && !busyness.empty()) o.busyness = parse_double(busyness);
    return o;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fleetlab: vehicle fleet simulation with predicted-task pre-positioning"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, run_flags, sweep_flags;
  auto* gen = app.add_subcommand("generate", "write a synthetic operator task CSV");
  gen_flags.attach(gen, true);

  auto* trn = app.add_subcommand("train", "train the start-node predictor on a task CSV");
  train_flags.attach(trn, true);
  std::string data;
  trn->add_option("--data", data, "task CSV (created_at,start_node,dest_node)")->required();

  auto* run = app.add_subcommand("run", "simulate one scenario and write its logs");
  run_flags.attach(run, true);
  std::string model_path;
  run->add_option("--model", model_path, "checkpoint to use for the lstm predictor");

  auto* swp = app.add_subcommand("sweep", "paired baseline/prediction runs over busyness and seeds");
  sweep_flags.attach(swp, true);
  std::string seeds_arg;
  std::size_t jobs = 1;
  std::string sweep_model;
  swp->add_option("--seeds", seeds_arg, "comma-separated seed list (default: the resolved seed)");
  swp->add_option("--jobs", jobs, "parallel workers")->check(CLI::PositiveNumber);
  swp->add_option("--model", sweep_model, "checkpoint to use for the lstm predictor");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      const auto cfg = resolve_config(gen_flags.config, gen_flags.overrides(true));
      std::ostringstream os;
      cmd_generate(cfg, os);
      const std::filesystem::path out(gen_flags.out);
      if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
      write_file_atomic(out, os.str());
      std::cout << "wrote " << cfg.tasks << " tasks to " << out.string() << "\n";
    } else if (trn->parsed()) {
      const auto cfg = resolve_config(train_flags.config, train_flags.overrides(true));
      std::optional<GuidepathGraph> g;
      if (train_flags.config) g = build_guidepath(cfg);
      const auto rep = cmd_train(cfg, g, data, train_flags.out);
      std::cout << "train examples " << rep.train_examples << ", test examples " << rep.test_examples << "\n"
                << "final loss " << format_number(rep.epoch_loss.back()) << "\n"
                << "test accuracy " << format_number(rep.test_accuracy) << "\n"
                << "checkpoint " << rep.checkpoint.string() << "\n";
    } else if (run->parsed()) {
      auto cfg = resolve_config(run_flags.config, run_flags.overrides(true));
      if (!model_path.empty()) cfg.lstm.checkpoint = model_path;
      const auto rep = cmd_run(cfg, run_flags.out);
      std::cout << std::string(kMetricsHeader) << "\n" << to_csv(rep.row);
      if (rep.metrics.status == RunStatus::Deadlock) {
        std::cerr << "deadlock at t=" << format_number(*rep.metrics.deadlock_time) << "\n";
        return kExitDeadlock;
      }
    } else if (swp->parsed()) {
      auto cfg = resolve_config(sweep_flags.config, sweep_flags.overrides(false));
      if (!sweep_model.empty()) cfg.lstm.checkpoint = sweep_model;
      SweepOptions so;
      so.config_path = sweep_flags.config;
      so.jobs = jobs;
      so.busyness = sweep_flags.busyness.empty() ? std::vector<double>{cfg.busyness}
                                                 : parse_number_list(sweep_flags.busyness);
      if (seeds_arg.empty()) {
        so.seeds = {cfg.seed};
      } else {
        for (const auto& f : split_csv_line(seeds_arg)) {
          if (!f.empty()) so.seeds.push_back(static_cast<std::uint64_t>(parse_int(f)));
        }
      }
      const auto rep = cmd_sweep(cfg, so, sweep_flags.out);
      std::cout << "wrote " << rep.rows.size() << " rows to " << rep.metrics.string() << " (" << rep.aborted
                << " aborted)\n";
      if (rep.deadlock_dominated()) return kExitDeadlock;
    }
  } catch (const TrainingDivergence& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const GuidepathError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}
