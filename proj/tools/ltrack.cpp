// ltrack: generate, train, tune and evaluate the layered pitch tracker and
// the direct blob system.

#include "ltrack/error.hpp"
#include "ltrack/io.hpp"
#include "ltrack/pipeline.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <sstream>

namespace {

using namespace ltrack;
using namespace ltrack::pipeline;

struct Flags {
  std::string config_path;
  std::string preset;
  std::string out;
  std::int64_t seed = -1;
  int jobs = 1;
  std::string steps;
  double tol_onset_ms = -1, tol_offset_ms = -1, tol_cents = -1;
  std::vector<std::string> retrain;
};

ExperimentConfig load_config(const Flags& f) {
  ExperimentConfig c;
  if (!f.config_path.empty()) {
    std::string text;
    try {
      text = io::read_file(f.config_path);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    c = ExperimentConfig::from_json(text);
  } else if (f.preset == "micro") {
    c = micro_config();
  } else {
    c = reference_config();
  }
  if (f.seed >= 0) c.seed = static_cast<std::uint64_t>(f.seed);
  if (!f.steps.empty()) {
    c.steps.clear();
    std::stringstream ss(f.steps);
    for (std::string s; std::getline(ss, s, ',');)
      if (!s.empty()) c.steps.insert(s);
  }
  if (f.tol_onset_ms >= 0) c.tolerances.onset_tol_s = f.tol_onset_ms / 1000.0;
  if (f.tol_offset_ms >= 0) c.tolerances.offset_tol_s = f.tol_offset_ms / 1000.0;
  if (f.tol_cents >= 0) c.tolerances.pitch_tol_cents = f.tol_cents;
  c.validate();
  c.tolerances.validate();
  return c;
}

std::string run_dir(const Flags& f) {
  if (!f.out.empty()) return f.out;
  if (const char* env = std::getenv("LTRACK_RUN_DIR"); env && *env) return env;
  return "run";
}

void print_report(const EvalReport& r) {
  std::cout << r.to_csv();
}

void print_telemetry(const dag::Telemetry& t) {
  auto list = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
    return s.empty() ? std::string("-") : s;
  };
  std::cout << "trained: " << list(t.trained) << "\nreused: " << list(t.reused)
            << "\nprocess calls: " << t.process_calls << " (lazy " << t.lazy_process_calls << ")"
            << "\ncheckpoints: " << t.checkpoint_reads << " read, " << t.checkpoint_writes << " written\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layered-learning polyphonic pitch tracking on synthetic benchmarks"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config_path, "Experiment config (JSON); keys listed below")->check(CLI::ExistingFile);
  app.add_option("--preset", f.preset, "Built-in config when --config is absent")
      ->check(CLI::IsMember({"reference", "micro"}));
  app.add_option("--out", f.out, "Run directory (default $LTRACK_RUN_DIR, else ./run)");
  app.add_option("--seed", f.seed, "Overrides the config seed")->check(CLI::NonNegativeNumber);
  app.add_option("--jobs", f.jobs, "Track-level parallelism; outputs do not depend on it")->check(CLI::PositiveNumber);
  app.add_option("--steps", f.steps, "Comma-separated subset of 1,2,3,direct");
  app.add_option("--tolerance-onset-ms", f.tol_onset_ms, "Onset tolerance (default 50)")->check(CLI::PositiveNumber);
  app.add_option("--tolerance-offset-ms", f.tol_offset_ms, "Offset tolerance (default 100)")->check(CLI::PositiveNumber);
  app.add_option("--tolerance-cents", f.tol_cents, "Pitch tolerance (default 50)")->check(CLI::PositiveNumber);
  app.footer(config_help());

  auto* gen = app.add_subcommand("gen", "Render the train/validation/test datasets into <out>/data");
  auto* train = app.add_subcommand("train", "Train all modules in dependency order (checkpointed)");
  train->add_option("--retrain", f.retrain, "Force retraining of these nodes and everything downstream");
  auto* tune = app.add_subcommand("tune", "Tune step-1 and direct-system thresholds");
  auto* eval = app.add_subcommand("eval", "Score the test subsets; writes report.csv/json and estimates/");
  auto* compare = app.add_subcommand("compare", "gen (if needed), train, tune, eval and figure.svg");
  auto* show = app.add_subcommand("show-config", "Print the effective config as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const ExperimentConfig config = load_config(f);
    if (show->parsed()) {
      std::cout << config.to_json() << "\n";
      return 0;
    }
    const auto start = std::chrono::steady_clock::now();
    Experiment ex(config, run_dir(f), f.jobs);
    if (gen->parsed()) {
      ex.generate();
      std::size_t n_test = 0;
      for (const auto& s : config.subsets) n_test += static_cast<std::size_t>(s.n_test);
      std::cout << "wrote " << ex.train_tracks().size() << " train, " << ex.validation_tracks().size()
                << " validation, " << n_test << " test tracks to " << (ex.run_dir() / "data").string() << "\n";
    } else if (train->parsed()) {
      print_telemetry(ex.train(std::set<std::string>(f.retrain.begin(), f.retrain.end())));
    } else if (tune->parsed()) {
      ex.tune();
      const auto& s = ex.step1();
      std::cout << "step1: t_on=" << s.t_on << " t_off=" << s.t_off << " t_sum=" << s.t_sum << " t_fr=" << s.t_fr
                << "\nwrote " << (ex.run_dir() / "tuning.json").string() << "\n";
    } else if (eval->parsed()) {
      print_report(ex.evaluate());
    } else if (compare->parsed()) {
      print_report(ex.compare());
      std::cout << "figure: " << (ex.run_dir() / "figure.svg").string() << "\n";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cerr << "done in " << secs << " s\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
