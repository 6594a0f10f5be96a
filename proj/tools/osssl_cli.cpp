// Command-line front end: generate-data, train, evaluate, ablate, report.
#include <atomic>
#include <csignal>
#include <iostream>

#include "CLI11.hpp"

#include "osssl/ablate.hpp"
#include "osssl/checkpoint.hpp"
#include "osssl/config.hpp"
#include "osssl/errors.hpp"
#include "osssl/report.hpp"
#include "osssl/trainer.hpp"

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_interrupt(int) { g_stop.store(true); }

constexpr int kExitInterrupted = 130;

int exit_code(osssl::ErrorKind kind) {
  switch (kind) {
    case osssl::ErrorKind::config: return 2;
    case osssl::ErrorKind::data: return 3;
    case osssl::ErrorKind::runtime: return 4;
  }
  return 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-set semi-supervised learning with prototype clustering and cascading sample pools"};
  app.require_subcommand(1);

  std::string spec_path, csv_out;
  auto* gen = app.add_subcommand("generate-data", "Generate a synthetic open-set dataset as CSV");
  gen->add_option("--spec", spec_path, "Dataset spec (JSON)")->required();
  gen->add_option("--out", csv_out, "Output CSV")->required();

  std::string config_path, out_dir;
  bool resume = false;
  auto* tr = app.add_subcommand("train", "Train one configuration");
  tr->add_option("--config", config_path, "Training config (JSON)")->required();
  tr->add_option("--out-dir", out_dir, "Run directory")->required();
  tr->add_flag("--resume", resume, "Continue from <out-dir>/checkpoint.json");

  std::string checkpoint_path, data_path;
  auto* ev = app.add_subcommand("evaluate", "Recompute metrics from a checkpoint");
  ev->add_option("--checkpoint", checkpoint_path, "checkpoint.json")->required();
  ev->add_option("--data", data_path, "Dataset CSV")->required();

  std::string ablate_config, ablate_out;
  std::size_t seeds = 5;
  std::vector<std::string> rows;
  auto* ab = app.add_subcommand("ablate", "Run the ablation matrix");
  ab->add_option("--config", ablate_config, "Base config (JSON)")->required();
  ab->add_option("--out-dir", ablate_out, "Output directory")->required();
  ab->add_option("--seeds", seeds, "Repetitions per row")->check(CLI::PositiveNumber);
  ab->add_option("--rows", rows, "Subset of rows to run");

  std::string run_dir;
  auto* rep = app.add_subcommand("report", "Write curves.csv and summary.csv for a run directory");
  rep->add_option("--run-dir", run_dir, "Run or ablation directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  std::signal(SIGINT, on_interrupt);
  std::signal(SIGTERM, on_interrupt);

  try {
    if (*gen) {
      const auto spec = osssl::load_dataset_spec(spec_path);
      osssl::save_csv(osssl::generate_open_set(spec), csv_out);
      return 0;
    }
    if (*tr) {
      const auto cfg = osssl::load_config(config_path);
      osssl::RunOptions opts;
      opts.out_dir = out_dir;
      opts.resume = resume;
      opts.stop_flag = &g_stop;
      const auto result = osssl::train(cfg, opts);
      if (result.interrupted) {
        std::cerr << "interrupted after " << result.state.global_iteration << " iterations; checkpoint written to "
                  << out_dir << "/checkpoint.json\n";
        return kExitInterrupted;
      }
      std::cout << "final accuracy (mean of last 10 epochs): " << result.final_accuracy << '\n';
      return 0;
    }
    if (*ev) {
      const auto state = osssl::load_checkpoint(checkpoint_path);
      const auto data = osssl::load_csv(data_path);
      const auto m = osssl::evaluate_state(state.params, state.bank, state.pyramid, data);
      auto j = osssl::to_json(m);
      j["epoch"] = state.epoch;
      std::cout << j.dump() << '\n';
      return 0;
    }
    if (*ab) {
      const auto cfg = osssl::load_config(ablate_config);
      osssl::AblationOptions opts;
      opts.seeds = seeds;
      opts.out_dir = ablate_out;
      opts.only_rows = rows;
      opts.stop_flag = &g_stop;
      const auto runs = osssl::ablate(cfg, opts);
      std::cout << osssl::ablation_table(runs);
      return g_stop.load() ? kExitInterrupted : 0;
    }
    if (*rep) {
      const auto n = osssl::write_report(run_dir);
      std::cout << "reported " << n << " run(s)\n";
      return 0;
    }
  } catch (const osssl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
