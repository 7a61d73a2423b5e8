#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "recforget/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Recommendation unlearning benchmark"};
  app.require_subcommand(1);

  std::string run_config;
  std::string run_out;
  auto* run = app.add_subcommand("run", "Run every (model, method, strategy) cell of a config");
  run->add_option("--config", run_config, "JSON experiment config")->required()->check(CLI::ExistingFile);
  run->add_option("--out", run_out, "Output directory (overrides the config)");

  std::string sweep_config;
  std::string sweep_out;
  std::string dim;
  std::vector<double> values;
  auto* sw = app.add_subcommand("sweep", "Repeat the run over shard counts or unlearning ratios");
  sw->add_option("--config", sweep_config, "JSON experiment config")->required()->check(CLI::ExistingFile);
  sw->add_option("--dim", dim, "Swept dimension")->required()->check(CLI::IsMember({"shards", "ratio"}));
  sw->add_option("--values", values, "Values to sweep (defaults to the config's sweep lists)");
  sw->add_option("--out", sweep_out, "Output directory (overrides the config)");

  CLI11_PARSE(app, argc, argv);

  try {
    recforget::ExperimentOutput out;
    std::filesystem::path dir;
    if (*run) {
      const auto cfg = recforget::load_config(run_config);
      dir = run_out.empty() ? cfg.output_dir : std::filesystem::path(run_out);
      out = recforget::run_experiment(cfg);
    } else {
      const auto cfg = recforget::load_config(sweep_config);
      dir = sweep_out.empty() ? cfg.output_dir : std::filesystem::path(sweep_out);
      const auto d = recforget::sweep_dim_from_string(dim);
      if (values.empty()) {
        if (d == recforget::SweepDim::shards) values.assign(cfg.sweep_shards.begin(), cfg.sweep_shards.end());
        else values = cfg.sweep_ratios;
      }
      out = recforget::sweep(cfg, d, values);
    }
    recforget::emit_results(out, dir);
    int failed = 0;
    for (const auto& r : out.rows) failed += !r.ok;
    std::cout << "wrote " << out.rows.size() << " rows to " << (dir / "results.csv").string();
    if (failed) std::cout << " (" << failed << " failed cells)";
    std::cout << "\n";
    return failed ? 2 : 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
