// injected: train, sample, analyze and plot 2D point-cloud diffusion runs.
//
// Exit status: 0 success, 1 usage error, 2 pipeline error.

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "injected/pipeline.hpp"

namespace {

using injected::RunConfig;

struct FlagSet {
  std::map<std::string, std::string> values;
  std::string config_file;

  void attach(CLI::App* cmd) {
    auto add = [&](const std::string& flag, const std::string& key, const std::string& help) {
      cmd->add_option(flag, values[key], help);
    };
    add("--dataset", "dataset", "two-column CSV of 2D points");
    add("--config", "config", "identity-zero-0.95 | fourier-linear-0.95 | fourier-fourier-0.95 | fourier-fourier-0.98");
    add("--seed", "seed", "root seed (default 42)");
    add("--epochs", "epochs", "training epochs (default 2000)");
    add("--samples", "samples", "samples to generate (default 1000)");
    add("--out", "out", "run directory (default ./run)");
    add("--grid", "grid", "drift-field grid as NXxNY (default 20x20)");
    add("--k", "k", "trajectory clusters (default 5)");
    add("--T", "T", "diffusion steps (default 50)");
    add("--batch-size", "batch_size", "minibatch size (default 32)");
    add("--field-timesteps", "field_timesteps", "comma-separated timesteps for field dumps");
    add("--model", "model", "model file (default <out>/model.txt)");
    add("--trajectory", "trajectory", "trajectory CSV (default <out>/trajectory.csv)");
    cmd->add_option("--config-file", config_file, "key=value settings; flags override");
  }

  RunConfig resolve(CLI::App* cmd) const {
    RunConfig cfg;
    if (!config_file.empty()) injected::load_config_file(cfg, config_file);
    static const std::map<std::string, std::string> flag_of = {
        {"dataset", "--dataset"}, {"config", "--config"},       {"seed", "--seed"},
        {"epochs", "--epochs"},   {"samples", "--samples"},     {"out", "--out"},
        {"grid", "--grid"},       {"k", "--k"},                 {"T", "--T"},
        {"batch_size", "--batch-size"}, {"field_timesteps", "--field-timesteps"},
        {"model", "--model"},     {"trajectory", "--trajectory"}};
    for (const auto& [key, value] : values) {
      if (cmd->count(flag_of.at(key)) > 0) injected::apply_setting(cfg, key, value);
    }
    return cfg;
  }
};

void print_inventory(const std::vector<injected::fs::path>& files, const injected::fs::path& root) {
  std::cout << "wrote " << files.size() << " figures under " << (root / "figures").string() << "\n";
  for (const auto& f : files) std::cout << "  " << f.generic_string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion trajectory and drift-field analysis for 2D point clouds"};
  app.require_subcommand(1);

  FlagSet train_flags, sample_flags, analyze_flags, plot_flags, all_flags;
  auto* train = app.add_subcommand("train", "train a denoiser; writes model.txt and loss CSVs");
  auto* sample = app.add_subcommand("sample", "generate trajectories from a model file");
  auto* analyze = app.add_subcommand("analyze", "trajectory and drift metrics");
  auto* plot = app.add_subcommand("plot", "render SVG figures from analysis outputs");
  auto* all = app.add_subcommand("all", "train, sample, analyze and plot");
  train_flags.attach(train);
  sample_flags.attach(sample);
  analyze_flags.attach(analyze);
  plot_flags.attach(plot);
  all_flags.attach(all);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) {
      const RunConfig cfg = train_flags.resolve(train);
      const auto o = injected::cmd_train(cfg);
      std::cout << "model: " << o.model.string() << "\nloss: " << o.loss_epoch.string()
                << "\nmse: " << o.mse_per_timestep.string() << "\n";
    } else if (sample->parsed()) {
      const RunConfig cfg = sample_flags.resolve(sample);
      std::cout << "trajectories: " << injected::cmd_sample(cfg).string() << "\n";
    } else if (analyze->parsed()) {
      const RunConfig cfg = analyze_flags.resolve(analyze);
      const auto report = injected::cmd_analyze(cfg);
      std::cout << "metrics: " << (cfg.out / "metrics.txt").string()
                << "\nwasserstein.combined = " << report.get("wasserstein.combined").value_or("?") << "\n";
    } else if (plot->parsed()) {
      const RunConfig cfg = plot_flags.resolve(plot);
      print_inventory(injected::cmd_plot(cfg), cfg.out);
    } else if (all->parsed()) {
      const RunConfig cfg = all_flags.resolve(all);
      injected::cmd_train(cfg);
      injected::cmd_sample(cfg);
      const auto report = injected::cmd_analyze(cfg);
      std::cout << "wasserstein.combined = " << report.get("wasserstein.combined").value_or("?") << "\n";
      print_inventory(injected::cmd_plot(cfg), cfg.out);
    }
  } catch (const injected::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
