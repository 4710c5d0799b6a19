#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "podnn/pipeline.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "pipeline config file")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", opts.out_dir, "output directory (overrides [run] out_dir)");
  cmd->add_option("--seed", opts.seed, "base seed (overrides [run] seed)")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
  cmd->add_option("--jobs", opts.jobs, "parallel training jobs (overrides [run] jobs)")
      ->check(CLI::PositiveNumber);
}

podnn::config::PipelineConfig load_config(const CommonOpts& opts) {
  auto cfg = podnn::config::PipelineConfig::load(opts.config_path);
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (opts.seed_set) cfg.seed = opts.seed;
  if (opts.jobs > 0) cfg.jobs = opts.jobs;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"podnn: non-intrusive reduced-order surrogate pipeline"};
  app.require_subcommand(1);

  CommonOpts opts;
  auto* simulate = app.add_subcommand("simulate", "sample parameters and integrate snapshots");
  auto* reduce = app.add_subcommand("reduce", "POD basis from stored snapshots");
  auto* train = app.add_subcommand("train", "train surrogate ensembles from stored artifacts");
  auto* evaluate = app.add_subcommand("evaluate", "run the full evaluation matrix");
  auto* report = app.add_subcommand("report", "render tables and plot CSVs from report.csv");
  for (auto* cmd : {simulate, reduce, train, evaluate, report}) add_common(cmd, opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    const auto cfg = load_config(opts);
    if (simulate->parsed()) podnn::pipeline::cmd_simulate(cfg);
    if (reduce->parsed()) podnn::pipeline::cmd_reduce(cfg);
    if (train->parsed()) podnn::pipeline::cmd_train(cfg);
    if (evaluate->parsed()) podnn::pipeline::cmd_evaluate(cfg);
    if (report->parsed()) podnn::pipeline::cmd_report(cfg);
  } catch (const podnn::Error& e) {
    std::cerr << "error (" << podnn::error_kind_name(e.kind()) << "): " << e.what() << "\n";
    return podnn::pipeline::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
