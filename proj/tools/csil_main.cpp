#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "csil/experiment.hpp"

namespace {

int run_command(const std::string& config_path, const std::string& out_dir,
                std::int64_t seed_override, bool quiet) {
  csil::ExperimentConfig cfg = csil::load_config(config_path);
  auto runs = csil::run_experiment(cfg, out_dir, seed_override);
  if (!quiet)
    for (const auto& r : runs) std::printf("wrote %s\n", r.dir.string().c_str());
  return 0;
}

int timing_command(const std::string& config_path, const std::string& checkpoint,
                   const std::string& out_file, bool quiet) {
  csil::ExperimentConfig cfg = csil::load_config(config_path);
  csil::TimingReport rep = csil::timing_bench(cfg, checkpoint);
  const std::string payload = csil::timing_report_to_json(rep).dump(2) + "\n";
  if (!out_file.empty()) csil::write_file(out_file, payload);
  if (!quiet) {
    std::printf("learner:    %.3f +- %.3f us/query\n", rep.learner_us_mean, rep.learner_us_std);
    std::printf("supervisor: %.3f +- %.3f us/query\n", rep.supervisor_us_mean,
                rep.supervisor_us_std);
    std::printf("speedup:    %.1fx\n", rep.speedup_ratio);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"imitation-learning experiment runner with regret certification"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, out_file;
  std::int64_t seed_override = -1;
  bool quiet = false;
  std::vector<std::string> dirs;

  auto* run = app.add_subcommand("run", "run a configured experiment across its seeds");
  run->add_option("--config", config_path, "experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "override the configured output directory");
  run->add_option("--seed-override", seed_override, "run this single seed instead");
  run->add_flag("--quiet", quiet, "suppress progress output");

  auto* bench = app.add_subcommand("timing-bench", "compare learner and supervisor query latency");
  bench->add_option("--config", config_path, "experiment config (JSON)")->required();
  bench->add_option("--checkpoint", checkpoint, "run directory with saved parameters");
  bench->add_option("--out", out_file, "write the timing report to this JSON file");
  bench->add_flag("--quiet", quiet, "suppress the summary");

  auto* compare = app.add_subcommand("compare", "merge run directories into one long-format CSV");
  compare->add_option("dirs", dirs, "run directories")->expected(-2);
  compare->add_option("--out", out_file, "merged CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return run_command(config_path, out_dir, seed_override, quiet);
    if (bench->parsed()) return timing_command(config_path, checkpoint, out_file, quiet);
    if (compare->parsed()) {
      csil::compare_runs(dirs, out_file);
      if (!quiet) std::printf("wrote %s\n", out_file.c_str());
      return 0;
    }
  } catch (const csil::ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
