// Command-line front end: fit a Gaussian PSD model to a (fractional)
// Fokker-Planck problem, sample it at time slices, validate against analytic
// or simulated baselines, and run model-size sweeps.
//
// Exit codes: 0 success, 1 config error, 2 non-convergence, 3 degenerate model.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "psdfp/pipeline.hpp"
#include "psdfp/run_config.hpp"

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kNotConverged = 2, kDegenerate = 3 };

struct Options {
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool dry_run = false;
};

int run(const Options& opts) {
  psdfp::RunConfig cfg = psdfp::load_run_config(opts.config_path);
  if (!opts.out_dir.empty()) cfg.outputs = opts.out_dir;
  if (opts.seed_given) cfg.sampler.seed = opts.seed;
  PSDFP_LOG_INFO(
      "config %s hash=%s seeds: sampler=%llu mc=%llu collocation=%llu layout=%llu power=%llu",
      opts.config_path.c_str(), cfg.config_hash.c_str(),
      static_cast<unsigned long long>(cfg.sampler.seed),
      static_cast<unsigned long long>(cfg.mc_seed),
      static_cast<unsigned long long>(cfg.collocation_seed),
      static_cast<unsigned long long>(cfg.layout_seed),
      static_cast<unsigned long long>(cfg.solver.power_seed));

  if (opts.command == "fit") {
    psdfp::cmd_fit(cfg, cfg.outputs, opts.dry_run);
  } else if (opts.command == "sample") {
    psdfp::cmd_sample(cfg, cfg.outputs);
  } else if (opts.command == "validate") {
    psdfp::cmd_validate(cfg, cfg.outputs);
  } else {
    psdfp::cmd_sweep(cfg, cfg.outputs);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian PSD models for (fractional) Fokker-Planck equations"};
  app.require_subcommand(1);

  Options opts;
  for (const char* name : {"fit", "sample", "validate", "sweep"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opts.config_path, "run configuration (JSON)")->required();
    sub->add_option("--out", opts.out_dir, "output directory (overrides config)");
    sub->add_option("--seed", opts.seed, "sampler seed override")
        ->each([&opts](const std::string&) { opts.seed_given = true; });
    sub->add_flag("--dry-run", opts.dry_run, "print assembled problem sizes, do not solve");
    sub->callback([&opts, name] { opts.command = name; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    return run(opts);
  } catch (const psdfp::ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kConfigError;
  } catch (const psdfp::NotConverged& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNotConverged;
  } catch (const psdfp::DegenerateModel& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDegenerate;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfigError;
  }
}
