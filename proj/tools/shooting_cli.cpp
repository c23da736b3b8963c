// Experiment runner for particle-shooting continuous-depth models.
//
// Subcommands: fit, eval, sweep, param-count, gen-data. Exit codes:
// 0 success, 2 configuration error, 3 numerical divergence / failed check.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "shooting/experiment.hpp"

using namespace shooting;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  long long seed = -1;
  bool record_trajectory = false;
};

ExperimentConfig load_config(const CommonOpts& opts) {
  ExperimentConfig c = ExperimentConfig::from_file(opts.config_path);
  if (!opts.out_dir.empty()) c.out_dir = opts.out_dir;
  if (opts.seed >= 0) c.seeds = {static_cast<std::uint64_t>(opts.seed)};
  if (opts.record_trajectory) c.record_trajectory = true;
  return c;
}

int cmd_fit(const CommonOpts& opts) {
  ExperimentConfig c = load_config(opts);
  auto runs = run_fit(c);
  for (const auto& r : runs) {
    std::printf("seed %llu: test_loss %.6g complexity %.6g params %lld -> %s\n",
                static_cast<unsigned long long>(r.seed), r.test_loss, r.complexity,
                r.parameter_count, r.dir.c_str());
  }
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& run_dir, double tolerance) {
  ExperimentConfig c = load_config(opts);
  EvalReport rep = run_eval(c, run_dir);
  std::printf("checked %zu states, max deviation %.3g\n", rep.states_checked, rep.max_deviation);
  if (rep.max_deviation > tolerance) {
    std::fprintf(stderr, "replay deviates beyond %.3g\n", tolerance);
    return 3;
  }
  return 0;
}

int cmd_sweep(const CommonOpts& opts) {
  ExperimentConfig c = load_config(opts);
  auto rows = run_sweep(c);
  std::filesystem::create_directories(c.out_dir);
  write_sweep_csv(c.out_dir + "/sweep.csv", rows);
  std::size_t ok = 0;
  for (const auto& r : rows) {
    if (r.ok)
      ++ok;
    else
      std::fprintf(stderr, "cell %s alpha=%zu seed=%llu failed: %s\n", mode_name(r.mode),
                   r.alpha, static_cast<unsigned long long>(r.seed), r.error.c_str());
  }
  std::printf("sweep: %zu/%zu cells succeeded -> %s/sweep.csv\n", ok, rows.size(),
              c.out_dir.c_str());
  return ok > 0 ? 0 : 3;
}

int cmd_param_count(const std::string& mode_str, std::size_t d, std::size_t alpha, long long k,
                    long long blocks) {
  ModeSpec spec;
  spec.mode = mode_from_name(mode_str);
  spec.d = d;
  spec.alpha = alpha;
  if (mode_uses_particles(spec.mode)) {
    if (k <= 0) throw ConfigError("param-count: particle modes require --particles");
    spec.particles = static_cast<std::size_t>(k);
  } else if (k > 0) {
    throw ConfigError("param-count: --particles is only valid for particle modes");
  }
  if (spec.mode == Mode::dynamic_direct)
    spec.blocks = blocks > 0 ? static_cast<std::size_t>(blocks) : 5;
  else if (blocks > 0)
    throw ConfigError("param-count: --blocks is only valid for dynamic_direct");
  spec.validate();
  std::printf("%lld\n", count_parameters(spec));
  return 0;
}

int cmd_gen_data(const CommonOpts& opts) {
  ExperimentConfig c = load_config(opts);
  const std::string dir = opts.out_dir.empty() ? c.out_dir : opts.out_dir;
  write_dataset_csv(c, dir);
  std::printf("datasets written to %s\n", dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"particle-shooting continuous-depth networks"};
  app.require_subcommand(1);

  CommonOpts opts;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opts.config_path, "experiment config file")->required();
    sub->add_option("--out", opts.out_dir, "output directory override");
    sub->add_option("--seed", opts.seed, "run only this seed");
    sub->add_flag("--record-trajectory", opts.record_trajectory,
                  "write trajectory.csv alongside the run");
  };

  auto* fit = app.add_subcommand("fit", "train per seed and write run artifacts");
  add_common(fit);

  auto* eval = app.add_subcommand("eval", "re-integrate a run from its recorded theta log");
  add_common(eval);
  std::string run_dir;
  double eval_tol = 1e-10;
  eval->add_option("--run", run_dir, "run directory (with theta_t.csv and trajectory.csv)")
      ->required();
  eval->add_option("--tolerance", eval_tol, "maximum allowed deviation");

  auto* sweep = app.add_subcommand("sweep", "run a modes x alphas x seeds grid");
  add_common(sweep);

  auto* pc = app.add_subcommand("param-count", "print the learnable parameter count");
  std::string pc_mode = "dynamic_with_particles";
  std::size_t pc_d = 1, pc_alpha = 1;
  long long pc_k = -1, pc_blocks = -1;
  pc->add_option("--mode", pc_mode, "parameterization mode")->required();
  pc->add_option("--d", pc_d, "data dimension")->required();
  pc->add_option("--alpha", pc_alpha, "inflation factor")->required();
  pc->add_option("--particles", pc_k, "particle count (particle modes)");
  pc->add_option("--blocks", pc_blocks, "block count (dynamic_direct)");

  auto* gen = app.add_subcommand("gen-data", "export the task datasets as csv");
  add_common(gen);

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit->parsed()) return cmd_fit(opts);
    if (eval->parsed()) return cmd_eval(opts, run_dir, eval_tol);
    if (sweep->parsed()) return cmd_sweep(opts);
    if (pc->parsed()) return cmd_param_count(pc_mode, pc_d, pc_alpha, pc_k, pc_blocks);
    if (gen->parsed()) return cmd_gen_data(opts);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "numerical divergence: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
