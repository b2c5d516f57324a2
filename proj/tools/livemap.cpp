#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "livemap/error.hpp"
#include "livemap/experiment.hpp"

namespace ex = livemap::experiment;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> policies;
  std::optional<double> beta;
  std::optional<int> vehicles;
  std::optional<std::int64_t> steps;
  std::optional<std::string> trace;
  std::optional<std::string> checkpoint;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON experiment config; defaults fill missing keys");
  cmd->add_option("--seed", o.seed, "master seed for scenario, network and agent");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--policy", o.policies, "policies to run: head, eo, lp, ro, rm")->delimiter(',');
  cmd->add_option("--beta", o.beta, "coverage requirement in [0, 1]");
  cmd->add_option("--vehicles", o.vehicles, "number of vehicles in the scenario");
}

ex::ExperimentConfig resolve(const Overrides& o) {
  ex::ExperimentConfig cfg = o.config.empty() ? ex::ExperimentConfig::from_json("{}") : ex::ExperimentConfig::load(o.config);
  if (o.seed) cfg.apply_seed(*o.seed);
  if (o.out) cfg.out_dir = *o.out;
  if (!o.policies.empty()) cfg.policies = o.policies;
  if (o.beta) cfg.scheduler.beta = *o.beta;
  if (o.vehicles) {
    cfg.scenario.n_vehicles = *o.vehicles;
    cfg.train_vehicle_counts.clear();
  }
  if (o.steps) {
    cfg.train_steps = *o.steps;
    cfg.epsilon.steps = *o.steps;
  }
  if (o.trace) cfg.trace_path = *o.trace;
  if (o.checkpoint) cfg.checkpoint_dir = *o.checkpoint;
  cfg.validate();
  return cfg;
}

void say(const std::string& s) { std::cerr << s << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"livemap: dynamic map data plane and offloading control experiments"};
  app.require_subcommand(1);
  Overrides o;

  auto* gen = app.add_subcommand("gen-traces", "generate a synthetic scenario trace");
  add_common(gen, o);

  auto* train = app.add_subcommand("train", "train the offloading agent inside the simulator");
  add_common(train, o);
  train->add_option("--steps", o.steps, "training decisions");
  train->add_option("--trace", o.trace, "train on this trace instead of generated ones");
  train->add_option("--checkpoint", o.checkpoint, "checkpoint directory (default <out>/checkpoint)");

  auto* eval = app.add_subcommand("eval", "run policies on identical traces and export metrics");
  add_common(eval, o);
  eval->add_option("--trace", o.trace, "evaluate on this trace");
  eval->add_option("--checkpoint", o.checkpoint, "trained agent for head");

  std::vector<std::string> runs;
  auto* cmp = app.add_subcommand("compare", "tabulate latency of finished runs");
  cmp->add_option("runs", runs, "run directories (or parents of run directories)")->required();
  cmp->add_option("--out", o.out, "write comparison.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*gen) {
      ex::cmd_gen_traces(resolve(o));
    } else if (*train) {
      ex::cmd_train(resolve(o), say);
    } else if (*eval) {
      ex::cmd_eval(resolve(o), say);
    } else if (*cmp) {
      std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
      std::optional<std::filesystem::path> out;
      if (o.out) out = *o.out;
      const auto rows = ex::cmd_compare(dirs, out);
      std::printf("%-28s %8s %12s %12s %12s %12s\n", "run", "tasks", "mean_ms", "p50_ms", "p95_ms", "vs_first");
      for (const auto& r : rows)
        std::printf("%-28s %8zu %12.3f %12.3f %12.3f %11.2f%%\n", r.run.c_str(), r.tasks, r.mean_ms, r.p50_ms,
                    r.p95_ms, 100.0 * r.reduction_vs_first);
    }
  } catch (const livemap::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == livemap::ErrorKind::kConfig ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
