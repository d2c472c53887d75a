// fpr: command-line driver for predict-and-repair experiments.
//
//   fpr run --config configs/search-6v10.cfg --seed 3 --out out/s3
//   fpr stress out/s3
//   fpr convergence out/s3
//   fpr gradcheck --env all

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "fpr/harness/config.hpp"
#include "fpr/harness/experiment.hpp"
#include "fpr/harness/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace fpr::harness;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
  std::optional<std::string> method;
  std::vector<std::string> sets;

  void add_to(CLI::App* app, bool with_config) {
    if (with_config) app->add_option("--config", config, "Config file (key = value)");
    app->add_option("--seed", seed, "Master seed");
    app->add_option("--workers", workers, "Worker threads");
    app->add_option("--set", sets, "Override one key, e.g. --set env.n_seek=6");
  }

  KeyValues apply(KeyValues kv) const {
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
      kv.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) kv.set("seed", std::to_string(*seed));
    if (out) kv.set("out", *out);
    if (workers) kv.set("workers", std::to_string(*workers));
    if (method) kv.set("method", *method);
    return kv;
  }
};

KeyValues load_or_empty(const std::string& path) {
  return path.empty() ? KeyValues{} : KeyValues::load(path);
}

void print_stress(const StressReport& r) {
  std::printf("test    n=%zu p50=%.6g p90=%.6g p99=%.6g max=%.6g\n", r.test.size(),
              r.test_quantiles.p50, r.test_quantiles.p90, r.test_quantiles.p99,
              r.test_quantiles.max);
  if (!r.predicted.empty()) {
    std::printf("predicted n=%zu max=%.6g (%s the test p99)\n", r.predicted.size(),
                r.predicted_quantiles.max,
                r.predicted_quantiles.max >= r.test_quantiles.p99 ? "at or above" : "below");
  }
}

int cmd_gradcheck(const std::string& which, std::size_t samples, std::uint64_t seed, int workers) {
  const std::vector<std::string> envs =
      which == "all" ? std::vector<std::string>{"search", "formation", "powergrid"}
                     : std::vector<std::string>{which};
  bool ok = true;
  for (const std::string& name : envs) {
    const ExperimentConfig c = defaults_for(name);
    const auto env = make_environment(c);
    GradCheckOptions o;
    o.samples = samples;
    o.seed = seed;
    o.workers = workers;
    o.tolerance = name == "powergrid" ? 1e-3 : 1e-4;
    const GradCheckReport r = gradient_check(*env, o);
    std::printf("%-10s checked=%zu skipped=%zu worst_rel_error=%.3e tolerance=%.0e %s\n",
                name.c_str(), r.checked.size(), r.skipped, r.worst, r.tolerance,
                r.passed() ? "PASS" : "FAIL");
    ok = ok && r.passed();
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Failure prediction and repair for simulated autonomous systems"};
  app.require_subcommand(1);

  Overrides run_o;
  auto* run = app.add_subcommand("run", "Run a method and write its artifacts");
  run_o.add_to(run, true);
  run->add_option("--out", run_o.out, "Output directory");
  run->add_option("--method", run_o.method, "ours-mala | ours-rmh | dr | gd")
      ->check(CLI::IsMember({"ours-mala", "ours-rmh", "dr", "gd"}));
  bool run_stress_after = false, run_convergence_after = false;
  run->add_flag("--stress", run_stress_after, "Stress-test the final design afterwards");
  run->add_flag("--convergence", run_convergence_after, "Append the test_cost column afterwards");

  Overrides stress_o;
  std::string stress_dir;
  std::optional<std::size_t> n_test;
  auto* stress = app.add_subcommand("stress", "Stress-test the design of a finished run");
  stress->add_option("run_dir", stress_dir, "Directory written by `fpr run`")->required();
  stress->add_option("--n-test", n_test, "Number of prior samples");
  stress_o.add_to(stress, false);

  Overrides conv_o;
  std::string conv_dir;
  auto* conv = app.add_subcommand("convergence", "Evaluate each round's best design on a fixed test set");
  conv->add_option("run_dir", conv_dir, "Directory written by `fpr run`")->required();
  conv_o.add_to(conv, false);

  std::string gc_env = "all";
  std::size_t gc_samples = 100;
  std::uint64_t gc_seed = 0;
  int gc_workers = 1;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks of the cost gradients");
  gc->add_option("--env", gc_env, "search | formation | powergrid | all")
      ->check(CLI::IsMember({"search", "formation", "powergrid", "all"}));
  gc->add_option("--samples", gc_samples, "Prior draws per environment");
  gc->add_option("--seed", gc_seed, "Seed");
  gc->add_option("--workers", gc_workers, "Worker threads");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const ExperimentConfig c = build_config(run_o.apply(load_or_empty(run_o.config)));
      run_experiment(c);
      std::printf("wrote %s\n", c.out_dir.c_str());
      if (run_stress_after) print_stress(run_stress(c.out_dir, c));
      if (run_convergence_after) run_convergence(c.out_dir, c);
      return 0;
    }
    if (stress->parsed()) {
      KeyValues kv = stress_o.apply(KeyValues::load(fs::path(stress_dir) / "config.txt"));
      if (n_test) kv.set("n_test", std::to_string(*n_test));
      const ExperimentConfig c = build_config(kv);
      print_stress(run_stress(stress_dir, c));
      return 0;
    }
    if (conv->parsed()) {
      const ExperimentConfig c =
          build_config(conv_o.apply(KeyValues::load(fs::path(conv_dir) / "config.txt")));
      const auto costs = run_convergence(conv_dir, c);
      std::printf("final test cost %.6g over %zu rounds\n", costs.empty() ? 0.0 : costs.back(),
                  costs.size());
      return 0;
    }
    if (gc->parsed()) return cmd_gradcheck(gc_env, gc_samples, gc_seed, gc_workers);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
