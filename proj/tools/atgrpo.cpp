// SPDX-License-Identifier: Apache-2.0
// atgrpo: train, compare and audit tree-based GRPO runs.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "atgrpo/budget.hpp"
#include "atgrpo/config.hpp"
#include "atgrpo/experiment.hpp"
#include "atgrpo/remote_env.hpp"

namespace {

using namespace atgrpo;

struct Common {
  std::string config_path;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string out_dir = "out";
  std::optional<long> steps;
  std::string env_address;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key = value configuration file (defaults when omitted)");
  cmd->add_option("--seeds", c.seeds, "comma-separated run seeds")->delimiter(',');
  cmd->add_option("--out-dir", c.out_dir, "directory for JSONL and CSV reports");
  cmd->add_option("--steps", c.steps, "training steps (overrides the config)");
  cmd->add_option("--env", c.env_address, "remote user: tcp:host:port or stdio:command");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig config = c.config_path.empty() ? parse_config_string("") : load_config(c.config_path);
  if (c.steps) config.steps = *c.steps;
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tree-based group relative policy optimization against a simulated user"};
  app.require_subcommand(1);

  Common run_args;
  std::string method = "atgrpo";
  auto* run = app.add_subcommand("run", "train one method on every seed");
  add_common(run, run_args);
  run->add_option("--method", method, "atgrpo, chain_grpo or full_treerpo");

  Common cmp_args;
  auto* compare = app.add_subcommand("compare", "train all applicable methods on shared seeds");
  add_common(compare, cmp_args);

  std::string budget_out;
  bool observe = false;
  int budget_max_depth = 64;
  int budget_threads = 1;
  auto* budget = app.add_subcommand("budget", "predicted vs. bounded vs. observed tree budgets");
  budget->add_option("--out-dir", budget_out, "write budget.csv here instead of stdout");
  budget->add_flag("--observe", observe, "also build every tree and count interactions");
  budget->add_option("--max-depth", budget_max_depth, "largest L in the grid")->check(CLI::Range(1, 64));
  budget->add_option("--threads", budget_threads, "sampling threads when observing")->check(CLI::PositiveNumber);

  int instances = 100;
  std::uint64_t grad_seed = 0;
  auto* grad = app.add_subcommand("gradcheck", "analytic gradients vs. central differences");
  grad->add_option("--instances", instances, "random instances")->check(CLI::PositiveNumber);
  grad->add_option("--seed", grad_seed, "instance generator seed");

  std::string serve_config;
  int port = -1;
  auto* serve = app.add_subcommand("serve-env", "serve the configured user over the line protocol");
  serve->add_option("--config", serve_config, "configuration file (defaults when omitted)");
  serve->add_option("--port", port, "listen on 127.0.0.1:PORT (0 picks one); stdin/stdout when omitted")
      ->check(CLI::Range(0, 65535));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const ExperimentConfig config = resolve(run_args);
      const auto env = make_environment(config, run_args.env_address);
      const ExperimentResult r = run_experiment(config, parse_method(method), run_args.seeds, run_args.out_dir, *env);
      for (const auto& f : r.jsonl_files) std::cout << f.string() << '\n';
      std::cout << r.summary_csv.string() << '\n';
    } else if (*compare) {
      const ExperimentConfig config = resolve(cmp_args);
      const auto env = make_environment(config, cmp_args.env_address);
      const Comparison c = compare_methods(config, cmp_args.seeds, cmp_args.out_dir, *env, &std::cerr);
      std::cout << c.csv.string() << '\n';
    } else if (*budget) {
      BudgetGrid grid;
      grid.max_depth = budget_max_depth;
      const auto rows = budget_table(grid, observe, budget_threads);
      if (budget_out.empty()) {
        write_budget_csv(std::cout, rows);
      } else {
        std::filesystem::create_directories(budget_out);
        const auto path = std::filesystem::path(budget_out) / "budget.csv";
        std::ofstream out(path);
        write_budget_csv(out, rows);
        if (!out.flush()) throw std::runtime_error("failed writing " + path.string());
        std::cout << path.string() << '\n';
      }
      std::cerr << "W=8 w=2 gamma=2 L=10: observation nodes " << predicted_budget(8, 2, 2.0, 10)
                << ", deepest-layer nodes " << leaf_budget(8, 2, 2.0, 10) << '\n';
    } else if (*grad) {
      const GradcheckReport r = gradcheck(instances, grad_seed);
      const bool ok = r.log_prob_max_rel_error <= 1e-5 && r.objective_max_rel_error <= 1e-4;
      std::cout << "instances " << r.instances << "\n"
                << "log_prob_grad max relative error " << r.log_prob_max_rel_error << " (limit 1e-5)\n"
                << "group_objective_grad max relative error " << r.objective_max_rel_error << " (limit 1e-4)\n"
                << (ok ? "ok" : "FAILED") << '\n';
      return ok ? 0 : 1;
    } else if (*serve) {
      const ExperimentConfig config = serve_config.empty() ? parse_config_string("") : load_config(serve_config);
      const auto env = make_environment(config);
      if (port < 0) {
        serve_environment(*env, std::cin, std::cout);
      } else {
        serve_tcp(*env, static_cast<unsigned short>(port), 1,
                  [](unsigned short p) { std::cerr << "listening on 127.0.0.1:" << p << std::endl; });
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "atgrpo: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
