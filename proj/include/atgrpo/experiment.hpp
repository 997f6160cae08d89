// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atgrpo/config.hpp"
#include "atgrpo/metrics.hpp"
#include "atgrpo/trainer.hpp"

namespace atgrpo {

enum class Method { atgrpo, chain_grpo, full_treerpo };

const char* method_name(Method m);
/// Throws ConfigError("method", ...) for anything but atgrpo, chain_grpo, full_treerpo.
Method parse_method(const std::string& name);

StepFunction make_step_function(Method m, const UserEnvironment& env, const Hyperparams& hparams,
                                const TrainOptions& options);

/// Interactions per tree when no dialogue terminates: the observation budget for
/// AT-GRPO, W * L for chain GRPO, sum_t W^t for the full tree.
std::uint64_t nominal_budget(Method m, const Hyperparams& hparams);

/// One seeded training run. The seed replaces hparams.rng_seed.
RunReport run_seed(const ExperimentConfig& config, Method m, std::uint64_t seed, const UserEnvironment& env);

struct Quartiles {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
};

/// Quantiles with linear interpolation between order statistics. Throws on empty input.
Quartiles quartiles(std::vector<double> values);

/// Per-step statistics across seeds, for steps where every run was evaluated.
struct CurvePoint {
  long step = 0;
  std::size_t runs = 0;
  Quartiles avg_r;
  Quartiles avg_l;
};

std::vector<CurvePoint> aggregate_curve(std::span<const std::vector<StepMetrics>> runs);

void write_jsonl(std::ostream& out, std::span<const StepMetrics> records);
std::vector<StepMetrics> read_jsonl(const std::filesystem::path& path);

/// Columns: step, seeds, avg_r_median, avg_r_q1, avg_r_q3, avg_L_median, avg_L_q1, avg_L_q3.
void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve);

struct ExperimentResult {
  Method method = Method::atgrpo;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<StepMetrics>> runs;  // one per seed, in seed order
  std::vector<CurvePoint> curve;
  std::vector<std::filesystem::path> jsonl_files;  // <method>_seed<s>.jsonl
  std::filesystem::path summary_csv;               // <method>_summary.csv
};

/// Trains one run per seed, writes each run's metrics JSONL and the aggregate CSV.
ExperimentResult run_experiment(const ExperimentConfig& config, Method m, std::span<const std::uint64_t> seeds,
                                const std::filesystem::path& out_dir, const UserEnvironment& env);

struct Comparison {
  std::vector<ExperimentResult> results;
  std::vector<std::string> skipped;  // "<method>: <reason>"
  std::filesystem::path csv;         // comparison.csv
};

/// atgrpo, chain_grpo and, when L <= 4, full_treerpo under the same seeds.
/// comparison.csv has one row per method: seeds, final_step, final quartiles of
/// avg_r and avg_L, median greedy first action, nominal_budget, median observed budget.
Comparison compare_methods(const ExperimentConfig& config, std::span<const std::uint64_t> seeds,
                           const std::filesystem::path& out_dir, const UserEnvironment& env,
                           std::ostream* log = nullptr);

/// Interactions actually spent on observation subtrees (created plus reused
/// nodes) when building one AT-GRPO tree against a user that never terminates.
std::uint64_t observed_budget(int group_size, int width, double gamma, int max_depth, int threads = 1);

struct BudgetRow {
  int group_size = 0;
  int width = 0;
  double gamma = 0.0;
  int max_depth = 0;
  std::uint64_t predicted = 0;
  double bound = 0.0;
  std::optional<std::uint64_t> observed;
  double slope = 0.0;  // ln-ln fit of predicted over L in {8, 16, 32, 64}
};

struct BudgetGrid {
  std::vector<int> group_sizes{2, 4, 8};
  std::vector<int> widths{2, 3};
  std::vector<double> gammas{0.5, 1.0, 2.0};
  int min_depth = 1;
  int max_depth = 64;
};

std::vector<BudgetRow> budget_table(const BudgetGrid& grid, bool observe, int threads = 1);

/// Columns: method, W, w, gamma, L, predicted, bound, observed, slope.
void write_budget_csv(std::ostream& out, std::span<const BudgetRow> rows);

struct GradcheckReport {
  int instances = 0;
  double log_prob_max_rel_error = 0.0;
  double objective_max_rel_error = 0.0;
};

/// Compares analytic gradients with central differences on random policies and groups.
GradcheckReport gradcheck(int instances, std::uint64_t seed);

}  // namespace atgrpo
