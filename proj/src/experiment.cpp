// SPDX-License-Identifier: Apache-2.0
#include "atgrpo/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

#include "atgrpo/baselines.hpp"
#include "atgrpo/budget.hpp"
#include "atgrpo/errors.hpp"

namespace atgrpo {
namespace fs = std::filesystem;

const char* method_name(Method m) {
  switch (m) {
    case Method::atgrpo: return "atgrpo";
    case Method::chain_grpo: return "chain_grpo";
    case Method::full_treerpo: return "full_treerpo";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "atgrpo") return Method::atgrpo;
  if (name == "chain_grpo") return Method::chain_grpo;
  if (name == "full_treerpo") return Method::full_treerpo;
  throw ConfigError("method", "unknown method '" + name + "' (atgrpo, chain_grpo, full_treerpo)");
}

StepFunction make_step_function(Method m, const UserEnvironment& env, const Hyperparams& hparams,
                                const TrainOptions& options) {
  const auto* e = &env;
  switch (m) {
    case Method::atgrpo:
      return [e, hparams, options](PolicyParams& live, const PolicyParams& ref, long step) {
        return train_step(live, *e, hparams, ref, step, options);
      };
    case Method::chain_grpo:
      return [e, hparams, options](PolicyParams& live, const PolicyParams& ref, long step) {
        return chain_grpo_step(live, *e, hparams, ref, step, options);
      };
    case Method::full_treerpo:
      return [e, hparams, options](PolicyParams& live, const PolicyParams& ref, long step) {
        return full_treerpo_step(live, *e, hparams, ref, step, options);
      };
  }
  throw InternalError("make_step_function: bad method");
}

std::uint64_t nominal_budget(Method m, const Hyperparams& hp) {
  switch (m) {
    case Method::atgrpo: return predicted_budget(hp.group_size, hp.adaptive_width, hp.gamma, hp.max_depth);
    case Method::chain_grpo: return chain_budget(hp.group_size, hp.max_depth);
    case Method::full_treerpo: return full_tree_budget(hp.group_size, hp.max_depth);
  }
  throw InternalError("nominal_budget: bad method");
}

RunReport run_seed(const ExperimentConfig& config, Method m, std::uint64_t seed, const UserEnvironment& env) {
  config.validate();
  Hyperparams hp = config.hparams;
  hp.rng_seed = seed;
  return train_run(initial_policy(env), env, hp, config.steps, config.train,
                   make_step_function(m, env, hp, config.train));
}

Quartiles quartiles(std::vector<double> values) {
  if (values.empty()) throw DomainError("quartiles: empty input");
  std::sort(values.begin(), values.end());
  const auto at = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return frac == 0.0 ? values[lo] : values[lo] + frac * (values[hi] - values[lo]);
  };
  return {at(0.25), at(0.5), at(0.75)};
}

std::vector<CurvePoint> aggregate_curve(std::span<const std::vector<StepMetrics>> runs) {
  std::vector<CurvePoint> out;
  if (runs.empty()) return out;
  for (std::size_t k = 0; k < runs.front().size(); ++k) {
    std::vector<double> r, l;
    const long step = runs.front()[k].step;
    bool complete = true;
    for (const auto& run : runs) {
      if (k >= run.size() || run[k].step != step || !run[k].avg_reward || !run[k].avg_length) {
        complete = false;
        break;
      }
      r.push_back(*run[k].avg_reward);
      l.push_back(*run[k].avg_length);
    }
    if (!complete) continue;
    out.push_back({step, runs.size(), quartiles(std::move(r)), quartiles(std::move(l))});
  }
  return out;
}

void write_jsonl(std::ostream& out, std::span<const StepMetrics> records) {
  for (const StepMetrics& m : records) out << to_jsonl(m) << '\n';
}

std::vector<StepMetrics> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("metrics", "cannot open " + path.string());
  std::vector<StepMetrics> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(step_metrics_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

void write_curve_csv(std::ostream& out, std::span<const CurvePoint> curve) {
  out << "step,seeds,avg_r_median,avg_r_q1,avg_r_q3,avg_L_median,avg_L_q1,avg_L_q3\n";
  for (const CurvePoint& p : curve) {
    out << p.step << ',' << p.runs << ',' << format_number(p.avg_r.median) << ','
        << format_number(p.avg_r.q1) << ',' << format_number(p.avg_r.q3) << ','
        << format_number(p.avg_l.median) << ',' << format_number(p.avg_l.q1) << ','
        << format_number(p.avg_l.q3) << '\n';
  }
}

namespace {

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("out_dir", "cannot write " + path.string());
  return out;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, Method m, std::span<const std::uint64_t> seeds,
                                const fs::path& out_dir, const UserEnvironment& env) {
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  fs::create_directories(out_dir);
  ExperimentResult result;
  result.method = m;
  result.seeds.assign(seeds.begin(), seeds.end());
  for (std::uint64_t seed : seeds) {
    RunReport report = run_seed(config, m, seed, env);
    const fs::path file = out_dir / (std::string(method_name(m)) + "_seed" + std::to_string(seed) + ".jsonl");
    std::ofstream out = open_output(file);
    write_jsonl(out, report.steps);
    if (!out.flush()) throw ConfigError("out_dir", "failed writing " + file.string());
    result.jsonl_files.push_back(file);
    result.runs.push_back(std::move(report.steps));
  }
  result.curve = aggregate_curve(result.runs);
  result.summary_csv = out_dir / (std::string(method_name(m)) + "_summary.csv");
  std::ofstream csv = open_output(result.summary_csv);
  write_curve_csv(csv, result.curve);
  if (!csv.flush()) throw ConfigError("out_dir", "failed writing " + result.summary_csv.string());
  return result;
}

Comparison compare_methods(const ExperimentConfig& config, std::span<const std::uint64_t> seeds,
                           const fs::path& out_dir, const UserEnvironment& env, std::ostream* log) {
  Comparison cmp;
  std::vector<Method> methods{Method::atgrpo, Method::chain_grpo};
  if (config.hparams.max_depth <= 4) {
    methods.push_back(Method::full_treerpo);
  } else {
    cmp.skipped.push_back("full_treerpo: L = " + std::to_string(config.hparams.max_depth) +
                          " > 4, a full tree would need " +
                          std::to_string(full_tree_budget(config.hparams.group_size, config.hparams.max_depth)) +
                          " interactions per step");
    if (log) *log << "skipping " << cmp.skipped.back() << '\n';
  }
  for (Method m : methods) {
    if (log) *log << "running " << method_name(m) << " on " << seeds.size() << " seed(s)\n";
    cmp.results.push_back(run_experiment(config, m, seeds, out_dir, env));
  }

  cmp.csv = out_dir / "comparison.csv";
  std::ofstream out = open_output(cmp.csv);
  out << "method,seeds,final_step,avg_r_median,avg_r_q1,avg_r_q3,avg_L_median,avg_L_q1,avg_L_q3,"
         "first_action_median,nominal_budget,observed_budget_median\n";
  for (const ExperimentResult& r : cmp.results) {
    const CurvePoint& last = r.curve.back();
    std::vector<double> first, budget;
    for (const auto& run : r.runs) {
      first.push_back(static_cast<double>(run.back().greedy_first_action.value_or(-1)));
      for (const StepMetrics& m : run) budget.push_back(static_cast<double>(m.budget));
    }
    out << method_name(r.method) << ',' << r.seeds.size() << ',' << last.step << ','
        << format_number(last.avg_r.median) << ',' << format_number(last.avg_r.q1) << ','
        << format_number(last.avg_r.q3) << ',' << format_number(last.avg_l.median) << ','
        << format_number(last.avg_l.q1) << ',' << format_number(last.avg_l.q3) << ','
        << format_number(quartiles(first).median) << ',' << nominal_budget(r.method, config.hparams) << ','
        << format_number(quartiles(budget).median) << '\n';
  }
  if (!out.flush()) throw ConfigError("out_dir", "failed writing " + cmp.csv.string());
  return cmp;
}

std::uint64_t observed_budget(int group_size, int width, double gamma, int max_depth, int threads) {
  Hyperparams hp;
  hp.group_size = group_size;
  hp.adaptive_width = width;
  hp.gamma = gamma;
  hp.max_depth = max_depth;
  hp.threshold_lambda = 0.0;
  // The budget grid includes w > W, which training configurations reject.
  if (group_size < 2 || width < 2 || !(gamma > 0.0) || max_depth < 1) {
    throw DomainError("observed_budget: need W >= 2, w >= 2, gamma > 0, L >= 1");
  }
  const TopicUser env(non_terminating_config(), 0.0);
  const RolloutSampler sampler(snapshot(initial_policy(env)), env, max_depth, 0, threads);
  SplitMix64 select_rng(0x0b5e7edULL);
  const TreeBuild build = build_tree(identical_contexts(env, group_size, 0), sampler, hp, 0x0b5e7edULL,
                                     select_rng, adaptive_schedule(max_depth, gamma));
  return build.tree.observation_created() + build.tree.observation_reused();
}

std::vector<BudgetRow> budget_table(const BudgetGrid& grid, bool observe, int threads) {
  std::vector<BudgetRow> rows;
  for (int W : grid.group_sizes) {
    for (int w : grid.widths) {
      for (double g : grid.gammas) {
        std::vector<std::pair<double, double>> points;
        for (int L : {8, 16, 32, 64}) {
          points.emplace_back(L, static_cast<double>(predicted_budget(W, w, g, L)));
        }
        const double slope = scaling_fit(points);
        const std::size_t first = rows.size();
        for (int L = grid.min_depth; L <= grid.max_depth; ++L) {
          rows.push_back({W, w, g, L, predicted_budget(W, w, g, L), budget_bound(W, w, g, L), std::nullopt, slope});
        }
        // Largest tree first, so later trees reuse its arena.
        if (observe) {
          for (std::size_t k = rows.size(); k-- > first;) {
            rows[k].observed = observed_budget(W, w, g, rows[k].max_depth, threads);
          }
        }
      }
    }
  }
  return rows;
}

void write_budget_csv(std::ostream& out, std::span<const BudgetRow> rows) {
  out << "method,W,w,gamma,L,predicted,bound,observed,slope\n";
  for (const BudgetRow& r : rows) {
    out << "atgrpo," << r.group_size << ',' << r.width << ',' << format_number(r.gamma) << ','
        << r.max_depth << ',' << r.predicted << ',' << format_number(r.bound) << ',';
    if (r.observed) out << *r.observed;
    out << ',' << format_number(r.slope) << '\n';
  }
}

namespace {

double rel_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-8});
  return (analytic - numeric).norm() / scale;
}

template <class F>
Eigen::MatrixXd central_difference(const PolicyParams& at, F&& f, double h) {
  Eigen::MatrixXd g(at.weights.rows(), at.weights.cols());
  PolicyParams p = at;
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      const double w0 = p.weights(r, c);
      p.weights(r, c) = w0 + h;
      const double up = f(p);
      p.weights(r, c) = w0 - h;
      const double down = f(p);
      p.weights(r, c) = w0;
      g(r, c) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

PolicyParams random_policy(int actions, int features, SplitMix64& rng, double scale) {
  PolicyParams p(actions, features);
  for (Eigen::Index k = 0; k < p.weights.size(); ++k) p.weights.data()[k] = scale * (2.0 * rng.uniform() - 1.0);
  return p;
}

bool near_clip_boundary(const GroupBatch& b, const PolicyParams& live, const PolicyParams& old, double eps) {
  for (std::size_t j = 0; j < b.nodes.size(); ++j) {
    const double rho = std::exp(log_prob(live, b.contexts[j], b.actions[j]) - log_prob(old, b.contexts[j], b.actions[j]));
    if (std::abs(rho - (1.0 - eps)) < 1e-4 || std::abs(rho - (1.0 + eps)) < 1e-4) return true;
  }
  return false;
}

}  // namespace

GradcheckReport gradcheck(int instances, std::uint64_t seed) {
  if (instances < 1) throw ConfigError("instances", "must be >= 1");
  GradcheckReport report;
  report.instances = instances;
  SplitMix64 rng(seed);
  constexpr double h = 1e-6;
  for (int k = 0; k < instances; ++k) {
    const int actions = 2 + static_cast<int>(rng.below(4));
    const int features = 2 + static_cast<int>(rng.below(6));
    const PolicyParams live = random_policy(actions, features, rng, 1.0);

    std::vector<double> x(static_cast<std::size_t>(features));
    for (double& v : x) v = 2.0 * rng.uniform() - 1.0;
    const ActionId a = static_cast<ActionId>(rng.below(static_cast<std::uint64_t>(actions)));
    const Eigen::MatrixXd lp_fd =
        central_difference(live, [&](const PolicyParams& p) { return log_prob(p, x, a); }, h);
    report.log_prob_max_rel_error =
        std::max(report.log_prob_max_rel_error, rel_error(log_prob_grad(live, x, a), lp_fd));

    const double eps = 0.2;
    const double beta = 0.01 + 0.1 * rng.uniform();
    PolicyParams old, ref;
    GroupBatch batch;
    do {
      old = live;
      PolicyParams noise = random_policy(actions, features, rng, 0.3);
      old.weights += noise.weights;
      ref = random_policy(actions, features, rng, 1.0);
      const int members = 2 + static_cast<int>(rng.below(7));
      batch = GroupBatch{};
      std::vector<double> raw;
      for (int j = 0; j < members; ++j) {
        std::vector<double> c(static_cast<std::size_t>(features));
        for (double& v : c) v = 2.0 * rng.uniform() - 1.0;
        batch.nodes.push_back(static_cast<NodeId>(j));
        batch.contexts.push_back(std::move(c));
        batch.actions.push_back(static_cast<ActionId>(rng.below(static_cast<std::uint64_t>(actions))));
        raw.push_back(rng.uniform());
      }
      batch.advantages = group_advantages(raw);
    } while (near_clip_boundary(batch, live, old, eps));

    const Eigen::MatrixXd obj_fd = central_difference(
        live, [&](const PolicyParams& p) { return group_objective(batch, p, old, ref, eps, beta); }, h);
    report.objective_max_rel_error =
        std::max(report.objective_max_rel_error,
                 rel_error(group_objective_grad(batch, live, old, ref, eps, beta), obj_fd));
  }
  return report;
}

}  // namespace atgrpo
