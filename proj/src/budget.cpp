// SPDX-License-Identifier: Apache-2.0
#include "atgrpo/budget.hpp"

#include <cmath>
#include <numeric>
#include <set>

#include "atgrpo/errors.hpp"
#include "atgrpo/trainer.hpp"

namespace atgrpo {
namespace {

std::uint64_t ipow(std::uint64_t base, int exp) {
  std::uint64_t r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

void check_sizes(int group_size, int width, int max_depth) {
  if (group_size < 1) throw DomainError("group size must be >= 1");
  if (width < 1) throw DomainError("width must be >= 1");
  if (max_depth < 1) throw DomainError("max depth must be >= 1");
}

}  // namespace

std::uint64_t predicted_budget(int group_size, int width, double gamma, int max_depth) {
  check_sizes(group_size, width, max_depth);
  std::uint64_t total = 0;
  for (int i = 1; i <= max_depth; ++i) {
    const int l = observation_length(i, max_depth, gamma);
    std::uint64_t layer = 0;
    for (int t = 1; t <= l; ++t) layer += ipow(static_cast<std::uint64_t>(width), t);
    total += static_cast<std::uint64_t>(group_size) * layer;
  }
  return total;
}

std::uint64_t leaf_budget(int group_size, int width, double gamma, int max_depth) {
  check_sizes(group_size, width, max_depth);
  std::uint64_t total = 0;
  for (int i = 1; i <= max_depth; ++i) {
    total += static_cast<std::uint64_t>(group_size) *
             ipow(static_cast<std::uint64_t>(width), observation_length(i, max_depth, gamma));
  }
  return total;
}

double budget_bound(int group_size, int width, double gamma, int max_depth) {
  if (width < 2) throw DomainError("budget_bound: w must be >= 2 (w / (w - 1) is undefined at w = 1)");
  check_sizes(group_size, width, max_depth);
  const double w = width;
  const double b = w / (w - 1.0);
  return b * std::sqrt(w) * group_size * std::pow(static_cast<double>(max_depth), budget_exponent(width, gamma));
}

double budget_exponent(int width, double gamma) {
  return 1.0 + gamma * std::log(static_cast<double>(width));
}

std::uint64_t chain_budget(int group_size, int max_depth) {
  check_sizes(group_size, 1, max_depth);
  return static_cast<std::uint64_t>(group_size) * static_cast<std::uint64_t>(max_depth);
}

std::uint64_t full_tree_budget(int group_size, int max_depth) {
  check_sizes(group_size, 1, max_depth);
  std::uint64_t total = 0;
  for (int t = 1; t <= max_depth; ++t) total += ipow(static_cast<std::uint64_t>(group_size), t);
  return total;
}

double scaling_fit(std::span<const std::pair<double, double>> points) {
  if (points.size() < 4) throw DomainError("scaling_fit needs at least 4 points");
  std::set<double> distinct;
  for (const auto& [l, s] : points) {
    if (!(l > 0.0) || !(s > 0.0)) throw DomainError("scaling_fit needs positive L and S");
    distinct.insert(l);
  }
  if (distinct.size() != points.size()) throw DomainError("scaling_fit needs distinct L values");
  const auto n = static_cast<double>(points.size());
  double mx = 0.0;
  double my = 0.0;
  for (const auto& [l, s] : points) {
    mx += std::log(l);
    my += std::log(s);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  for (const auto& [l, s] : points) {
    const double dx = std::log(l) - mx;
    sxy += dx * (std::log(s) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

DialogueMetrics avg_metrics(std::span<const std::vector<double>> episodes) {
  if (episodes.empty()) throw DomainError("avg_metrics needs at least one episode");
  DialogueMetrics m;
  for (const auto& ep : episodes) {
    m.avg_r += std::accumulate(ep.begin(), ep.end(), 0.0);
    m.avg_l += static_cast<double>(ep.size());
  }
  m.avg_r /= static_cast<double>(episodes.size());
  m.avg_l /= static_cast<double>(episodes.size());
  return m;
}

}  // namespace atgrpo
