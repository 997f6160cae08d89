// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "atgrpo/types.hpp"

namespace atgrpo {

/// Linear-softmax policy: pi(a | x) = softmax(W x)_a, W of shape (num_actions x feature_length).
struct PolicyParams {
  Eigen::MatrixXd weights;
  std::uint64_t version = 0;

  PolicyParams() = default;
  PolicyParams(int num_actions, int feature_length)
      : weights(Eigen::MatrixXd::Zero(num_actions, feature_length)) {}

  int num_actions() const { return static_cast<int>(weights.rows()); }
  int feature_length() const { return static_cast<int>(weights.cols()); }
};

/// Immutable, shareable copy of a parameter set (pi_old, pi_ref).
using PolicySnapshot = std::shared_ptr<const PolicyParams>;

PolicySnapshot snapshot(const PolicyParams& params);

std::vector<double> action_distribution(const PolicyParams& params, std::span<const double> features);

/// Allocation-free variant for the rollout hot path. `probs.size()` must equal num_actions.
void fill_distribution(const PolicyParams& params, std::span<const double> features,
                       std::span<double> probs);

double log_prob(const PolicyParams& params, std::span<const double> features, ActionId action);

/// d log pi(action | x) / dW = (onehot(action) - pi) x^T.
Eigen::MatrixXd log_prob_grad(const PolicyParams& params, std::span<const double> features,
                              ActionId action);

/// Floor applied to reference probabilities inside the KL logarithm.
inline constexpr double kKlProbabilityFloor = 1e-12;

struct KlResult {
  double value = 0.0;
  bool clamped = false;  // some reference probability fell below kKlProbabilityFloor
};

/// Exact KL(pi_theta || pi_ref) over the discrete action set at context x.
KlResult kl_divergence(const PolicyParams& params, const PolicyParams& ref,
                       std::span<const double> features);

/// Gradient of kl_divergence with respect to params.weights.
Eigen::MatrixXd kl_grad(const PolicyParams& params, const PolicyParams& ref,
                        std::span<const double> features);

/// Greedy action; ties go to the lowest index.
ActionId argmax_action(const PolicyParams& params, std::span<const double> features);

/// Inverse-CDF sample from the distribution using one uniform draw in [0, 1).
ActionId sample_from(std::span<const double> probs, double u);

/// Gradient ascent: weights += learning_rate * grad; bumps the version.
void apply_gradient(PolicyParams& params, const Eigen::MatrixXd& grad, double learning_rate);

// Parameter files.
//
// Text:   "atgrpo-policy <num_actions> <feature_length> <version>\n" then one row
//         per action, entries in round-trip decimal.
// Binary: magic "ATGP", u32 num_actions, u32 feature_length, u64 version, then
//         num_actions * feature_length IEEE-754 doubles, row-major. All little-endian.
void save_policy_text(const PolicyParams& params, std::ostream& out);
PolicyParams load_policy_text(std::istream& in);
void save_policy_binary(const PolicyParams& params, std::ostream& out);
PolicyParams load_policy_binary(std::istream& in);

}  // namespace atgrpo
