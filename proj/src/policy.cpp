// SPDX-License-Identifier: Apache-2.0
#include "atgrpo/policy.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "atgrpo/errors.hpp"

namespace atgrpo {
namespace {

void check_features(const PolicyParams& params, std::span<const double> features) {
  if (static_cast<Eigen::Index>(features.size()) != params.weights.cols()) {
    throw DomainError("feature length " + std::to_string(features.size()) +
                      " does not match policy width " + std::to_string(params.weights.cols()));
  }
}

void check_action(const PolicyParams& params, ActionId action) {
  if (action < 0 || action >= params.num_actions()) {
    throw DomainError("invalid action " + std::to_string(action));
  }
}

Eigen::Map<const Eigen::VectorXd> as_vector(std::span<const double> v) {
  return {v.data(), static_cast<Eigen::Index>(v.size())};
}

/// Stable log-softmax of W x.
Eigen::VectorXd log_softmax(const PolicyParams& params, std::span<const double> features) {
  check_features(params, features);
  Eigen::VectorXd z = params.weights * as_vector(features);
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

template <typename T>
void write_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T read_le(std::istream& in) {
  std::array<char, sizeof(T)> bytes;
  if (!in.read(bytes.data(), bytes.size())) throw DomainError("truncated policy file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

constexpr char kMagic[4] = {'A', 'T', 'G', 'P'};

}  // namespace

PolicySnapshot snapshot(const PolicyParams& params) {
  return std::make_shared<const PolicyParams>(params);
}

std::vector<double> action_distribution(const PolicyParams& params, std::span<const double> features) {
  std::vector<double> probs(static_cast<std::size_t>(params.num_actions()));
  fill_distribution(params, features, probs);
  return probs;
}

void fill_distribution(const PolicyParams& params, std::span<const double> features,
                       std::span<double> probs) {
  check_features(params, features);
  const auto rows = params.weights.rows();
  const auto cols = params.weights.cols();
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index a = 0; a < rows; ++a) {
    double z = 0.0;
    for (Eigen::Index k = 0; k < cols; ++k) z += params.weights(a, k) * features[static_cast<std::size_t>(k)];
    probs[static_cast<std::size_t>(a)] = z;
    m = std::max(m, z);
  }
  double total = 0.0;
  for (auto& p : probs) {
    p = std::exp(p - m);
    total += p;
  }
  for (auto& p : probs) p /= total;
}

double log_prob(const PolicyParams& params, std::span<const double> features, ActionId action) {
  check_action(params, action);
  return log_softmax(params, features)(action);
}

Eigen::MatrixXd log_prob_grad(const PolicyParams& params, std::span<const double> features,
                              ActionId action) {
  check_action(params, action);
  Eigen::VectorXd coeff = -log_softmax(params, features).array().exp().matrix();
  coeff(action) += 1.0;
  return coeff * as_vector(features).transpose();
}

KlResult kl_divergence(const PolicyParams& params, const PolicyParams& ref,
                       std::span<const double> features) {
  if (params.weights.rows() != ref.weights.rows() || params.weights.cols() != ref.weights.cols()) {
    throw DomainError("kl_divergence: parameter shapes differ");
  }
  const Eigen::VectorXd logp = log_softmax(params, features);
  const Eigen::VectorXd logq_raw = log_softmax(ref, features);
  const double floor_log = std::log(kKlProbabilityFloor);
  KlResult out;
  for (Eigen::Index a = 0; a < logp.size(); ++a) {
    double logq = logq_raw(a);
    if (logq < floor_log) {
      logq = floor_log;
      out.clamped = true;
    }
    out.value += std::exp(logp(a)) * (logp(a) - logq);
  }
  out.value = std::max(out.value, 0.0);
  return out;
}

Eigen::MatrixXd kl_grad(const PolicyParams& params, const PolicyParams& ref,
                        std::span<const double> features) {
  const Eigen::VectorXd logp = log_softmax(params, features);
  Eigen::VectorXd logq = log_softmax(ref, features);
  logq = logq.cwiseMax(std::log(kKlProbabilityFloor));
  const Eigen::VectorXd p = logp.array().exp();
  const Eigen::VectorXd diff = logp - logq;
  const double kl = p.dot(diff);
  // dKL/dz_b = p_b (log p_b - log q_b - KL)
  const Eigen::VectorXd dz = p.array() * (diff.array() - kl);
  return dz * as_vector(features).transpose();
}

ActionId argmax_action(const PolicyParams& params, std::span<const double> features) {
  check_features(params, features);
  const Eigen::VectorXd z = params.weights * as_vector(features);
  Eigen::Index best = 0;
  for (Eigen::Index a = 1; a < z.size(); ++a) {
    if (z(a) > z(best)) best = a;
  }
  return static_cast<ActionId>(best);
}

ActionId sample_from(std::span<const double> probs, double u) {
  double acc = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    acc += probs[a];
    if (u < acc) return static_cast<ActionId>(a);
  }
  // u landed in the rounding gap above the last partial sum.
  for (std::size_t a = probs.size(); a-- > 0;) {
    if (probs[a] > 0.0) return static_cast<ActionId>(a);
  }
  return 0;
}

void apply_gradient(PolicyParams& params, const Eigen::MatrixXd& grad, double learning_rate) {
  if (grad.rows() != params.weights.rows() || grad.cols() != params.weights.cols()) {
    throw DomainError("apply_gradient: shape mismatch");
  }
  params.weights += learning_rate * grad;
  if (!params.weights.allFinite()) throw DomainError("policy update produced non-finite weights");
  ++params.version;
}

void save_policy_text(const PolicyParams& params, std::ostream& out) {
  out << "atgrpo-policy " << params.num_actions() << ' ' << params.feature_length() << ' '
      << params.version << '\n';
  std::ostringstream row;
  row.precision(17);
  for (Eigen::Index a = 0; a < params.weights.rows(); ++a) {
    row.str({});
    for (Eigen::Index k = 0; k < params.weights.cols(); ++k) {
      if (k) row << ' ';
      row << params.weights(a, k);
    }
    out << row.str() << '\n';
  }
}

PolicyParams load_policy_text(std::istream& in) {
  std::string tag;
  int rows = 0;
  int cols = 0;
  std::uint64_t version = 0;
  if (!(in >> tag >> rows >> cols >> version) || tag != "atgrpo-policy" || rows < 1 || cols < 1) {
    throw DomainError("malformed policy text header");
  }
  PolicyParams p(rows, cols);
  p.version = version;
  for (int a = 0; a < rows; ++a) {
    for (int k = 0; k < cols; ++k) {
      if (!(in >> p.weights(a, k))) throw DomainError("truncated policy text body");
    }
  }
  return p;
}

void save_policy_binary(const PolicyParams& params, std::ostream& out) {
  out.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.num_actions()));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.feature_length()));
  write_le<std::uint64_t>(out, params.version);
  for (Eigen::Index a = 0; a < params.weights.rows(); ++a) {
    for (Eigen::Index k = 0; k < params.weights.cols(); ++k) write_le<double>(out, params.weights(a, k));
  }
}

PolicyParams load_policy_binary(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DomainError("not a binary policy file");
  }
  const auto rows = read_le<std::uint32_t>(in);
  const auto cols = read_le<std::uint32_t>(in);
  if (rows == 0 || cols == 0 || rows > (1u << 16) || cols > (1u << 16)) {
    throw DomainError("implausible policy shape in binary file");
  }
  PolicyParams p(static_cast<int>(rows), static_cast<int>(cols));
  p.version = read_le<std::uint64_t>(in);
  for (Eigen::Index a = 0; a < p.weights.rows(); ++a) {
    for (Eigen::Index k = 0; k < p.weights.cols(); ++k) p.weights(a, k) = read_le<double>(in);
  }
  return p;
}

}  // namespace atgrpo
