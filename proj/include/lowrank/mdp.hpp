#pragma once

#include <cmath>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lowrank/rng.hpp"
#include "lowrank/tables.hpp"

namespace lowrank {

struct MdpShape {
  int n_states = 0;
  int n_actions = 0;
  int horizon = 0;
  int rank = 0;

  friend bool operator==(const MdpShape&, const MdpShape&) = default;
};

/// Inner products in [-kClampTolerance, 0) are treated as exact zeros.
inline constexpr double kClampTolerance = 1e-12;

/// Episodic tabular MDP whose step-h kernel is T_h(s'|s,a) = <phi_h(s,a), mu_h(s')>.
///
/// Steps are 0-based. The kernel is never stored; every probability is read
/// off the factorization, so phi/mu are the single source of truth.
class LowRankMDP {
 public:
  LowRankMDP() = default;

  /// phi is laid out as [h][s][a][j], mu as [h][s'][j], reward as [h][s][a].
  LowRankMDP(MdpShape shape, std::vector<double> phi, std::vector<double> mu, RewardTable reward,
             int initial_state = 0)
      : shape_(shape), initial_state_(initial_state), phi_(std::move(phi)), mu_(std::move(mu)),
        reward_(std::move(reward)) {
    require(shape.n_states > 0 && shape.n_actions > 0 && shape.horizon > 0 && shape.rank > 0,
            "LowRankMDP: all dimensions must be positive");
    const auto S = static_cast<std::size_t>(shape.n_states);
    const auto A = static_cast<std::size_t>(shape.n_actions);
    const auto H = static_cast<std::size_t>(shape.horizon);
    const auto d = static_cast<std::size_t>(shape.rank);
    require(phi_.size() == H * S * A * d, "LowRankMDP: phi has wrong size");
    require(mu_.size() == H * S * d, "LowRankMDP: mu has wrong size");
    require(reward_.horizon() == shape.horizon && reward_.n_states() == shape.n_states &&
                reward_.n_actions() == shape.n_actions,
            "LowRankMDP: reward table shape mismatch");
    require(initial_state >= 0 && initial_state < shape.n_states,
            "LowRankMDP: initial state out of range");
  }

  const MdpShape& shape() const { return shape_; }
  int n_states() const { return shape_.n_states; }
  int n_actions() const { return shape_.n_actions; }
  int horizon() const { return shape_.horizon; }
  int rank() const { return shape_.rank; }
  int initial_state() const { return initial_state_; }

  std::span<const double> phi(int h, int s, int a) const {
    const std::size_t off =
        ((static_cast<std::size_t>(h) * shape_.n_states + s) * shape_.n_actions + a) * shape_.rank;
    return {phi_.data() + off, static_cast<std::size_t>(shape_.rank)};
  }
  std::span<const double> mu(int h, int next) const {
    const std::size_t off = (static_cast<std::size_t>(h) * shape_.n_states + next) * shape_.rank;
    return {mu_.data() + off, static_cast<std::size_t>(shape_.rank)};
  }

  /// Raw inner product, without clamping.
  double inner(int h, int s, int a, int next) const {
    const auto p = phi(h, s, a);
    const auto m = mu(h, next);
    double acc = 0.0;
    for (int j = 0; j < shape_.rank; ++j) acc += p[j] * m[j];
    return acc;
  }

  double transition(int h, int s, int a, int next) const {
    const double v = inner(h, s, a, next);
    return (v < 0.0 && v >= -kClampTolerance) ? 0.0 : v;
  }

  double reward(int h, int s, int a) const { return reward_(h, s, a); }
  const RewardTable& rewards() const { return reward_; }

  const std::vector<double>& phi_data() const { return phi_; }
  const std::vector<double>& mu_data() const { return mu_; }

  friend bool operator==(const LowRankMDP&, const LowRankMDP&) = default;

 private:
  MdpShape shape_;
  int initial_state_ = 0;
  std::vector<double> phi_;
  std::vector<double> mu_;
  RewardTable reward_;
};

/// Reads every kernel row off the factorization into a dense table.
inline TransitionTable materialize(const LowRankMDP& mdp) {
  TransitionTable table(mdp.horizon(), mdp.n_states(), mdp.n_actions());
  for (int h = 0; h < mdp.horizon(); ++h)
    for (int s = 0; s < mdp.n_states(); ++s)
      for (int a = 0; a < mdp.n_actions(); ++a)
        for (int n = 0; n < mdp.n_states(); ++n) table(h, s, a, n) = mdp.transition(h, s, a, n);
  return table;
}

/// Non-stationary Markov policy: probs(h, s, a) = pi_h(a|s).
class Policy {
 public:
  Policy() = default;
  explicit Policy(StepActionTable probs) : probs_(std::move(probs)) {
    for (int h = 0; h < probs_.horizon(); ++h)
      for (int s = 0; s < probs_.n_states(); ++s) {
        double total = 0.0;
        for (double p : probs_.row(h, s)) {
          require(p >= 0.0 && std::isfinite(p), "Policy: negative or non-finite probability");
          total += p;
        }
        require(std::abs(total - 1.0) <= 1e-12 * probs_.n_actions() + 1e-12,
                "Policy: row does not sum to one");
      }
  }

  static Policy uniform(int horizon, int n_states, int n_actions) {
    return Policy(StepActionTable(horizon, n_states, n_actions, 1.0 / n_actions));
  }

  /// actions[h * n_states + s] is the chosen action.
  static Policy deterministic(int horizon, int n_states, int n_actions,
                              std::span<const int> actions) {
    require(actions.size() == static_cast<std::size_t>(horizon) * n_states,
            "Policy::deterministic: action list has wrong length");
    StepActionTable probs(horizon, n_states, n_actions, 0.0);
    for (int h = 0; h < horizon; ++h)
      for (int s = 0; s < n_states; ++s) probs(h, s, actions[h * n_states + s]) = 1.0;
    return Policy(std::move(probs));
  }

  int horizon() const { return probs_.horizon(); }
  int n_states() const { return probs_.n_states(); }
  int n_actions() const { return probs_.n_actions(); }

  double operator()(int h, int s, int a) const { return probs_(h, s, a); }
  std::span<const double> row(int h, int s) const { return probs_.row(h, s); }
  const StepActionTable& table() const { return probs_; }

  int sample(Rng& rng, int h, int s) const { return sample_categorical(rng, row(h, s)); }

  friend bool operator==(const Policy&, const Policy&) = default;

 private:
  StepActionTable probs_;
};

/// Uniform mixture over whole policies: one component is drawn per episode.
struct MixturePolicy {
  std::vector<Policy> components;
};

/// Reward table that is 1 at (h, s, a) everywhere; handy in tests.
inline RewardTable constant_reward(int horizon, int n_states, int n_actions, double value) {
  return RewardTable(horizon, n_states, n_actions, value);
}

inline void require_compatible(const LowRankMDP& mdp, const Policy& pi) {
  require(pi.horizon() == mdp.horizon() && pi.n_states() == mdp.n_states() &&
              pi.n_actions() == mdp.n_actions(),
          "policy dimensions do not match the MDP");
}

inline void require_compatible(const TransitionTable& kernel, const StepActionTable& table,
                               const char* what) {
  if (table.horizon() != kernel.horizon() || table.n_states() != kernel.n_states() ||
      table.n_actions() != kernel.n_actions()) {
    std::ostringstream os;
    os << what << " dimensions (" << table.horizon() << "," << table.n_states() << ","
       << table.n_actions() << ") do not match the model (" << kernel.horizon() << ","
       << kernel.n_states() << "," << kernel.n_actions() << ")";
    throw std::invalid_argument(os.str());
  }
}

}  // namespace lowrank
