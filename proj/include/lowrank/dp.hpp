#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "lowrank/mdp.hpp"

namespace lowrank {

struct PolicyValues {
  QTable q;
  VTable v;
};

struct OptimalValues {
  QTable q;
  VTable v;
  Policy greedy;
};

/// Backward induction for a fixed policy:
/// Q_h = r_h + T_h V_{h+1},  V_h(s) = sum_a pi_h(a|s) Q_h(s,a),  V_H = 0.
inline PolicyValues exact_policy_eval(const TransitionTable& kernel, const Policy& pi,
                                      const RewardTable& reward) {
  require_compatible(kernel, reward, "reward");
  require_compatible(kernel, pi.table(), "policy");
  const int H = kernel.horizon(), S = kernel.n_states(), A = kernel.n_actions();
  PolicyValues out{QTable(H, S, A), VTable(H, S)};
  for (int h = H - 1; h >= 0; --h) {
    const auto next = out.v.step(h + 1);
    for (int s = 0; s < S; ++s) {
      double v = 0.0;
      for (int a = 0; a < A; ++a) {
        const auto row = kernel.row(h, s, a);
        double cont = 0.0;
        for (int n = 0; n < S; ++n) cont += row[n] * next[n];
        const double q = reward(h, s, a) + cont;
        out.q(h, s, a) = q;
        v += pi(h, s, a) * q;
      }
      out.v(h, s) = v;
    }
  }
  return out;
}

inline PolicyValues exact_policy_eval(const LowRankMDP& mdp, const Policy& pi,
                                      const RewardTable& reward) {
  require_compatible(mdp, pi);
  return exact_policy_eval(materialize(mdp), pi, reward);
}

/// Backward value iteration with greedy argmax; ties go to the lowest action index.
inline OptimalValues exact_optimal(const TransitionTable& kernel, const RewardTable& reward) {
  require_compatible(kernel, reward, "reward");
  const int H = kernel.horizon(), S = kernel.n_states(), A = kernel.n_actions();
  QTable q(H, S, A);
  VTable v(H, S);
  std::vector<int> actions(static_cast<std::size_t>(H) * S, 0);
  for (int h = H - 1; h >= 0; --h) {
    const auto next = v.step(h + 1);
    for (int s = 0; s < S; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      int best_a = 0;
      for (int a = 0; a < A; ++a) {
        const auto row = kernel.row(h, s, a);
        double cont = 0.0;
        for (int n = 0; n < S; ++n) cont += row[n] * next[n];
        const double value = reward(h, s, a) + cont;
        q(h, s, a) = value;
        if (value > best) {
          best = value;
          best_a = a;
        }
      }
      v(h, s) = best;
      actions[static_cast<std::size_t>(h) * S + s] = best_a;
    }
  }
  return {std::move(q), std::move(v), Policy::deterministic(H, S, A, actions)};
}

inline OptimalValues exact_optimal(const LowRankMDP& mdp, const RewardTable& reward) {
  return exact_optimal(materialize(mdp), reward);
}

/// Forward recursion for the per-step state-action occupancy under pi from s_1.
/// Each step of the returned table sums to one.
inline StepActionTable occupancy(const TransitionTable& kernel, const Policy& pi,
                                 int initial_state) {
  require_compatible(kernel, pi.table(), "policy");
  const int H = kernel.horizon(), S = kernel.n_states(), A = kernel.n_actions();
  StepActionTable occ(H, S, A);
  std::vector<double> state_dist(static_cast<std::size_t>(S), 0.0);
  state_dist[initial_state] = 1.0;
  for (int h = 0; h < H; ++h) {
    std::vector<double> next(static_cast<std::size_t>(S), 0.0);
    for (int s = 0; s < S; ++s) {
      if (state_dist[s] == 0.0) continue;
      for (int a = 0; a < A; ++a) {
        const double w = state_dist[s] * pi(h, s, a);
        occ(h, s, a) = w;
        if (w == 0.0) continue;
        const auto row = kernel.row(h, s, a);
        for (int n = 0; n < S; ++n) next[n] += w * row[n];
      }
    }
    state_dist = std::move(next);
  }
  return occ;
}

inline StepActionTable occupancy(const LowRankMDP& mdp, const Policy& pi) {
  require_compatible(mdp, pi);
  return occupancy(materialize(mdp), pi, mdp.initial_state());
}

/// Raised when rho has no mass on a state-action cell that a policy visits.
class Uncoverable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Smallest C with max_pi d^pi_h(s) * u(a) <= C * rho(s, a) for all (h, s, a),
/// where d^pi_h is the state marginal and u the uniform action distribution.
/// rho is a (s, a) table stored as a 1-step StepActionTable.
inline double coverage_constant(const TransitionTable& kernel, std::span<const Policy> policies,
                                const StepActionTable& rho, int initial_state) {
  const int H = kernel.horizon(), S = kernel.n_states(), A = kernel.n_actions();
  require(rho.n_states() == S && rho.n_actions() == A && rho.horizon() == 1,
          "coverage_constant: rho must be a (states x actions) table");
  double worst = 0.0;
  for (const auto& pi : policies) {
    const auto occ = occupancy(kernel, pi, initial_state);
    for (int h = 0; h < H; ++h)
      for (int s = 0; s < S; ++s) {
        double marginal = 0.0;
        for (int a = 0; a < A; ++a) marginal += occ(h, s, a);
        if (marginal == 0.0) continue;
        for (int a = 0; a < A; ++a) {
          const double lhs = marginal / A;
          if (rho(0, s, a) <= 0.0)
            throw Uncoverable("coverage_constant: rho is zero at a visited state-action pair");
          worst = std::max(worst, lhs / rho(0, s, a));
        }
      }
  }
  return worst;
}

inline double coverage_constant(const LowRankMDP& mdp, std::span<const Policy> policies,
                                const StepActionTable& rho) {
  return coverage_constant(materialize(mdp), policies, rho, mdp.initial_state());
}

/// Uniform (s, a) distribution in the 1-step table layout used for rho.
inline StepActionTable uniform_state_action(int n_states, int n_actions) {
  return StepActionTable(1, n_states, n_actions, 1.0 / (static_cast<double>(n_states) * n_actions));
}

/// Unnormalized total variation: sum_i |p_i - q_i| (no 1/2 factor), so the
/// distance between disjoint unit masses is 2.
inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), "tv_distance: support size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    require(p[i] >= 0.0 && q[i] >= 0.0, "tv_distance: negative entry");
    acc += std::abs(p[i] - q[i]);
  }
  return acc;
}

/// Squared Hellinger distance without the 1/2 factor: sum_i (sqrt p_i - sqrt q_i)^2.
inline double hellinger_sq(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), "hellinger_sq: support size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    require(p[i] >= 0.0 && q[i] >= 0.0, "hellinger_sq: negative entry");
    const double diff = std::sqrt(p[i]) - std::sqrt(q[i]);
    acc += diff * diff;
  }
  return acc;
}

/// Value of a uniform mixture of policies at s_1: the average of component values.
inline double mixture_value(const TransitionTable& kernel, const MixturePolicy& mix,
                            const RewardTable& reward, int initial_state) {
  require(!mix.components.empty(), "mixture_value: empty mixture");
  double acc = 0.0;
  for (const auto& pi : mix.components)
    acc += exact_policy_eval(kernel, pi, reward).v(0, initial_state);
  return acc / static_cast<double>(mix.components.size());
}

/// One simulated episode; returns the undiscounted return.
inline double rollout_return(const TransitionTable& kernel, const RewardTable& reward,
                             const Policy& pi, int initial_state, Rng& rng) {
  int s = initial_state;
  double total = 0.0;
  for (int h = 0; h < kernel.horizon(); ++h) {
    const int a = pi.sample(rng, h, s);
    total += reward(h, s, a);
    s = sample_categorical(rng, kernel.row(h, s, a));
  }
  return total;
}

}  // namespace lowrank
