#pragma once

#include <vector>

#include "lowrank/mdp.hpp"
#include "lowrank/rng.hpp"

namespace lowrank::fixtures {

/// Any tabular kernel is low rank with d = S*A: phi is the one-hot of (s, a)
/// and mu(h, s') stacks T_h(s'|., .).
inline LowRankMDP tabular_as_lowrank(const TransitionTable& kernel, RewardTable reward,
                                     int initial_state = 0) {
  const int H = kernel.horizon(), S = kernel.n_states(), A = kernel.n_actions(), d = S * A;
  std::vector<double> phi(static_cast<std::size_t>(H) * S * A * d, 0.0);
  std::vector<double> mu(static_cast<std::size_t>(H) * S * d, 0.0);
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        const int j = s * A + a;
        phi[((static_cast<std::size_t>(h) * S + s) * A + a) * d + j] = 1.0;
        for (int n = 0; n < S; ++n)
          mu[(static_cast<std::size_t>(h) * S + n) * d + j] = kernel(h, s, a, n);
      }
  return LowRankMDP({S, A, H, d}, std::move(phi), std::move(mu), std::move(reward), initial_state);
}

/// States 0..S-1 on a line; action 1 moves right (capped at the end), action 0 stays.
inline TransitionTable chain_kernel(int horizon, int n_states) {
  TransitionTable k(horizon, n_states, 2);
  for (int h = 0; h < horizon; ++h)
    for (int s = 0; s < n_states; ++s) {
      k(h, s, 0, s) = 1.0;
      k(h, s, 1, std::min(s + 1, n_states - 1)) = 1.0;
    }
  return k;
}

inline TransitionTable random_kernel(std::uint64_t seed, int horizon, int n_states, int n_actions,
                                     double concentration = 0.5) {
  Rng rng = make_rng(seed, 1);
  TransitionTable k(horizon, n_states, n_actions);
  for (int h = 0; h < horizon; ++h)
    for (int s = 0; s < n_states; ++s)
      for (int a = 0; a < n_actions; ++a) {
        const auto row = sample_dirichlet(rng, n_states, concentration);
        for (int n = 0; n < n_states; ++n) k(h, s, a, n) = row[n];
      }
  return k;
}

inline Policy random_policy(Rng& rng, int horizon, int n_states, int n_actions) {
  StepActionTable t(horizon, n_states, n_actions);
  for (int h = 0; h < horizon; ++h)
    for (int s = 0; s < n_states; ++s) {
      const auto row = sample_dirichlet(rng, n_actions, 1.0);
      for (int a = 0; a < n_actions; ++a) t(h, s, a) = row[a];
    }
  return Policy(std::move(t));
}

}  // namespace lowrank::fixtures
