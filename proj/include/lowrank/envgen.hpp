#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "lowrank/dp.hpp"
#include "lowrank/mdp.hpp"
#include "lowrank/rng.hpp"

namespace lowrank {

/// Knobs of the synthetic construction. Defaults are what the tests and
/// acceptance configs use.
struct GenOptions {
  double phi_concentration = 0.3;  // Dirichlet over the d latent factors
  double mu_concentration = 0.1;   // Dirichlet over next states, per latent factor
  double goal_mass = 0.5;          // mass of the goal factor covered by the goal set
};

/// phi(h,s,a) lies on the d-simplex and every latent column mu(h,.,j) is a
/// distribution over next states, so T is a mixture of d distributions.
/// Reward is 1 on a seeded goal set at the last step and 0 elsewhere.
/// Requires rank <= n_states.
inline LowRankMDP gen_lowrank(std::uint64_t seed, int n_states, int n_actions, int horizon,
                              int rank, const GenOptions& opts = {}) {
  require(n_states > 0 && n_actions > 0 && horizon > 0 && rank > 0,
          "gen_lowrank: dimensions must be positive");
  if (rank > n_states) throw std::invalid_argument("gen_lowrank: rank exceeds number of states");
  const int S = n_states, A = n_actions, H = horizon, d = rank;
  Rng rng = make_rng(seed, 0x656e76);

  std::vector<double> phi(static_cast<std::size_t>(H) * S * A * d);
  for (std::size_t off = 0; off < phi.size(); off += d) {
    const auto w = sample_dirichlet(rng, d, opts.phi_concentration);
    std::copy(w.begin(), w.end(), phi.begin() + static_cast<std::ptrdiff_t>(off));
  }

  std::vector<double> mu(static_cast<std::size_t>(H) * S * d);
  for (int h = 0; h < H; ++h)
    for (int j = 0; j < d; ++j) {
      const auto col = sample_dirichlet(rng, S, opts.mu_concentration);
      for (int n = 0; n < S; ++n) mu[(static_cast<std::size_t>(h) * S + n) * d + j] = col[n];
    }

  // Goals: the heaviest next states of one seeded latent factor at the last
  // transition, enough to cover goal_mass of it. With H == 1 the reward sits on
  // the start state's step, so any seeded state will do.
  RewardTable reward(H, S, A, 0.0);
  std::vector<int> goals;
  if (H == 1) {
    goals.push_back(uniform_int(rng, S));
  } else {
    const int factor = uniform_int(rng, d);
    std::vector<int> order(static_cast<std::size_t>(S));
    for (int n = 0; n < S; ++n) order[n] = n;
    const auto weight = [&](int n) {
      return mu[(static_cast<std::size_t>(H - 2) * S + n) * d + factor];
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](int x, int y) { return weight(x) > weight(y); });
    double covered = 0.0;
    for (int n : order) {
      goals.push_back(n);
      covered += weight(n);
      if (covered >= opts.goal_mass) break;
    }
  }
  for (int g : goals)
    for (int a = 0; a < A; ++a) reward(H - 1, g, a) = 1.0;

  return LowRankMDP({S, A, H, d}, std::move(phi), std::move(mu), std::move(reward), 0);
}

/// Per-row squared Hellinger distances between the kernels of two models, laid out (h, s, a).
inline StepActionTable row_hellinger(const TransitionTable& p, const TransitionTable& q) {
  require(p.horizon() == q.horizon() && p.n_states() == q.n_states() &&
              p.n_actions() == q.n_actions(),
          "row_hellinger: kernel shapes differ");
  StepActionTable out(p.horizon(), p.n_states(), p.n_actions());
  for (int h = 0; h < p.horizon(); ++h)
    for (int s = 0; s < p.n_states(); ++s)
      for (int a = 0; a < p.n_actions(); ++a)
        out(h, s, a) = hellinger_sq(p.row(h, s, a), q.row(h, s, a));
  return out;
}

inline double min_row_hellinger(const LowRankMDP& x, const LowRankMDP& y) {
  const auto t = row_hellinger(materialize(x), materialize(y));
  return *std::min_element(t.data().begin(), t.data().end());
}

inline double max_row_hellinger(const LowRankMDP& x, const LowRankMDP& y) {
  const auto t = row_hellinger(materialize(x), materialize(y));
  return *std::max_element(t.data().begin(), t.data().end());
}

struct ModelClass {
  std::vector<LowRankMDP> models;
  std::optional<int> truth_index;

  int size() const { return static_cast<int>(models.size()); }
  const LowRankMDP& operator[](int i) const { return models[static_cast<std::size_t>(i)]; }
};

struct ModelClassOptions {
  double min_strength = 0.15;     // convex mixing weight toward a fresh draw
  double max_strength = 0.5;
  double separation_floor = 1e-3;  // every kernel row of a decoy differs at least this much
  int max_attempts = 100;
};

/// The truth is placed at a seeded index; every other entry mixes the truth's
/// phi rows and mu columns with fresh Dirichlet draws. Convex mixing keeps both
/// on their simplices, so decoys are valid by construction. A decoy is redrawn
/// until every kernel row is at squared Hellinger distance >= separation_floor.
inline ModelClass gen_model_class(const LowRankMDP& env, int size, std::uint64_t seed,
                                  const ModelClassOptions& opts = {},
                                  const GenOptions& gen = {}) {
  require(size >= 1, "gen_model_class: size must be at least 1");
  const int S = env.n_states(), A = env.n_actions(), H = env.horizon(), d = env.rank();
  Rng rng = make_rng(seed, 0x636c73);
  ModelClass out;
  out.truth_index = uniform_int(rng, size);
  out.models.reserve(static_cast<std::size_t>(size));
  const auto truth_kernel = materialize(env);

  for (int i = 0; i < size; ++i) {
    if (i == *out.truth_index) {
      out.models.push_back(env);
      continue;
    }
    for (int attempt = 0;; ++attempt) {
      if (attempt == opts.max_attempts)
        throw std::runtime_error("gen_model_class: could not separate a decoy from the truth");
      const double t =
          opts.min_strength + (opts.max_strength - opts.min_strength) * uniform01(rng);
      std::vector<double> phi = env.phi_data();
      for (std::size_t off = 0; off < phi.size(); off += d) {
        const auto w = sample_dirichlet(rng, d, gen.phi_concentration);
        for (int j = 0; j < d; ++j) phi[off + j] = (1.0 - t) * phi[off + j] + t * w[j];
      }
      std::vector<double> mu = env.mu_data();
      for (int h = 0; h < H; ++h)
        for (int j = 0; j < d; ++j) {
          const auto col = sample_dirichlet(rng, S, gen.mu_concentration);
          for (int n = 0; n < S; ++n) {
            double& m = mu[(static_cast<std::size_t>(h) * S + n) * d + j];
            m = (1.0 - t) * m + t * col[n];
          }
        }
      LowRankMDP decoy({S, A, H, d}, std::move(phi), std::move(mu), env.rewards(),
                       env.initial_state());
      const auto sep = row_hellinger(truth_kernel, materialize(decoy));
      if (*std::min_element(sep.data().begin(), sep.data().end()) >= opts.separation_floor) {
        out.models.push_back(std::move(decoy));
        break;
      }
    }
  }
  return out;
}

/// Ground-truth dynamics for evaluation: an arbitrary kernel plus reward and start state.
struct Environment {
  TransitionTable kernel;
  RewardTable reward;
  int initial_state = 0;

  static Environment from(const LowRankMDP& mdp) {
    return {materialize(mdp), mdp.rewards(), mdp.initial_state()};
  }

  int n_states() const { return kernel.n_states(); }
  int n_actions() const { return kernel.n_actions(); }
  int horizon() const { return kernel.horizon(); }
};

struct MisspecifiedEnv {
  LowRankMDP base;
  TransitionTable true_kernel;
  double zeta = 0.0;  // measured max |true_kernel - <phi, mu>|

  Environment environment() const { return {true_kernel, base.rewards(), base.initial_state()}; }
};

inline double max_entry_deviation(const TransitionTable& a, const TransitionTable& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

/// Zero-sum perturbation that the base model cannot see. At every (h, s) the
/// rows of all actions except the base-greedy one drift toward next states with
/// below-average base V*; the greedy rows stay exact, so the true V* equals the
/// base V* while any policy that still explores loses value. A learner that
/// trusts the base model overrates those actions. Entry magnitudes are
/// zeta * U[0.5, 1] before clipping at zero and rebalancing, so no entry moves
/// by more than zeta. Where V* is flat the signs are random.
inline MisspecifiedEnv gen_misspecified(const LowRankMDP& env, double zeta, std::uint64_t seed) {
  require(zeta >= 0.0 && zeta <= 0.1, "gen_misspecified: zeta must lie in [0, 0.1]");
  const auto base_kernel = materialize(env);
  if (zeta == 0.0) return {env, base_kernel, 0.0};

  const int S = env.n_states(), A = env.n_actions(), H = env.horizon();
  const auto opt = exact_optimal(base_kernel, env.rewards());
  Rng rng = make_rng(seed, 0x6d6973);
  std::vector<double> delta(static_cast<std::size_t>(S));

  const auto perturb = [&](std::span<double> row, std::span<const double> next_v, double mean_v,
                           bool flat, bool toward_high, double scale) {
    double up = 0.0, down = 0.0;
    for (int n = 0; n < S; ++n) {
      const double m = scale * (0.5 + 0.5 * uniform01(rng));
      const bool raise = flat ? (rng() & 1U) != 0 : (next_v[n] > mean_v) == toward_high;
      delta[n] = raise ? m : -std::min(m, row[n]);
      (raise ? up : down) += std::abs(delta[n]);
    }
    if (up == 0.0 || down == 0.0) return;
    // Shrink the heavier side so the row keeps unit mass.
    const double up_scale = up > down ? down / up : 1.0;
    const double down_scale = down > up ? up / down : 1.0;
    double total = 0.0;
    for (int n = 0; n < S; ++n) {
      row[n] = std::max(0.0, row[n] + delta[n] * (delta[n] > 0.0 ? up_scale : down_scale));
      total += row[n];
    }
    for (int n = 0; n < S; ++n) row[n] /= total;
  };

  double scale = zeta;
  for (int attempt = 0; attempt < 100; ++attempt, scale *= 0.5) {
    TransitionTable kernel = base_kernel;
    for (int h = 0; h < H; ++h) {
      const auto next_v = opt.v.step(h + 1);
      double mean_v = 0.0;
      for (double v : next_v) mean_v += v;
      mean_v /= S;
      const bool flat = std::all_of(next_v.begin(), next_v.end(),
                                    [&](double v) { return std::abs(v - mean_v) < 1e-12; });
      for (int s = 0; s < S; ++s) {
        // Actions ranked by base Q; ties keep the lower index first.
        std::vector<int> order(static_cast<std::size_t>(A));
        for (int a = 0; a < A; ++a) order[a] = a;
        std::stable_sort(order.begin(), order.end(),
                         [&](int x, int y) { return opt.q(h, s, x) > opt.q(h, s, y); });
        for (int i = 1; i < A; ++i)
          perturb(kernel.row(h, s, order[i]), next_v, mean_v, flat, false, scale);
      }
    }
    const double measured = max_entry_deviation(kernel, base_kernel);
    // Renormalization can only shrink entries here; the guard keeps the contract explicit.
    if (measured > zeta) continue;
    return {env, std::move(kernel), measured};
  }
  throw std::runtime_error("gen_misspecified: perturbation exceeded tolerance after 100 attempts");
}

}  // namespace lowrank
