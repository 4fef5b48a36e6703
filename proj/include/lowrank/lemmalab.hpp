#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lowrank/dp.hpp"
#include "lowrank/envgen.hpp"
#include "lowrank/optac.hpp"
#include "lowrank/rng.hpp"

namespace lowrank {

/// Outcome of a batch of inequality checks; slack is lhs - rhs, so a check
/// passes when slack <= 0 up to rounding.
struct LemmaReport {
  std::string id;
  long trials = 0;
  long violations = 0;
  double worst_slack = -std::numeric_limits<double>::infinity();

  bool passed() const { return violations == 0; }

  void record(double lhs, double rhs) {
    ++trials;
    const double slack = lhs - rhs;
    worst_slack = std::max(worst_slack, slack);
    if (slack > 1e-10 * std::max({1.0, std::abs(lhs), std::abs(rhs)})) ++violations;
  }

  void merge(const LemmaReport& other) {
    trials += other.trials;
    violations += other.violations;
    worst_slack = std::max(worst_slack, other.worst_slack);
  }
};

// ---------------------------------------------------------------------------
// Elliptical potential

struct EllipticalPotentialTerms {
  double clipped_sum = 0.0;  // sum_i min{1, f_i}
  double log_det_ratio = 0.0;  // log det A_{n+1} - d log lambda
  double worst_case = 0.0;     // d log(1 + n L^2 / (lambda d))
};

/// f_i = Y_i' A_i^{-1} Y_i with A_i = lambda I + sum_{j<i} Y_j Y_j'. Each A_i is
/// factored afresh so the determinant is independent of the running sum.
inline EllipticalPotentialTerms elliptical_potential_terms(std::span<const Eigen::VectorXd> ys,
                                                           double lambda) {
  require(lambda > 0.0, "elliptical_potential: lambda must be positive");
  EllipticalPotentialTerms out;
  if (ys.empty()) return out;
  const auto d = ys.front().size();
  Eigen::MatrixXd gram = lambda * Eigen::MatrixXd::Identity(d, d);
  double max_norm_sq = 0.0;
  for (const auto& y : ys) {
    require(y.size() == d, "elliptical_potential: vectors differ in dimension");
    const Eigen::LLT<Eigen::MatrixXd> llt(gram);
    out.clipped_sum += std::min(1.0, y.dot(llt.solve(y)));
    gram.noalias() += y * y.transpose();
    max_norm_sq = std::max(max_norm_sq, y.squaredNorm());
  }
  const Eigen::LLT<Eigen::MatrixXd> final_llt(gram);
  out.log_det_ratio = 2.0 * final_llt.matrixL().toDenseMatrix().diagonal().array().log().sum() -
                      static_cast<double>(d) * std::log(lambda);
  const double n = static_cast<double>(ys.size());
  out.worst_case = static_cast<double>(d) * std::log(1.0 + n * max_norm_sq / (lambda * d));
  return out;
}

/// Two checks: clipped sum <= 2 log det ratio <= 2 d log(1 + n L^2 / (lambda d)),
/// with L the largest norm in the sequence.
inline LemmaReport elliptical_potential_check(std::span<const Eigen::VectorXd> ys, double lambda) {
  const auto t = elliptical_potential_terms(ys, lambda);
  LemmaReport r{"elliptical-potential"};
  r.record(t.clipped_sum, 2.0 * t.log_det_ratio);
  r.record(2.0 * t.log_det_ratio, 2.0 * t.worst_case);
  return r;
}

/// Random sequences with n <= max_len and dimension <= max_dim; half the
/// sequences concentrate on one direction to stress the clipping.
inline LemmaReport elliptical_potential_sweep(int sequences, std::uint64_t seed, int max_len = 500,
                                              int max_dim = 8) {
  LemmaReport total{"elliptical-potential"};
  Rng rng = make_rng(seed, 0x656c6c);
  for (int t = 0; t < sequences; ++t) {
    const int n = 1 + uniform_int(rng, max_len);
    const int d = 1 + uniform_int(rng, max_dim);
    const double lambda = std::pow(10.0, -2.0 + 3.0 * uniform01(rng));
    const double scale = std::pow(10.0, -1.0 + 2.0 * uniform01(rng));
    const bool aligned = (t % 2) == 1;
    Eigen::VectorXd axis(d);
    for (int j = 0; j < d; ++j) axis[j] = standard_normal(rng);
    axis.normalize();
    std::vector<Eigen::VectorXd> ys;
    ys.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd y(d);
      for (int j = 0; j < d; ++j) y[j] = standard_normal(rng);
      if (aligned) y = axis * y[0] + 0.01 * y;
      ys.push_back(scale * y);
    }
    total.merge(elliptical_potential_check(ys, lambda));
  }
  return total;
}

// ---------------------------------------------------------------------------
// TV versus Hellinger for bounded measures

struct MeasurePair {
  std::vector<double> p;
  std::vector<double> q;
};

/// TV(P,Q)^2 <= 4 (|P| + |Q|) H^2(P,Q), unnormalized distances.
inline LemmaReport tv_hellinger_check(std::span<const MeasurePair> pairs) {
  LemmaReport r{"tv-hellinger"};
  for (const auto& [p, q] : pairs) {
    const double tv = tv_distance(p, q);
    double mass = 0.0;
    for (double x : p) mass += x;
    for (double x : q) mass += x;
    r.record(tv * tv, 4.0 * mass * hellinger_sq(p, q));
  }
  return r;
}

/// Random pairs on supports of size 1..20: probability vectors, unnormalized
/// measures of varying total mass, and sparse measures with disjoint supports.
inline std::vector<MeasurePair> random_measure_pairs(int count, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x747668);
  std::vector<MeasurePair> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int n = 1 + uniform_int(rng, 20);
    MeasurePair m{std::vector<double>(static_cast<std::size_t>(n)),
                  std::vector<double>(static_cast<std::size_t>(n))};
    switch (i % 3) {
      case 0:
        m.p = sample_dirichlet(rng, n, 0.5);
        m.q = sample_dirichlet(rng, n, 0.5);
        break;
      case 1: {
        const double mp = std::pow(10.0, -2.0 + 4.0 * uniform01(rng));
        const double mq = std::pow(10.0, -2.0 + 4.0 * uniform01(rng));
        for (int j = 0; j < n; ++j) {
          m.p[j] = mp * uniform01(rng);
          m.q[j] = mq * uniform01(rng);
        }
        break;
      }
      default:
        for (int j = 0; j < n; ++j) {
          const double u = uniform01(rng);
          if (u < 0.4) m.p[j] = uniform01(rng);
          else if (u < 0.8) m.q[j] = uniform01(rng);
        }
    }
    out.push_back(std::move(m));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mirror-descent stability

/// Replays pi^{(k+1)} proportional to pi^{(k)} exp(eta Q_k) from the uniform
/// policy and checks
///   sum_k E_{s~q} sum_a Q_k(s,a) (pi*(a|s) - pi^{(k)}(a|s)) <= log|A|/eta + 2 eta H^2 K.
/// Q tables and the comparator are (states x actions) tables in the 1-step layout.
inline LemmaReport md_stability_check(std::span<const StepActionTable> q_sequence, double eta,
                                      int horizon, const StepActionTable& comparator,
                                      std::span<const double> state_dist) {
  require(!q_sequence.empty(), "md_stability_check: empty Q sequence");
  require(eta > 0.0 && horizon > 0, "md_stability_check: eta and horizon must be positive");
  const int S = comparator.n_states(), A = comparator.n_actions();
  require(comparator.horizon() == 1 && static_cast<int>(state_dist.size()) == S,
          "md_stability_check: comparator/state distribution shape mismatch");
  const double bound_q = 2.0 * horizon;
  for (const auto& q : q_sequence) {
    require(q.same_shape(comparator), "md_stability_check: Q table shape mismatch");
    for (double x : q.data())
      if (std::abs(x) > bound_q)
        throw std::invalid_argument("md_stability_check: |Q| exceeds 2H");
  }
  Policy pi = Policy::uniform(1, S, A);
  double lhs = 0.0;
  for (const auto& q : q_sequence) {
    for (int s = 0; s < S; ++s) {
      double inner = 0.0;
      for (int a = 0; a < A; ++a) inner += q(0, s, a) * (comparator(0, s, a) - pi(0, s, a));
      lhs += state_dist[s] * inner;
    }
    pi = actor_update(pi, q, eta);
  }
  const double K = static_cast<double>(q_sequence.size());
  LemmaReport r{"md-stability"};
  r.record(lhs, std::log(static_cast<double>(A)) / eta + 2.0 * eta * horizon * horizon * K);
  return r;
}

/// The best fixed action in hindsight per state, which maximizes the left side.
inline StepActionTable best_in_hindsight(std::span<const StepActionTable> q_sequence) {
  StepActionTable total = q_sequence.front();
  for (std::size_t k = 1; k < q_sequence.size(); ++k)
    for (std::size_t i = 0; i < total.data().size(); ++i)
      total.data()[i] += q_sequence[k].data()[i];
  StepActionTable out(1, total.n_states(), total.n_actions(), 0.0);
  for (int s = 0; s < total.n_states(); ++s) {
    const auto row = total.row(0, s);
    out(0, s, static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin())) = 1.0;
  }
  return out;
}

/// Q entries uniform on [-2H, 2H] (or [0, 2H] for every other sequence), eta
/// log-uniform on [0.01, 1], comparator the best action in hindsight.
inline LemmaReport md_stability_sweep(int sequences, std::uint64_t seed, int iterations = 200,
                                      int n_actions = 4, int horizon = 5, int n_states = 3) {
  LemmaReport total{"md-stability"};
  Rng rng = make_rng(seed, 0x6d6473);
  const double bound_q = 2.0 * horizon;
  for (int t = 0; t < sequences; ++t) {
    const double eta = std::pow(10.0, -2.0 + 2.0 * uniform01(rng));
    const double low = (t % 2) ? 0.0 : -bound_q;
    std::vector<StepActionTable> qs;
    qs.reserve(static_cast<std::size_t>(iterations));
    for (int k = 0; k < iterations; ++k) {
      StepActionTable q(1, n_states, n_actions);
      for (double& x : q.data()) x = low + (bound_q - low) * uniform01(rng);
      qs.push_back(std::move(q));
    }
    const auto dist = sample_dirichlet(rng, n_states, 1.0);
    total.merge(md_stability_check(qs, eta, horizon, best_in_hindsight(qs), dist));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Value difference

/// Every term of both value-difference bounds, evaluated at the start state.
/// B and B' are the largest values of V^pi_{theta,r} and V^{pi'}_{theta',r'}.
struct ValueDifferenceTerms {
  double lhs = 0.0;  // V^pi_{theta,r} - V^{pi'}_{theta',r'}
  double reward_term[2] = {0.0, 0.0};
  double policy_term[2] = {0.0, 0.0};
  double tv_term[2] = {0.0, 0.0};  // already multiplied by B' (first) or B (second)
  double rhs(int which) const {
    return reward_term[which] + policy_term[which] + tv_term[which];
  }
};

inline ValueDifferenceTerms value_difference_terms(const TransitionTable& theta,
                                                   const TransitionTable& theta_prime,
                                                   const Policy& pi, const Policy& pi_prime,
                                                   const RewardTable& r,
                                                   const RewardTable& r_prime, int initial_state) {
  require(theta.n_states() == theta_prime.n_states() &&
              theta.n_actions() == theta_prime.n_actions() &&
              theta.horizon() == theta_prime.horizon(),
          "value_difference_terms: kernel shapes differ");
  for (double x : r.data()) require(x >= 0.0, "value_difference_terms: rewards must be nonnegative");
  for (double x : r_prime.data())
    require(x >= 0.0, "value_difference_terms: rewards must be nonnegative");
  const int H = theta.horizon(), S = theta.n_states(), A = theta.n_actions();

  RewardTable diff = r;
  for (std::size_t i = 0; i < diff.data().size(); ++i) diff.data()[i] -= r_prime.data()[i];
  StepActionTable tv(H, S, A);
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) tv(h, s, a) = tv_distance(theta.row(h, s, a), theta_prime.row(h, s, a));

  const auto own = exact_policy_eval(theta, pi, r);
  const auto other = exact_policy_eval(theta_prime, pi_prime, r_prime);
  const double bound = *std::max_element(own.v.data().begin(), own.v.data().end());
  const double bound_prime = *std::max_element(other.v.data().begin(), other.v.data().end());

  ValueDifferenceTerms t;
  t.lhs = own.v(0, initial_state) - other.v(0, initial_state);

  // Policy term: E over the rollout kernel and policy of sum_a Q(s,a) (pi - pi')(a|s).
  const auto policy_gap = [&](const TransitionTable& kernel, const Policy& roll,
                              const QTable& q) {
    const auto occ = occupancy(kernel, roll, initial_state);
    double acc = 0.0;
    for (int h = 0; h < H; ++h)
      for (int s = 0; s < S; ++s) {
        double state_mass = 0.0;
        for (int a = 0; a < A; ++a) state_mass += occ(h, s, a);
        if (state_mass == 0.0) continue;
        double inner = 0.0;
        for (int a = 0; a < A; ++a) inner += q(h, s, a) * (pi(h, s, a) - pi_prime(h, s, a));
        acc += state_mass * inner;
      }
    return acc;
  };

  t.reward_term[0] = exact_policy_eval(theta, pi, diff).v(0, initial_state);
  t.policy_term[0] = policy_gap(theta, pi, other.q);
  t.tv_term[0] = bound_prime * exact_policy_eval(theta, pi, tv).v(0, initial_state);

  t.reward_term[1] = exact_policy_eval(theta_prime, pi_prime, diff).v(0, initial_state);
  t.policy_term[1] = policy_gap(theta_prime, pi_prime, own.q);
  t.tv_term[1] = bound * exact_policy_eval(theta_prime, pi_prime, tv).v(0, initial_state);
  return t;
}

/// Two checks, one per bound.
inline LemmaReport value_difference_check(const TransitionTable& theta,
                                          const TransitionTable& theta_prime, const Policy& pi,
                                          const Policy& pi_prime, const RewardTable& r,
                                          const RewardTable& r_prime, int initial_state = 0) {
  const auto t = value_difference_terms(theta, theta_prime, pi, pi_prime, r, r_prime, initial_state);
  LemmaReport rep{"value-difference"};
  rep.record(t.lhs, t.rhs(0));
  rep.record(t.lhs, t.rhs(1));
  return rep;
}

namespace detail {

inline TransitionTable random_kernel(Rng& rng, int H, int S, int A, double concentration) {
  TransitionTable k(H, S, A);
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        const auto row = sample_dirichlet(rng, S, concentration);
        std::copy(row.begin(), row.end(), k.row(h, s, a).begin());
      }
  return k;
}

inline Policy random_policy(Rng& rng, int H, int S, int A) {
  StepActionTable t(H, S, A);
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s) {
      const auto row = sample_dirichlet(rng, A, 0.5);
      std::copy(row.begin(), row.end(), t.row(h, s).begin());
    }
  return Policy(std::move(t));
}

inline RewardTable random_reward(Rng& rng, int H, int S, int A) {
  RewardTable r(H, S, A);
  for (double& x : r.data()) x = uniform01(rng) < 0.3 ? 0.0 : uniform01(rng);
  return r;
}

}  // namespace detail

/// Random tuples on 6-state instances: each tuple shares or resamples the
/// kernel, policy and reward independently, so degenerate cases are covered.
inline LemmaReport value_difference_sweep(int tuples, std::uint64_t seed, int n_states = 6,
                                          int n_actions = 3, int horizon = 4) {
  LemmaReport total{"value-difference"};
  Rng rng = make_rng(seed, 0x766466);
  const int H = horizon, S = n_states, A = n_actions;
  for (int t = 0; t < tuples; ++t) {
    const auto theta = detail::random_kernel(rng, H, S, A, 0.5);
    const auto pi = detail::random_policy(rng, H, S, A);
    const auto r = detail::random_reward(rng, H, S, A);
    const auto theta_prime =
        (t % 4 == 0) ? theta : detail::random_kernel(rng, H, S, A, 0.5);
    const auto pi_prime = (t % 4 == 1) ? pi : detail::random_policy(rng, H, S, A);
    const auto r_prime = (t % 4 == 2) ? r : detail::random_reward(rng, H, S, A);
    total.merge(value_difference_check(theta, theta_prime, pi, pi_prime, r, r_prime, 0));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Good-event diagnostic

struct GoodEventReport {
  LemmaReport summary;             // one trial per iteration; a violation is ratio > alarm
  std::vector<double> hellinger_sum;  // per iteration k, over batches n < k
  std::vector<double> ratio;          // hellinger_sum / log(K |class| / delta)
  double max_ratio = 0.0;
  double log_k_slope = 0.0;  // least-squares slope of ratio against log(k + 1)
};

/// For each iteration k: sum over stored transitions of batches n < k of the
/// squared Hellinger distance between the selected model's kernel row and the
/// true kernel row, against the confidence radius log(K |class| / delta).
inline GoodEventReport good_event_diagnostic(const OptAcResult& run, const ModelClass& cls,
                                             const TransitionTable& truth, double delta,
                                             double alarm = 10.0) {
  require(delta > 0.0 && delta < 1.0, "good_event_diagnostic: delta must lie in (0, 1)");
  const auto& its = run.metrics.iterations;
  require(run.batches.size() >= its.size(), "good_event_diagnostic: missing stored batches");
  const double K = static_cast<double>(std::max<std::size_t>(its.size(), 1));
  const double radius = std::log(K * cls.size() / delta);

  // Prefix sums per selected model: cum[m][n] covers batches 0 .. n-1.
  std::map<int, std::vector<double>> cum;
  for (const auto& it : its) {
    if (cum.count(it.model)) continue;
    const auto kernel = materialize(cls[it.model]);
    std::vector<double> prefix(its.size() + 1, 0.0);
    for (std::size_t n = 0; n < its.size(); ++n) {
      double batch = 0.0;
      for (const auto& x : run.batches[n].mle_triples())
        batch += hellinger_sq(kernel.row(x.h, x.s, x.a), truth.row(x.h, x.s, x.a));
      prefix[n + 1] = prefix[n] + batch;
    }
    cum.emplace(it.model, std::move(prefix));
  }

  GoodEventReport out;
  out.summary.id = "good-event";
  std::vector<double> lx;
  for (const auto& it : its) {
    const double sum = cum.at(it.model)[static_cast<std::size_t>(it.k)];
    out.hellinger_sum.push_back(sum);
    out.ratio.push_back(sum / radius);
    out.summary.record(sum / radius, alarm);
    out.max_ratio = std::max(out.max_ratio, sum / radius);
    lx.push_back(std::log(static_cast<double>(it.k) + 1.0));
  }
  if (lx.size() >= 2) {
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      mx += lx[i];
      my += out.ratio[i];
    }
    mx /= static_cast<double>(lx.size());
    my /= static_cast<double>(lx.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sxy += (lx[i] - mx) * (out.ratio[i] - my);
      sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    out.log_k_slope = sxx > 0.0 ? sxy / sxx : 0.0;
  }
  return out;
}

}  // namespace lowrank
