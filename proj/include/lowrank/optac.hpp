#pragma once

#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lowrank/dp.hpp"
#include "lowrank/envgen.hpp"
#include "lowrank/mdp.hpp"
#include "lowrank/oracles.hpp"
#include "lowrank/rng.hpp"

namespace lowrank {

enum class CriticMode { Exact, Regression };

/// How the bonus coefficient is set when no explicit value is given.
///   Lemma:       sqrt(lambda d + |A| beta)
///   SqrtActions: sqrt(|A|)
enum class AlphaRule { Lemma, SqrtActions };

struct OptAcConfig {
  int iterations = 2000;  // K
  double epsilon = 0.1;
  double delta = 0.1;
  std::optional<double> beta;
  std::optional<double> alpha;
  std::optional<double> lambda;
  std::optional<double> eta;
  AlphaRule alpha_rule = AlphaRule::Lemma;
  double eta_scale = 1.0;  // multiplies the default step size; ignored when eta is set
  CriticMode critic_mode = CriticMode::Exact;
  long n_pe_samples = 20000;
  std::uint64_t seed = 0;
  int burn_in = 50;  // first iteration counted by the optimism rate
};

struct Hyperparameters {
  double beta = 0.0;
  double alpha = 0.0;
  double lambda = 0.0;
  double eta = 0.0;
};

inline void validate_config(const OptAcConfig& cfg) {
  require(cfg.iterations >= 1, "optac: iterations must be at least 1");
  require(cfg.epsilon > 0.0 && cfg.epsilon < 1.0, "optac: epsilon must lie in (0, 1)");
  require(cfg.delta > 0.0 && cfg.delta < 1.0, "optac: delta must lie in (0, 1)");
  for (const auto& v : {cfg.beta, cfg.alpha, cfg.lambda, cfg.eta})
    require(!v || *v > 0.0, "optac: hyperparameter overrides must be positive");
  require(cfg.eta_scale > 0.0, "optac: eta_scale must be positive");
  require(cfg.n_pe_samples > 0, "optac: n_pe_samples must be positive");
  require(cfg.burn_in >= 0, "optac: burn_in must be nonnegative");
}

/// beta = log(K |Theta| / delta), lambda = 1/d, alpha per AlphaRule,
/// eta = eta_scale * sqrt(log |A|) / (H sqrt(K)); explicit values win.
inline Hyperparameters resolve_hyperparameters(const OptAcConfig& cfg, int class_size,
                                               int n_actions, int horizon, int rank) {
  validate_config(cfg);
  Hyperparameters hp;
  const double K = cfg.iterations;
  hp.beta = cfg.beta.value_or(std::log(K * class_size / cfg.delta));
  hp.lambda = cfg.lambda.value_or(1.0 / rank);
  if (cfg.alpha)
    hp.alpha = *cfg.alpha;
  else if (cfg.alpha_rule == AlphaRule::Lemma)
    hp.alpha = std::sqrt(hp.lambda * rank + n_actions * hp.beta);
  else
    hp.alpha = std::sqrt(static_cast<double>(n_actions));
  // log|A| = 0 for a single action; any positive step is then equivalent.
  const double log_a = n_actions > 1 ? std::log(static_cast<double>(n_actions)) : 1.0;
  hp.eta = cfg.eta.value_or(cfg.eta_scale * std::sqrt(log_a) / (horizon * std::sqrt(K)));
  return hp;
}

// ---------------------------------------------------------------------------
// Exploratory data

/// One roll-in: states s_0 .. s_{t+1} and actions a_0 .. a_t for trajectory t.
/// Actions at steps t-1 and t are uniform, earlier ones follow the current policy.
struct Trajectory {
  int index = 0;
  std::vector<int> states;
  std::vector<int> actions;
};

/// Location of a Gram-matrix sample: the step-h state-action of some trajectory.
struct StateAction {
  int h = 0;
  int s = 0;
  int a = 0;
};

struct ExploratoryBatch {
  std::vector<Trajectory> trajectories;  // exactly H

  /// Step-t transition of trajectory t, for t = 0 .. H-1.
  std::vector<TransitionSample> mle_triples() const {
    std::vector<TransitionSample> out;
    for (const auto& tr : trajectories) {
      const int t = tr.index;
      out.push_back({t, tr.states[t], tr.actions[t], tr.states[t + 1]});
    }
    return out;
  }

  /// Step-h state-action of trajectory h+1; the last step has no trajectory H,
  /// so it reuses trajectory H-1, whose step H-1 action is also uniform.
  std::vector<StateAction> gram_samples() const {
    const int H = static_cast<int>(trajectories.size());
    std::vector<StateAction> out;
    for (int h = 0; h < H; ++h) {
      const auto& tr = trajectories[static_cast<std::size_t>(std::min(h + 1, H - 1))];
      out.push_back({h, tr.states[h], tr.actions[h]});
    }
    return out;
  }
};

/// H roll-ins in the true environment under pi_k with the uniform switch.
inline ExploratoryBatch collect_exploratory(const Environment& env, const Policy& pi, Rng& rng) {
  require_compatible(env.kernel, pi.table(), "policy");
  const int H = env.horizon(), A = env.n_actions();
  ExploratoryBatch batch;
  batch.trajectories.reserve(static_cast<std::size_t>(H));
  for (int t = 0; t < H; ++t) {
    Trajectory tr;
    tr.index = t;
    int s = env.initial_state;
    tr.states.push_back(s);
    for (int h = 0; h <= t; ++h) {
      const int a = h >= t - 1 ? uniform_int(rng, A) : pi.sample(rng, h, s);
      tr.actions.push_back(a);
      s = sample_categorical(rng, env.kernel.row(h, s, a));
      tr.states.push_back(s);
    }
    batch.trajectories.push_back(std::move(tr));
  }
  return batch;
}

inline ExploratoryBatch collect_exploratory(const Environment& env, const Policy& pi,
                                            std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x636f6c);
  return collect_exploratory(env, pi, rng);
}

// ---------------------------------------------------------------------------
// Bonus

/// Raised when a Gram matrix is not symmetric positive definite.
class NotPositiveDefinite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-step Gram matrices lambda I + sum phi phi' and the bonus
/// scale * min{alpha ||phi||_{Gram^-1}, 1}.
class BonusState {
 public:
  BonusState(int horizon, int rank, double lambda, double alpha, double scale)
      : rank_(rank), lambda_(lambda), alpha_(alpha), scale_(scale),
        grams_(static_cast<std::size_t>(horizon),
               lambda * Eigen::MatrixXd::Identity(rank, rank)),
        counts_(static_cast<std::size_t>(horizon), 0) {
    require(horizon > 0 && rank > 0, "BonusState: dimensions must be positive");
    require(lambda > 0.0 && alpha >= 0.0 && scale >= 0.0, "BonusState: invalid coefficients");
    factors_.reserve(grams_.size());
    for (const auto& g : grams_) factors_.emplace_back(g);
  }

  /// Replaces step h's matrix with an arbitrary one (used by tests for non-SPD input).
  void set_gram(int h, const Eigen::MatrixXd& gram, long count) {
    require(gram.rows() == rank_ && gram.cols() == rank_, "BonusState: Gram shape mismatch");
    grams_[h] = gram;
    counts_[h] = count;
    factors_[h].compute(gram);
  }

  /// lambda I plus the outer products of the given feature vectors, in order.
  void rebuild(int h, std::span<const Eigen::VectorXd> features) {
    Eigen::MatrixXd g = lambda_ * Eigen::MatrixXd::Identity(rank_, rank_);
    for (const auto& x : features) g.noalias() += x * x.transpose();
    set_gram(h, g, static_cast<long>(features.size()));
  }

  /// Adds outer products to the current matrix in order; bit-identical to a
  /// rebuild over the concatenated sample list.
  void extend(int h, std::span<const Eigen::VectorXd> features) {
    Eigen::MatrixXd g = grams_[h];
    for (const auto& x : features) g.noalias() += x * x.transpose();
    set_gram(h, g, counts_[h] + static_cast<long>(features.size()));
  }

  /// ||x||_{Gram_h^-1}.
  double elliptical_norm(int h, const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const auto& f = factors_[h];
    if (f.info() != Eigen::Success || !is_symmetric(grams_[h]))
      throw NotPositiveDefinite("bonus: Gram matrix is not symmetric positive definite");
    const Eigen::VectorXd y = f.matrixL().solve(x);
    return std::sqrt(y.squaredNorm());
  }

  /// min{alpha ||x||_{Gram^-1}, 1}.
  double raw(int h, const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return std::min(alpha_ * elliptical_norm(h, x), 1.0);
  }

  double value(int h, const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return scale_ * raw(h, x);
  }

  double log_det(int h) const {
    const auto& f = factors_[h];
    if (f.info() != Eigen::Success)
      throw NotPositiveDefinite("bonus: Gram matrix is not symmetric positive definite");
    return 2.0 * f.matrixL().toDenseMatrix().diagonal().array().log().sum();
  }

  const Eigen::MatrixXd& gram(int h) const { return grams_[h]; }
  long count(int h) const { return counts_[h]; }
  int horizon() const { return static_cast<int>(grams_.size()); }
  int rank() const { return rank_; }
  double lambda() const { return lambda_; }
  double alpha() const { return alpha_; }
  double scale() const { return scale_; }

 private:
  static bool is_symmetric(const Eigen::MatrixXd& m) {
    const double tol = 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff());
    return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
  }

  int rank_;
  double lambda_;
  double alpha_;
  double scale_;
  std::vector<Eigen::MatrixXd> grams_;
  std::vector<long> counts_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> factors_;
};

/// The scaled bonus at (h, s, a) under the feature map of phi_hat.
inline double bonus_value(const BonusState& bonus, const LowRankMDP& phi_hat, int h, int s, int a) {
  return bonus.value(h, as_vector(phi_hat.phi(h, s, a)));
}

/// Rebuilds every step's Gram matrix from all stored samples embedded by phi_hat.
inline void gram_update(BonusState& bonus, const LowRankMDP& phi_hat,
                        std::span<const StateAction> samples) {
  std::vector<std::vector<Eigen::VectorXd>> per_step(static_cast<std::size_t>(bonus.horizon()));
  for (const auto& x : samples)
    per_step[static_cast<std::size_t>(x.h)].push_back(as_vector(phi_hat.phi(x.h, x.s, x.a)));
  for (int h = 0; h < bonus.horizon(); ++h) bonus.rebuild(h, per_step[h]);
}

/// Bonus at every (h, s, a).
inline StepActionTable bonus_table(const BonusState& bonus, const LowRankMDP& phi_hat) {
  StepActionTable out(phi_hat.horizon(), phi_hat.n_states(), phi_hat.n_actions());
  for (int h = 0; h < phi_hat.horizon(); ++h)
    for (int s = 0; s < phi_hat.n_states(); ++s)
      for (int a = 0; a < phi_hat.n_actions(); ++a) out(h, s, a) = bonus_value(bonus, phi_hat, h, s, a);
  return out;
}

// ---------------------------------------------------------------------------
// Actor and critic

/// pi'(a|s) proportional to pi(a|s) exp(eta Q(s,a)), with the row max of Q subtracted first.
inline Policy actor_update(const Policy& pi, const QTable& q, double eta) {
  require(q.same_shape(pi.table()), "actor_update: Q shape does not match the policy");
  StepActionTable next(pi.horizon(), pi.n_states(), pi.n_actions());
  for (int h = 0; h < pi.horizon(); ++h)
    for (int s = 0; s < pi.n_states(); ++s) {
      const auto qrow = q.row(h, s);
      double qmax = -std::numeric_limits<double>::infinity();
      for (double v : qrow) {
        require(std::isfinite(v), "actor_update: non-finite Q value");
        qmax = std::max(qmax, v);
      }
      auto out = next.row(h, s);
      const auto prev = pi.row(h, s);
      double total = 0.0;
      for (std::size_t a = 0; a < out.size(); ++a) {
        out[a] = prev[a] * std::exp(eta * (qrow[a] - qmax));
        total += out[a];
      }
      for (auto& p : out) p /= total;
    }
  return Policy(std::move(next));
}

/// <pi_h(.|s), Q_h(s,.)> - KL(pi_h(.|s) || ref_h(.|s)) / eta at one (h, s).
inline double actor_objective(std::span<const double> candidate, std::span<const double> reference,
                              std::span<const double> q, double eta) {
  double linear = 0.0, kl = 0.0;
  for (std::size_t a = 0; a < q.size(); ++a) {
    linear += candidate[a] * q[a];
    if (candidate[a] > 0.0) kl += candidate[a] * std::log(candidate[a] / reference[a]);
  }
  return linear - kl / eta;
}

/// Critic estimate of Q^pi in theta_hat for the augmented reward.
inline QTable critic(const LowRankMDP& theta_hat, const Policy& pi, const RewardTable& reward,
                     CriticMode mode, long n_pe_samples, std::uint64_t seed, double accuracy,
                     OracleLedger* ledger = nullptr) {
  if (mode == CriticMode::Exact) return pe_exact(theta_hat, pi, reward, ledger);
  PeRegressionOptions opts;
  opts.accuracy = accuracy;
  const auto rho = uniform_state_action(theta_hat.n_states(), theta_hat.n_actions());
  return pe_regression(theta_hat, pi, reward, rho, n_pe_samples, seed, ledger, opts).q;
}

/// f_h(s,a) = TV(T_h(.|s,a), T_hat_h(.|s,a)), unnormalized so entries lie in [0, 2].
inline StepActionTable tv_reward_table(const TransitionTable& truth,
                                       const TransitionTable& estimate) {
  require(truth.horizon() == estimate.horizon() && truth.n_states() == estimate.n_states() &&
              truth.n_actions() == estimate.n_actions(),
          "tv_reward_table: kernel shapes differ");
  StepActionTable out(truth.horizon(), truth.n_states(), truth.n_actions());
  for (int h = 0; h < truth.horizon(); ++h)
    for (int s = 0; s < truth.n_states(); ++s)
      for (int a = 0; a < truth.n_actions(); ++a)
        out(h, s, a) = tv_distance(truth.row(h, s, a), estimate.row(h, s, a));
  return out;
}

/// Conditional next-step TV check at iteration k. For every h >= 1 and (s, a) at
/// step h-1: E_{s'~T_hat_{h-1}(.|s,a), a'~pi_h}[f_h(s',a')] <= alpha ||phi_hat_{h-1}(s,a)||.
struct OptimismCheck {
  int checks = 0;
  int violations = 0;
  double worst_slack = -std::numeric_limits<double>::infinity();  // max lhs - rhs
};

inline OptimismCheck optimism_check(const LowRankMDP& theta_hat, const TransitionTable& hat_kernel,
                                    const StepActionTable& tv, const Policy& pi,
                                    const BonusState& bonus) {
  OptimismCheck out;
  const int H = theta_hat.horizon(), S = theta_hat.n_states(), A = theta_hat.n_actions();
  for (int h = 1; h < H; ++h) {
    std::vector<double> next_tv(static_cast<std::size_t>(S), 0.0);
    for (int n = 0; n < S; ++n)
      for (int a = 0; a < A; ++a) next_tv[n] += pi(h, n, a) * tv(h, n, a);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        const auto row = hat_kernel.row(h - 1, s, a);
        double lhs = 0.0;
        for (int n = 0; n < S; ++n) lhs += row[n] * next_tv[n];
        const double rhs =
            bonus.alpha() * bonus.elliptical_norm(h - 1, as_vector(theta_hat.phi(h - 1, s, a)));
        ++out.checks;
        if (lhs > rhs) ++out.violations;
        out.worst_slack = std::max(out.worst_slack, lhs - rhs);
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Full run

struct IterationMetrics {
  int k = 0;
  int model = 0;
  double gap = 0.0;          // V* - V^{pi_k} in the true environment
  double mixture_gap = 0.0;  // V* - mean_{j<=k} V^{pi_j}
  double bonus_value = 0.0;  // V^{pi_k} in theta_hat with reward b_hat
  double tv_value = 0.0;     // V^{pi_k} in the truth with reward f^(k)
  double cum_bonus_value = 0.0;
  double cum_tv_value = 0.0;
  std::vector<double> log_det;  // per step
  long sl_calls = 0;
  long pe_exact_calls = 0;
  int optimism_checks = 0;
  int optimism_violations = 0;
};

struct RunMetrics {
  std::vector<IterationMetrics> iterations;
  double optimal_value = 0.0;
  double final_mixture_gap = 0.0;  // over pi_0 .. pi_K
  Hyperparameters hyper;
  std::optional<int> truth_index;
  std::string status = "ok";

  /// Fraction of iterations k >= burn_in whose optimism check had no violation.
  double optimism_rate(int burn_in) const {
    int total = 0, clean = 0;
    for (const auto& it : iterations)
      if (it.k >= burn_in) {
        ++total;
        if (it.optimism_violations == 0) ++clean;
      }
    return total == 0 ? 1.0 : static_cast<double>(clean) / total;
  }
};

struct OptAcResult {
  MixturePolicy mixture;
  RunMetrics metrics;
  std::vector<ExploratoryBatch> batches;  // one per iteration, in order
};

/// Opt-AC. The agent sees only trajectories from env and the class; metrics are
/// computed against env with exact dynamic programming.
inline OptAcResult run_optac(const Environment& env, const ModelClass& cls, const OptAcConfig& cfg) {
  require(cls.size() > 0, "run_optac: empty model class");
  const int S = env.n_states(), A = env.n_actions(), H = env.horizon();
  const int d = cls[0].rank();
  for (const auto& m : cls.models)
    require(m.n_states() == S && m.n_actions() == A && m.horizon() == H && m.rank() == d,
            "run_optac: model class dimensions differ from the environment");
  const Hyperparameters hp = resolve_hyperparameters(cfg, cls.size(), A, H, d);
  const int K = cfg.iterations;

  OptAcResult out;
  auto& metrics = out.metrics;
  metrics.hyper = hp;
  metrics.truth_index = cls.truth_index;
  const auto optimal = exact_optimal(env.kernel, env.reward);
  metrics.optimal_value = optimal.v(0, env.initial_state);

  std::vector<TransitionTable> kernels;
  kernels.reserve(cls.models.size());
  for (const auto& m : cls.models) kernels.push_back(materialize(m));

  OracleLedger ledger;
  LogLikelihoodTracker tracker(cls);
  BonusState bonus(H, d, hp.lambda, hp.alpha, 3.0 * H);
  std::vector<StateAction> gram_samples;
  int gram_model = -1;
  std::size_t gram_used = 0;
  int tv_model = -1;
  StepActionTable tv;

  Rng rng = make_rng(cfg.seed, 0x6f7074);
  Policy pi = Policy::uniform(H, S, A);
  out.mixture.components.push_back(pi);
  double value_sum = 0.0;
  double cum_bonus = 0.0, cum_tv = 0.0;
  const double accuracy = 1.0 / std::sqrt(static_cast<double>(K));

  try {
    for (int k = 0; k < K; ++k) {
      IterationMetrics it;
      it.k = k;

      // Model and bonus use batches n < k.
      const int model = mle_select_tracked(tracker, hp.beta, &ledger);
      const auto& theta = cls[model];
      if (model != gram_model) {
        gram_model = model;
        gram_used = 0;
        std::vector<std::vector<Eigen::VectorXd>> per_step(static_cast<std::size_t>(H));
        for (const auto& x : gram_samples)
          per_step[static_cast<std::size_t>(x.h)].push_back(as_vector(theta.phi(x.h, x.s, x.a)));
        for (int h = 0; h < H; ++h) bonus.rebuild(h, per_step[h]);
      } else {
        std::vector<std::vector<Eigen::VectorXd>> per_step(static_cast<std::size_t>(H));
        for (std::size_t i = gram_used; i < gram_samples.size(); ++i) {
          const auto& x = gram_samples[i];
          per_step[static_cast<std::size_t>(x.h)].push_back(as_vector(theta.phi(x.h, x.s, x.a)));
        }
        for (int h = 0; h < H; ++h) bonus.extend(h, per_step[h]);
      }
      gram_used = gram_samples.size();

      const auto b = bonus_table(bonus, theta);
      RewardTable augmented = env.reward;
      for (std::size_t i = 0; i < augmented.data().size(); ++i) augmented.data()[i] += b.data()[i];
      const QTable q = critic(theta, pi, augmented, cfg.critic_mode, cfg.n_pe_samples,
                              mix_seed(cfg.seed, static_cast<std::uint64_t>(k) + 1), accuracy,
                              &ledger);

      // Researcher-side metrics for pi_k.
      const double value = exact_policy_eval(env.kernel, pi, env.reward).v(0, env.initial_state);
      value_sum += value;
      it.model = model;
      it.gap = metrics.optimal_value - value;
      it.mixture_gap = metrics.optimal_value - value_sum / (k + 1);
      it.bonus_value = exact_policy_eval(kernels[model], pi, b).v(0, env.initial_state);
      if (model != tv_model) {
        tv = tv_reward_table(env.kernel, kernels[model]);
        tv_model = model;
      }
      it.tv_value = exact_policy_eval(env.kernel, pi, tv).v(0, env.initial_state);
      cum_bonus += it.bonus_value;
      cum_tv += it.tv_value;
      it.cum_bonus_value = cum_bonus;
      it.cum_tv_value = cum_tv;
      for (int h = 0; h < H; ++h) it.log_det.push_back(bonus.log_det(h));
      const auto opt = optimism_check(theta, kernels[model], tv, pi, bonus);
      it.optimism_checks = opt.checks;
      it.optimism_violations = opt.violations;

      // Data from pi_k enters the estimators from iteration k+1 on.
      auto batch = collect_exploratory(env, pi, rng);
      tracker.add(batch.mle_triples());
      for (const auto& x : batch.gram_samples()) gram_samples.push_back(x);
      out.batches.push_back(std::move(batch));

      pi = actor_update(pi, q, hp.eta);
      out.mixture.components.push_back(pi);
      it.sl_calls = ledger.calls(OracleKind::SL);
      it.pe_exact_calls = ledger.calls(OracleKind::PEExact);
      metrics.iterations.push_back(std::move(it));
    }
    const double last = exact_policy_eval(env.kernel, pi, env.reward).v(0, env.initial_state);
    metrics.final_mixture_gap =
        metrics.optimal_value - (value_sum + last) / static_cast<double>(K + 1);
  } catch (const std::exception& e) {
    metrics.status = std::string("aborted: ") + e.what();
    const auto n = static_cast<double>(metrics.iterations.size());
    metrics.final_mixture_gap = n > 0 ? metrics.optimal_value - value_sum / n
                                      : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

inline OptAcResult run_optac(const LowRankMDP& env, const ModelClass& cls, const OptAcConfig& cfg) {
  return run_optac(Environment::from(env), cls, cfg);
}

inline OptAcResult run_optac(const MisspecifiedEnv& env, const ModelClass& cls,
                             const OptAcConfig& cfg) {
  return run_optac(env.environment(), cls, cfg);
}

}  // namespace lowrank
