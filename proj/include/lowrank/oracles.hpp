#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lowrank/dp.hpp"
#include "lowrank/envgen.hpp"
#include "lowrank/mdp.hpp"
#include "lowrank/rng.hpp"

namespace lowrank {

enum class OracleKind : int { SL = 0, PEExact = 1 };
inline constexpr int kOracleKinds = 2;

inline const char* to_string(OracleKind kind) {
  switch (kind) {
    case OracleKind::SL: return "SL";
    case OracleKind::PEExact: return "PE-exact";
  }
  return "unknown";
}

struct LedgerEntry {
  long calls = 0;
  double min_accuracy = std::numeric_limits<double>::infinity();
};

/// Call counts per oracle kind together with the most stringent accuracy requested.
/// Safe to update concurrently.
class OracleLedger {
 public:
  OracleLedger() {
    for (auto& m : min_accuracy_) m.store(std::numeric_limits<double>::infinity());
  }
  OracleLedger(const OracleLedger&) = delete;
  OracleLedger& operator=(const OracleLedger&) = delete;

  void record(OracleKind kind, double accuracy, long calls = 1) {
    const auto i = static_cast<std::size_t>(kind);
    calls_[i].fetch_add(calls, std::memory_order_relaxed);
    double seen = min_accuracy_[i].load(std::memory_order_relaxed);
    while (accuracy < seen &&
           !min_accuracy_[i].compare_exchange_weak(seen, accuracy, std::memory_order_relaxed)) {
    }
  }

  LedgerEntry get(OracleKind kind) const {
    const auto i = static_cast<std::size_t>(kind);
    return {calls_[i].load(), min_accuracy_[i].load()};
  }
  long calls(OracleKind kind) const { return get(kind).calls; }

  void reset() {
    for (auto& c : calls_) c.store(0);
    for (auto& m : min_accuracy_) m.store(std::numeric_limits<double>::infinity());
  }

 private:
  std::array<std::atomic<long>, kOracleKinds> calls_{};
  std::array<std::atomic<double>, kOracleKinds> min_accuracy_;
};

/// Raised when an unregularized least-squares problem has no unique minimizer.
class DegenerateDesign : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Regression rows (x_i, y_i) with optional nonnegative row weights.
struct SLDataset {
  Eigen::MatrixXd inputs;   // n x d
  Eigen::VectorXd targets;  // n
  Eigen::VectorXd weights;  // empty means unit weights
  std::string distribution = "rho";

  Eigen::Index size() const { return inputs.rows(); }
  Eigen::Index dim() const { return inputs.cols(); }
};

/// Sufficient statistics of a quadratic loss  w'Gw - 2 m'w + c  (sums, not means).
struct NormalEquations {
  Eigen::MatrixXd gram;
  Eigen::VectorXd moment;
  double target_sq = 0.0;
  long rows = 0;

  explicit NormalEquations(Eigen::Index dim = 0)
      : gram(Eigen::MatrixXd::Zero(dim, dim)), moment(Eigen::VectorXd::Zero(dim)) {}

  static NormalEquations from(const SLDataset& data) {
    NormalEquations ne(data.dim());
    if (data.weights.size() == 0) {
      ne.gram.noalias() = data.inputs.transpose() * data.inputs;
      ne.moment.noalias() = data.inputs.transpose() * data.targets;
      ne.target_sq = data.targets.squaredNorm();
    } else {
      const auto& w = data.weights;
      ne.gram.noalias() = data.inputs.transpose() * w.asDiagonal() * data.inputs;
      ne.moment.noalias() = data.inputs.transpose() * w.cwiseProduct(data.targets);
      ne.target_sq = w.dot(data.targets.cwiseProduct(data.targets));
    }
    ne.rows = static_cast<long>(data.size());
    return ne;
  }

  double loss(const Eigen::VectorXd& w) const {
    return w.dot(gram * w) - 2.0 * moment.dot(w) + target_sq;
  }
};

/// Exact minimizer of  w'Gw - 2 m'w + ridge |w|^2  via column-pivoted QR.
/// With ridge == 0 a rank-deficient G raises DegenerateDesign.
inline Eigen::VectorXd sl_solve(const NormalEquations& ne, double ridge,
                                OracleLedger* ledger = nullptr, double accuracy = 0.0) {
  require(ridge >= 0.0, "sl_solve: ridge must be nonnegative");
  const Eigen::Index d = ne.gram.rows();
  Eigen::MatrixXd system = ne.gram;
  system.diagonal().array() += ridge;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(system);
  const double scale = std::max(1.0, system.cwiseAbs().maxCoeff());
  qr.setThreshold(1e-13 * scale);
  if (qr.rank() < d)
    throw DegenerateDesign("sl_solve: singular design; pass a positive ridge");
  Eigen::VectorXd w = qr.solve(ne.moment);
  if (ledger) ledger->record(OracleKind::SL, accuracy);
  return w;
}

/// The supervised-learning oracle: exact ridge least squares on a dataset.
inline Eigen::VectorXd sl_regress(const SLDataset& data, double ridge,
                                  OracleLedger* ledger = nullptr, double accuracy = 0.0) {
  require(data.size() > 0, "sl_regress: empty dataset");
  require(data.targets.size() == data.size(), "sl_regress: target count mismatch");
  require(data.inputs.allFinite() && data.targets.allFinite(), "sl_regress: non-finite entries");
  return sl_solve(NormalEquations::from(data), ridge, ledger, accuracy);
}

/// Gradient of the ridge loss at w; zero at the minimizer.
inline Eigen::VectorXd sl_gradient(const SLDataset& data, double ridge, const Eigen::VectorXd& w) {
  const auto ne = NormalEquations::from(data);
  return 2.0 * (ne.gram * w - ne.moment) + 2.0 * ridge * w;
}

/// Draws (s, a) from a 1-step (states x actions) table.
inline std::pair<int, int> sample_state_action(Rng& rng, const StepActionTable& rho) {
  const int idx = sample_categorical(rng, rho.data());
  return {idx / rho.n_actions(), idx % rho.n_actions()};
}

inline void require_positive_rho(const StepActionTable& rho, int n_states, int n_actions) {
  require(rho.horizon() == 1 && rho.n_states() == n_states && rho.n_actions() == n_actions,
          "rho must be a (states x actions) table");
  for (double p : rho.data()) require(p > 0.0, "rho must be strictly positive");
}

inline Eigen::Map<const Eigen::VectorXd> as_vector(std::span<const double> x) {
  return {x.data(), static_cast<Eigen::Index>(x.size())};
}

/// E_{(s,a)~rho} |q_hat_h - q_h|, maximized over steps h.
inline double rho_error(const QTable& q_hat, const QTable& q, const StepActionTable& rho) {
  require(q_hat.same_shape(q), "rho_error: shape mismatch");
  double worst = 0.0;
  for (int h = 0; h < q.horizon(); ++h) {
    double acc = 0.0;
    for (int s = 0; s < q.n_states(); ++s)
      for (int a = 0; a < q.n_actions(); ++a) acc += rho(0, s, a) * std::abs(q_hat(h, s, a) - q(h, s, a));
    worst = std::max(worst, acc);
  }
  return worst;
}

/// Per-step weights w_0 .. w_{H-1}; Q_h = r_h + phi_h' w_h.
struct StackedWeights {
  std::vector<Eigen::VectorXd> w;

  Eigen::VectorXd flat() const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(w.size()) * (w.empty() ? 0 : w.front().size()));
    Eigen::Index off = 0;
    for (const auto& x : w) {
      out.segment(off, x.size()) = x;
      off += x.size();
    }
    return out;
  }

  static StackedWeights unflat(const Eigen::VectorXd& x, int horizon, int rank) {
    StackedWeights out;
    for (int h = 0; h < horizon; ++h) out.w.push_back(x.segment(h * rank, rank));
    return out;
  }
};

/// Q_h(s,a) = r_h(s,a) + phi_h(s,a)' w_h for every cell.
inline QTable q_from_weights(const LowRankMDP& theta, const RewardTable& reward,
                             const StackedWeights& weights) {
  QTable q(theta.horizon(), theta.n_states(), theta.n_actions());
  for (int h = 0; h < theta.horizon(); ++h)
    for (int s = 0; s < theta.n_states(); ++s)
      for (int a = 0; a < theta.n_actions(); ++a)
        q(h, s, a) = reward(h, s, a) + as_vector(theta.phi(h, s, a)).dot(weights.w[h]);
  return q;
}

/// How the stacked Bellman residual is squared.
///   SingleSample: one (s', a') per row, (residual)^2. A plain least-squares
///                 loss; under stochastic transitions its minimizer also pays for
///                 the conditional variance of the continuation.
///   DoubleSample: two independent (s', a') per (s, a), residual_1 * residual_2,
///                 an unbiased estimate of the squared conditional residual.
enum class BellmanLoss { SingleSample, DoubleSample };

/// The single quadratic over all H Bellman residuals, in sufficient-statistic form.
/// Row at stage h < H-1 is  phi_h(s,a)'w_h - phi_{h+1}(s',a')'w_{h+1}  vs  r_{h+1}(s',a');
/// the last stage regresses phi_{H-1}(s,a)'w_{H-1} onto 0.
class StackedBellmanProblem {
 public:
  StackedBellmanProblem(const LowRankMDP& theta, const Policy& pi, const RewardTable& reward,
                        const StepActionTable& rho, long samples_per_stage, std::uint64_t seed,
                        BellmanLoss loss)
      : horizon_(theta.horizon()), rank_(theta.rank()), normal_(theta.horizon() * theta.rank()) {
    require_compatible(theta, pi);
    require(reward.horizon() == theta.horizon() && reward.n_states() == theta.n_states() &&
                reward.n_actions() == theta.n_actions(),
            "pe_regression: reward dimensions do not match the model");
    require_positive_rho(rho, theta.n_states(), theta.n_actions());
    if (samples_per_stage <= 0) throw std::invalid_argument("pe_regression: n_samples must be positive");

    const int H = horizon_, d = rank_;
    const Eigen::Index dim = static_cast<Eigen::Index>(H) * d;
    const auto kernel = materialize(theta);
    Rng rng = make_rng(seed, 0x7065);
    Eigen::VectorXd u1(dim), u2(dim);
    const int draws = loss == BellmanLoss::DoubleSample ? 2 : 1;
    for (int h = 0; h < H; ++h)
      for (long i = 0; i < samples_per_stage; ++i) {
        const auto [s, a] = sample_state_action(rng, rho);
        double y[2] = {0.0, 0.0};
        Eigen::VectorXd* rows[2] = {&u1, &u2};
        for (int k = 0; k < draws; ++k) {
          Eigen::VectorXd& u = *rows[k];
          u.setZero();
          u.segment(h * d, d) = as_vector(theta.phi(h, s, a));
          if (h + 1 < H) {
            const int next = sample_categorical(rng, kernel.row(h, s, a));
            const int next_a = pi.sample(rng, h + 1, next);
            u.segment((h + 1) * d, d) -= as_vector(theta.phi(h + 1, next, next_a));
            y[k] = reward(h + 1, next, next_a);
          }
        }
        if (draws == 1) {
          normal_.gram.noalias() += u1 * u1.transpose();
          normal_.moment.noalias() += y[0] * u1;
          normal_.target_sq += y[0] * y[0];
        } else {
          normal_.gram.noalias() += 0.5 * (u1 * u2.transpose() + u2 * u1.transpose());
          normal_.moment.noalias() += 0.5 * (y[1] * u1 + y[0] * u2);
          normal_.target_sq += y[0] * y[1];
        }
        ++normal_.rows;
      }
  }

  /// Mean loss at stacked weights.
  double loss(const Eigen::VectorXd& w) const {
    return normal_.loss(w) / static_cast<double>(normal_.rows);
  }

  const NormalEquations& normal_equations() const { return normal_; }
  int horizon() const { return horizon_; }
  int rank() const { return rank_; }

 private:
  int horizon_;
  int rank_;
  NormalEquations normal_;
};

struct PeRegressionOptions {
  double ridge = 1e-8;
  double accuracy = 0.0;  // accuracy recorded in the ledger for the single SL call
  BellmanLoss loss = BellmanLoss::DoubleSample;
};

struct PeRegressionResult {
  QTable q;
  StackedWeights weights;
};

/// Policy evaluation through one stacked regression. Transitions are simulated
/// inside theta: (s,a) ~ rho, s' ~ T_theta, a' ~ pi.
inline PeRegressionResult pe_regression(const LowRankMDP& theta, const Policy& pi,
                                        const RewardTable& reward, const StepActionTable& rho,
                                        long n_samples, std::uint64_t seed,
                                        OracleLedger* ledger = nullptr,
                                        const PeRegressionOptions& opts = {}) {
  const StackedBellmanProblem problem(theta, pi, reward, rho, n_samples, seed, opts.loss);
  const Eigen::VectorXd w = sl_solve(problem.normal_equations(), opts.ridge, ledger, opts.accuracy);
  auto weights = StackedWeights::unflat(w, theta.horizon(), theta.rank());
  return {q_from_weights(theta, reward, weights), std::move(weights)};
}

/// Zero-error policy evaluation by exact backward induction in theta.
inline QTable pe_exact(const LowRankMDP& theta, const Policy& pi, const RewardTable& reward,
                       OracleLedger* ledger = nullptr) {
  auto q = exact_policy_eval(theta, pi, reward).q;
  if (ledger) ledger->record(OracleKind::PEExact, 0.0);
  return q;
}

inline QTable pe_exact(const TransitionTable& kernel, const Policy& pi, const RewardTable& reward,
                       OracleLedger* ledger = nullptr) {
  auto q = exact_policy_eval(kernel, pi, reward).q;
  if (ledger) ledger->record(OracleKind::PEExact, 0.0);
  return q;
}

struct FqiOptions {
  double ridge = 1e-8;
  double accuracy = 0.0;
};

struct FqiResult {
  QTable q;
  StackedWeights weights;
};

namespace detail {

/// max_{a'} (r_{h+1}(s',a') + phi_{h+1}(s',a')' w_{h+1}) for every s'.
inline std::vector<double> greedy_continuation(const LowRankMDP& theta, const RewardTable& reward,
                                               int h_next, const Eigen::VectorXd& w_next) {
  std::vector<double> out(static_cast<std::size_t>(theta.n_states()));
  for (int n = 0; n < theta.n_states(); ++n) {
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < theta.n_actions(); ++a)
      best = std::max(best, reward(h_next, n, a) + as_vector(theta.phi(h_next, n, a)).dot(w_next));
    out[n] = best;
  }
  return out;
}

}  // namespace detail

/// Policy planning by fitted Q-iteration: one regression per stage, h = H-1 .. 0,
/// each onto greedy targets built from the stage above. The last stage has target 0.
inline FqiResult pp_fqi(const LowRankMDP& theta, const RewardTable& reward,
                        const StepActionTable& rho, long n_samples_per_stage, std::uint64_t seed,
                        OracleLedger* ledger = nullptr, const FqiOptions& opts = {}) {
  require_positive_rho(rho, theta.n_states(), theta.n_actions());
  if (n_samples_per_stage <= 0) throw std::invalid_argument("pp_fqi: n_samples must be positive");
  const int H = theta.horizon(), d = theta.rank();
  const auto kernel = materialize(theta);
  Rng rng = make_rng(seed, 0x6671);
  StackedWeights weights;
  weights.w.assign(static_cast<std::size_t>(H), Eigen::VectorXd::Zero(d));
  for (int h = H - 1; h >= 0; --h) {
    std::vector<double> cont;
    if (h + 1 < H) cont = detail::greedy_continuation(theta, reward, h + 1, weights.w[h + 1]);
    NormalEquations ne(d);
    for (long i = 0; i < n_samples_per_stage; ++i) {
      const auto [s, a] = sample_state_action(rng, rho);
      const auto x = as_vector(theta.phi(h, s, a));
      double y = 0.0;
      if (h + 1 < H) y = cont[sample_categorical(rng, kernel.row(h, s, a))];
      ne.gram.noalias() += x * x.transpose();
      ne.moment.noalias() += y * x;
      ne.target_sq += y * y;
      ++ne.rows;
    }
    weights.w[h] = sl_solve(ne, opts.ridge, ledger, opts.accuracy);
  }
  return {q_from_weights(theta, reward, weights), std::move(weights)};
}

/// Fitted Q-iteration where each stage regresses on the full enumerated measure
/// rho(s,a) T(s'|s,a) instead of samples: the infinite-sample limit of pp_fqi.
inline FqiResult pp_fqi_population(const LowRankMDP& theta, const RewardTable& reward,
                                   const StepActionTable& rho, OracleLedger* ledger = nullptr,
                                   const FqiOptions& opts = {}) {
  require_positive_rho(rho, theta.n_states(), theta.n_actions());
  const int H = theta.horizon(), S = theta.n_states(), A = theta.n_actions(), d = theta.rank();
  const auto kernel = materialize(theta);
  StackedWeights weights;
  weights.w.assign(static_cast<std::size_t>(H), Eigen::VectorXd::Zero(d));
  for (int h = H - 1; h >= 0; --h) {
    std::vector<double> cont(static_cast<std::size_t>(S), 0.0);
    if (h + 1 < H) cont = detail::greedy_continuation(theta, reward, h + 1, weights.w[h + 1]);
    NormalEquations ne(d);
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) {
        const auto x = as_vector(theta.phi(h, s, a));
        const auto row = kernel.row(h, s, a);
        for (int n = 0; n < S; ++n) {
          const double wgt = rho(0, s, a) * row[n];
          if (wgt == 0.0) continue;
          ne.gram.noalias() += wgt * x * x.transpose();
          ne.moment.noalias() += wgt * cont[n] * x;
          ne.target_sq += wgt * cont[n] * cont[n];
        }
      }
    ne.rows = static_cast<long>(S) * A;
    weights.w[h] = sl_solve(ne, opts.ridge, ledger, opts.accuracy);
  }
  return {q_from_weights(theta, reward, weights), std::move(weights)};
}

/// Raised when no model satisfies the likelihood constraint.
class InfeasibleConfidenceSet : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CpResult {
  int index = -1;
  QTable q;
  std::vector<int> survivors;
  std::vector<double> values;  // estimated optimal value at s_1, per survivor
};

/// Constrained planning by enumeration: keep models with log-likelihood >= threshold,
/// plan in each with fitted Q-iteration, return the survivor with the largest
/// estimated optimal value at the start state. Ties go to the lowest index.
inline CpResult cp_enumerate(const ModelClass& cls, std::span<const double> log_liks,
                             double threshold, const RewardTable& reward,
                             const StepActionTable& rho, long n_samples, std::uint64_t seed,
                             OracleLedger* ledger = nullptr, const FqiOptions& opts = {}) {
  require(log_liks.size() == cls.models.size(), "cp_enumerate: one log-likelihood per model");
  CpResult out;
  for (int i = 0; i < cls.size(); ++i)
    if (log_liks[i] >= threshold) out.survivors.push_back(i);
  if (out.survivors.empty())
    throw InfeasibleConfidenceSet("cp_enumerate: no model satisfies the likelihood constraint");
  double best = -std::numeric_limits<double>::infinity();
  for (int i : out.survivors) {
    const auto& theta = cls[i];
    auto fit = pp_fqi(theta, reward, rho, n_samples, mix_seed(seed, static_cast<std::uint64_t>(i)),
                      ledger, opts);
    const auto row = fit.q.row(0, theta.initial_state());
    const double value = *std::max_element(row.begin(), row.end());
    out.values.push_back(value);
    if (value > best) {
      best = value;
      out.index = i;
      out.q = std::move(fit.q);
    }
  }
  return out;
}

/// One observed transition at step h.
struct TransitionSample {
  int h = 0;
  int s = 0;
  int a = 0;
  int next = 0;
};

/// Raised when every model assigns probability zero to some observation.
class InconsistentClass : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Running log-likelihood of every model in a class; log 0 = -inf eliminates a model.
class LogLikelihoodTracker {
 public:
  explicit LogLikelihoodTracker(const ModelClass& cls) {
    require(cls.size() > 0, "LogLikelihoodTracker: empty class");
    for (const auto& m : cls.models) kernels_.push_back(materialize(m));
    totals_.assign(kernels_.size(), 0.0);
  }

  void add(const TransitionSample& x) {
    for (std::size_t i = 0; i < kernels_.size(); ++i) {
      const double p = kernels_[i](x.h, x.s, x.a, x.next);
      totals_[i] += p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
    }
  }

  void add(std::span<const TransitionSample> xs) {
    for (const auto& x : xs) add(x);
  }

  const std::vector<double>& log_likelihoods() const { return totals_; }

  /// Exact argmax; ties go to the lowest index.
  int argmax() const {
    int best = -1;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < totals_.size(); ++i)
      if (totals_[i] > best_v) {
        best_v = totals_[i];
        best = static_cast<int>(i);
      }
    if (best < 0) throw InconsistentClass("mle_select: class inconsistent with data");
    return best;
  }

 private:
  std::vector<TransitionTable> kernels_;
  std::vector<double> totals_;
};

/// Model selection from a running tracker; counts as one SL call at accuracy beta.
inline int mle_select_tracked(const LogLikelihoodTracker& tracker, double beta,
                              OracleLedger* ledger = nullptr) {
  const int best = tracker.argmax();
  if (ledger) ledger->record(OracleKind::SL, beta);
  return best;
}

/// Maximum-likelihood model selection by exhaustive scan. The argmax is exact,
/// so the beta-approximate ERM condition holds with zero slack.
inline int mle_select(const ModelClass& cls, std::span<const TransitionSample> data, double beta,
                      OracleLedger* ledger = nullptr) {
  require(cls.size() > 0, "mle_select: empty class");
  LogLikelihoodTracker tracker(cls);
  tracker.add(data);
  return mle_select_tracked(tracker, beta, ledger);
}

}  // namespace lowrank
