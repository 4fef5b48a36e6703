#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "lowrank/envgen.hpp"
#include "lowrank/optac.hpp"

using namespace lowrank;

namespace {

const LowRankMDP& acceptance_env() {
  static const LowRankMDP env = gen_lowrank(7, 20, 4, 5, 3);
  return env;
}

const ModelClass& acceptance_class() {
  static const ModelClass cls = gen_model_class(acceptance_env(), 32, 11);
  return cls;
}

OptAcConfig tuned_config(int iterations, std::uint64_t seed) {
  OptAcConfig cfg;
  cfg.iterations = iterations;
  cfg.alpha = 0.1;
  cfg.eta_scale = 10.0;
  cfg.seed = seed;
  return cfg;
}

Eigen::VectorXd unit(int d, int i) {
  Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
  e[i] = 1.0;
  return e;
}

}  // namespace

TEST(Hyperparameters, DefaultsFollowTheoremSettings) {
  OptAcConfig cfg;
  const auto hp = resolve_hyperparameters(cfg, 32, 4, 5, 3);
  const double beta = std::log(2000.0 * 32 / 0.1);
  EXPECT_DOUBLE_EQ(hp.beta, beta);
  EXPECT_DOUBLE_EQ(hp.lambda, 1.0 / 3);
  EXPECT_DOUBLE_EQ(hp.alpha, std::sqrt(1.0 + 4 * beta));
  EXPECT_DOUBLE_EQ(hp.eta, std::sqrt(std::log(4.0)) / (5 * std::sqrt(2000.0)));
  cfg.alpha_rule = AlphaRule::SqrtActions;
  EXPECT_DOUBLE_EQ(resolve_hyperparameters(cfg, 32, 4, 5, 3).alpha, 2.0);
}

TEST(Hyperparameters, OverridesWinAndInvalidValuesThrow) {
  OptAcConfig cfg;
  cfg.beta = 1.5;
  cfg.eta = 0.25;
  cfg.lambda = 2.0;
  const auto hp = resolve_hyperparameters(cfg, 8, 3, 4, 2);
  EXPECT_EQ(hp.beta, 1.5);
  EXPECT_EQ(hp.eta, 0.25);
  EXPECT_EQ(hp.lambda, 2.0);
  cfg.alpha = -1.0;
  EXPECT_THROW(resolve_hyperparameters(cfg, 8, 3, 4, 2), std::invalid_argument);
  OptAcConfig bad;
  bad.epsilon = 1.0;
  EXPECT_THROW(validate_config(bad), std::invalid_argument);
}

TEST(Exploration, SingleStepHasOneUniformTrajectory) {
  const auto env = Environment::from(gen_lowrank(1, 5, 3, 1, 2));
  const auto batch = collect_exploratory(env, Policy::uniform(1, 5, 3), 4);
  ASSERT_EQ(batch.trajectories.size(), 1u);
  EXPECT_EQ(batch.trajectories[0].actions.size(), 1u);
  EXPECT_EQ(batch.trajectories[0].states.size(), 2u);
  ASSERT_EQ(batch.mle_triples().size(), 1u);
  ASSERT_EQ(batch.gram_samples().size(), 1u);
}

TEST(Exploration, TaggedStepsAreUniformAndEarlierStepsFollowPolicy) {
  const auto env = Environment::from(acceptance_env());
  // A policy that always picks action 3 makes roll-in steps easy to tell apart.
  const std::vector<int> greedy(5 * 20, 3);
  const auto pi = Policy::deterministic(5, 20, 4, greedy);
  Rng rng = make_rng(5, 5);
  const int n = 10000;
  // counts[t][h][a]
  std::vector<std::vector<std::vector<int>>> counts(
      5, std::vector<std::vector<int>>(5, std::vector<int>(4, 0)));
  for (int i = 0; i < n; ++i) {
    const auto batch = collect_exploratory(env, pi, rng);
    ASSERT_EQ(batch.trajectories.size(), 5u);
    for (const auto& tr : batch.trajectories) {
      ASSERT_EQ(static_cast<int>(tr.actions.size()), tr.index + 1);
      for (int h = 0; h <= tr.index; ++h) ++counts[tr.index][h][tr.actions[h]];
    }
  }
  const double se = std::sqrt(0.25 * 0.75 / n);
  for (int t = 0; t < 5; ++t)
    for (int h = 0; h <= t; ++h)
      for (int a = 0; a < 4; ++a) {
        const double freq = counts[t][h][a] / double(n);
        if (h >= t - 1)
          EXPECT_NEAR(freq, 0.25, 3 * se) << "t=" << t << " h=" << h << " a=" << a;
        else
          EXPECT_EQ(freq, a == 3 ? 1.0 : 0.0);
      }
}

TEST(Exploration, DerivedSamplesComeFromTheRightTrajectories) {
  const auto env = Environment::from(acceptance_env());
  const auto batch = collect_exploratory(env, Policy::uniform(5, 20, 4), 9);
  const auto triples = batch.mle_triples();
  const auto gram = batch.gram_samples();
  for (int h = 0; h < 5; ++h) {
    const auto& tr = batch.trajectories[h];
    EXPECT_EQ(triples[h].h, h);
    EXPECT_EQ(triples[h].s, tr.states[h]);
    EXPECT_EQ(triples[h].a, tr.actions[h]);
    EXPECT_EQ(triples[h].next, tr.states[h + 1]);
    const auto& src = batch.trajectories[std::min(h + 1, 4)];
    EXPECT_EQ(gram[h].s, src.states[h]);
    EXPECT_EQ(gram[h].a, src.actions[h]);
  }
}

TEST(Bonus, EmptyGramMatchesClosedForm) {
  const int H = 4, d = 3;
  for (double alpha : {0.2, 0.5, 2.0}) {
    const double lambda = 1.0 / d;
    BonusState bonus(H, d, lambda, alpha, 3.0 * H);
    const double expected = 3.0 * H * std::min(alpha / std::sqrt(lambda), 1.0);
    EXPECT_NEAR(bonus.value(0, unit(d, 1)), expected, 1e-12);
    EXPECT_EQ(bonus.value(2, Eigen::VectorXd::Zero(d)), 0.0);
  }
}

TEST(Bonus, ShrinksOnlyAlongObservedDirection) {
  const int H = 2, d = 3;
  const double lambda = 1.0 / 3, alpha = 1.0;
  BonusState bonus(H, d, lambda, alpha, 3.0 * H);
  const std::vector<Eigen::VectorXd> samples(10000, unit(d, 0));
  bonus.rebuild(0, samples);
  EXPECT_LE(bonus.value(0, unit(d, 0)), 0.02 * 3 * H);
  EXPECT_NEAR(bonus.value(0, unit(d, 2)), 3.0 * H * std::min(alpha / std::sqrt(lambda), 1.0), 1e-12);
}

TEST(Bonus, StaysInRangeAndNeverGrowsWithData) {
  const int H = 1, d = 4;
  Rng rng = make_rng(3, 3);
  const auto random_feature = [&] {
    const auto w = sample_dirichlet(rng, d, 0.5);
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(w.data(), d));
  };
  std::vector<Eigen::VectorXd> probes, data;
  for (int i = 0; i < 50; ++i) probes.push_back(random_feature());
  BonusState bonus(H, d, 0.25, 3.0, 3.0 * H);
  std::vector<double> last(probes.size(), 3.0 * H);
  for (int round = 0; round < 20; ++round) {
    for (int i = 0; i < 10; ++i) data.push_back(random_feature());
    bonus.rebuild(0, data);
    for (std::size_t p = 0; p < probes.size(); ++p) {
      const double b = bonus.value(0, probes[p]);
      EXPECT_GE(b, 0.0);
      EXPECT_LE(b, 3.0 * H);
      EXPECT_LE(b, last[p] + 1e-12);
      last[p] = b;
    }
  }
}

TEST(Bonus, NonPositiveDefiniteGramThrows) {
  BonusState bonus(1, 2, 0.5, 1.0, 3.0);
  Eigen::MatrixXd g(2, 2);
  g << 1.0, 2.0, 2.0, 1.0;
  bonus.set_gram(0, g, 0);
  EXPECT_THROW(bonus.value(0, unit(2, 0)), NotPositiveDefinite);
  g << 1.0, 0.5, 0.0, 1.0;
  bonus.set_gram(0, g, 0);
  EXPECT_THROW(bonus.value(0, unit(2, 0)), NotPositiveDefinite);
}

TEST(Bonus, ExtendIsBitIdenticalToRebuild) {
  Rng rng = make_rng(4, 4);
  std::vector<Eigen::VectorXd> all;
  for (int i = 0; i < 30; ++i) {
    const auto w = sample_dirichlet(rng, 3, 0.5);
    all.emplace_back(Eigen::Map<const Eigen::VectorXd>(w.data(), 3));
  }
  BonusState a(1, 3, 1.0 / 3, 1.0, 3.0), b(1, 3, 1.0 / 3, 1.0, 3.0);
  a.rebuild(0, all);
  b.rebuild(0, std::span(all).first(12));
  b.extend(0, std::span(all).subspan(12));
  EXPECT_EQ(a.gram(0), b.gram(0));
  EXPECT_EQ(a.count(0), 30);
  EXPECT_EQ(b.count(0), 30);
}

TEST(GramUpdate, NoSamplesGiveScaledIdentity) {
  BonusState bonus(3, 3, 0.5, 1.0, 9.0);
  gram_update(bonus, acceptance_env(), {});
  for (int h = 0; h < 3; ++h) EXPECT_EQ(bonus.gram(h), 0.5 * Eigen::MatrixXd::Identity(3, 3));
}

TEST(GramUpdate, UnitVectorCopiesGiveDiagonal) {
  // Two-state model whose only feature is e1 at (h, 0, 0).
  const LowRankMDP m({2, 1, 1, 3}, {1.0, 0.0, 0.0, 1.0, 0.0, 0.0},
                     {0.5, 0.0, 0.0, 0.5, 0.0, 0.0}, RewardTable(1, 2, 1));
  const double lambda = 0.25;
  BonusState bonus(1, 3, lambda, 1.0, 3.0);
  const std::vector<StateAction> samples(7, StateAction{0, 0, 0});
  gram_update(bonus, m, samples);
  Eigen::MatrixXd expected = lambda * Eigen::MatrixXd::Identity(3, 3);
  expected(0, 0) += 7;
  EXPECT_EQ(bonus.gram(0), expected);
}

TEST(GramUpdate, GramDominatesLambdaIdentityAndIsSymmetric) {
  const auto env = Environment::from(acceptance_env());
  const auto pi = Policy::uniform(5, 20, 4);
  std::vector<StateAction> samples;
  Rng rng = make_rng(6, 6);
  for (int i = 0; i < 200; ++i)
    for (const auto& x : collect_exploratory(env, pi, rng).gram_samples()) samples.push_back(x);
  const double lambda = 1.0 / 3;
  BonusState bonus(5, 3, lambda, 1.0, 15.0);
  gram_update(bonus, acceptance_env(), samples);
  for (int h = 0; h < 5; ++h) {
    const auto& g = bonus.gram(h);
    EXPECT_LE((g - g.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g - lambda * Eigen::MatrixXd::Identity(3, 3));
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10);
    EXPECT_EQ(bonus.count(h), 200);
  }
}

TEST(Actor, ConstantRowsAndZeroStepLeavePolicyUnchanged) {
  Rng rng = make_rng(7, 7);
  const auto pi = fixtures::random_policy(rng, 3, 4, 3);
  QTable q(3, 4, 3);
  for (int h = 0; h < 3; ++h)
    for (int s = 0; s < 4; ++s)
      for (int a = 0; a < 3; ++a) q(h, s, a) = h + 0.5 * s;
  const auto same = actor_update(pi, q, 5.0);
  for (std::size_t i = 0; i < pi.table().data().size(); ++i)
    EXPECT_NEAR(same.table().data()[i], pi.table().data()[i], 1e-15);
  for (auto& x : q.data()) x = uniform01(rng);
  const auto zero = actor_update(pi, q, 0.0);
  for (std::size_t i = 0; i < pi.table().data().size(); ++i)
    EXPECT_NEAR(zero.table().data()[i], pi.table().data()[i], 1e-15);
}

TEST(Actor, LargeStepConcentratesOnArgmax) {
  const auto pi = Policy::uniform(2, 3, 4);
  QTable q(2, 3, 4);
  for (int h = 0; h < 2; ++h)
    for (int s = 0; s < 3; ++s)
      for (int a = 0; a < 4; ++a) q(h, s, a) = ((a + s) % 4) * 1.0;
  const auto next = actor_update(pi, q, 100.0);
  for (int h = 0; h < 2; ++h)
    for (int s = 0; s < 3; ++s) EXPECT_GE(next(h, s, (3 - s + 4) % 4), 0.99);
}

TEST(Actor, UpdateMaximizesRegularizedObjective) {
  const int H = 3, S = 4, A = 5;
  Rng rng = make_rng(8, 8);
  const auto pi = fixtures::random_policy(rng, H, S, A);
  QTable q(H, S, A);
  for (auto& x : q.data()) x = 3.0 * uniform01(rng);
  const double eta = 0.7;
  const auto next = actor_update(pi, q, eta);
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s) {
      const double best = actor_objective(next.row(h, s), pi.row(h, s), q.row(h, s), eta);
      for (int t = 0; t < 100; ++t) {
        const auto other = sample_dirichlet(rng, A, 0.5);
        EXPECT_GE(best + 1e-12, actor_objective(other, pi.row(h, s), q.row(h, s), eta));
      }
    }
}

TEST(Critic, ExactModeDelegatesToPeExact) {
  const auto& env = acceptance_env();
  RewardTable r = env.rewards();
  for (auto& x : r.data()) x += 0.5;
  OracleLedger ledger;
  const auto pi = Policy::uniform(5, 20, 4);
  EXPECT_EQ(critic(env, pi, r, CriticMode::Exact, 1, 1, 0.0, &ledger), pe_exact(env, pi, r));
  EXPECT_EQ(ledger.calls(OracleKind::PEExact), 1);
}

TEST(Critic, RegressionMeetsAccuracyContract) {
  const auto& env = acceptance_env();
  const auto truth = Environment::from(env);
  const int K = 400;
  const auto hp = resolve_hyperparameters(tuned_config(K, 1), 32, 4, 5, 3);
  const auto pi = Policy::uniform(5, 20, 4);
  const auto rho = uniform_state_action(20, 4);
  std::vector<StateAction> samples;
  Rng rng = make_rng(7, 1);
  for (int n = 0; n <= 1000; n += 250) {
    BonusState bonus(5, 3, hp.lambda, hp.alpha, 15.0);
    gram_update(bonus, env, samples);
    RewardTable r = env.rewards();
    const auto b = bonus_table(bonus, env);
    for (std::size_t i = 0; i < r.data().size(); ++i) r.data()[i] += b.data()[i];
    OracleLedger ledger;
    const auto q = critic(env, pi, r, CriticMode::Regression, 20000, 7, 1.0 / std::sqrt(K), &ledger);
    EXPECT_LE(rho_error(q, pe_exact(env, pi, r), rho), 1.0 / std::sqrt(K)) << n << " batches";
    EXPECT_EQ(ledger.calls(OracleKind::SL), 1);
    for (int i = 0; i < 250; ++i)
      for (const auto& x : collect_exploratory(truth, pi, rng).gram_samples()) samples.push_back(x);
  }
}

TEST(Critic, ValuesWithinAugmentedRange) {
  const auto& env = acceptance_env();
  const int H = 5;
  BonusState bonus(H, 3, 1.0 / 3, 5.0, 3.0 * H);
  RewardTable r = env.rewards();
  const auto b = bonus_table(bonus, env);
  for (std::size_t i = 0; i < r.data().size(); ++i) r.data()[i] += b.data()[i];
  Rng rng = make_rng(9, 9);
  const auto q = critic(env, fixtures::random_policy(rng, H, 20, 4), r, CriticMode::Exact, 1, 1, 0.0);
  for (double x : q.data()) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, H * (1.0 + 3.0 * H));
  }
}

TEST(TvReward, ZeroForTruthAndBoundedByTwo) {
  const auto& cls = acceptance_class();
  const auto truth = materialize(acceptance_env());
  for (double x : tv_reward_table(truth, truth).data()) EXPECT_EQ(x, 0.0);
  for (int i = 0; i < cls.size(); ++i)
    for (double x : tv_reward_table(truth, materialize(cls[i])).data()) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 2.0);
    }
}

TEST(RunOptAc, SingletonClassSelectsTruth) {
  ModelClass cls;
  cls.models = {acceptance_env()};
  cls.truth_index = 0;
  OptAcConfig cfg;
  cfg.iterations = 1;
  const auto run = run_optac(acceptance_env(), cls, cfg);
  ASSERT_EQ(run.metrics.iterations.size(), 1u);
  EXPECT_EQ(run.metrics.iterations[0].model, 0);
  EXPECT_EQ(run.mixture.components.size(), 2u);
  EXPECT_EQ(run.metrics.status, "ok");
}

TEST(RunOptAc, MixtureGapIsAverageOfComponentGaps) {
  const auto run = run_optac(acceptance_env(), acceptance_class(), tuned_config(30, 2));
  const auto truth = Environment::from(acceptance_env());
  const double v = mixture_value(truth.kernel, run.mixture, truth.reward, 0);
  EXPECT_NEAR(run.metrics.final_mixture_gap, run.metrics.optimal_value - v, 1e-12);
  for (const auto& it : run.metrics.iterations) {
    EXPECT_GE(it.gap, -1e-9);
    EXPECT_GE(it.mixture_gap, -1e-9);
  }
}

TEST(RunOptAc, LedgerCountsAndLogDetBound) {
  const int K = 200;
  const auto run = run_optac(acceptance_env(), acceptance_class(), tuned_config(K, 3));
  const auto& its = run.metrics.iterations;
  ASSERT_EQ(static_cast<int>(its.size()), K);
  long last_sl = 0;
  for (const auto& it : its) {
    EXPECT_EQ(it.sl_calls, it.k + 1);  // one MLE per iteration; exact critic adds no SL call
    EXPECT_EQ(it.pe_exact_calls, it.k + 1);
    EXPECT_GE(it.sl_calls, last_sl);
    last_sl = it.sl_calls;
    const double lambda = run.metrics.hyper.lambda;
    for (double ld : it.log_det) EXPECT_LE(ld, 3 * std::log(lambda + it.k) + 1e-9);
  }
}

TEST(RunOptAc, CumulativeTvGrowsSublinearly) {
  const int K = 2000;
  const auto run = run_optac(acceptance_env(), acceptance_class(), tuned_config(K, 1));
  const auto& its = run.metrics.iterations;
  const double full = its[K - 1].cum_tv_value, quarter = its[K / 4 - 1].cum_tv_value;
  ASSERT_GT(quarter, 0.0);
  EXPECT_LE(full / quarter, 3.0);
}

TEST(RunOptAc, SelectedModelLocksOntoTruth) {
  const int K = 2000;
  int locked = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto run = run_optac(acceptance_env(), acceptance_class(), tuned_config(K, seed));
    int last_wrong = -1;
    for (const auto& it : run.metrics.iterations)
      if (it.model != *acceptance_class().truth_index) last_wrong = it.k;
    locked += last_wrong < K / 2;
  }
  EXPECT_GE(locked, 18);
}

TEST(RunOptAc, AbortKeepsPartialMetrics) {
  // The environment stays put; the only model always moves right, so the first
  // batch of data has zero likelihood and the second model selection fails.
  TransitionTable stay(2, 3, 2), move(2, 3, 2);
  for (int h = 0; h < 2; ++h)
    for (int s = 0; s < 3; ++s)
      for (int a = 0; a < 2; ++a) {
        stay(h, s, a, s) = 1.0;
        move(h, s, a, (s + 1) % 3) = 1.0;
      }
  RewardTable r(2, 3, 2, 0.0);
  r(1, 2, 0) = 1.0;
  ModelClass cls;
  cls.models = {fixtures::tabular_as_lowrank(move, r)};
  OptAcConfig cfg;
  cfg.iterations = 10;
  const auto run = run_optac(Environment{stay, r, 0}, cls, cfg);
  EXPECT_EQ(run.metrics.iterations.size(), 1u);
  EXPECT_EQ(run.metrics.status.rfind("aborted", 0), 0u) << run.metrics.status;
  EXPECT_TRUE(std::isfinite(run.metrics.final_mixture_gap));
}

TEST(RunOptAc, SameSeedIsDeterministic) {
  const auto a = run_optac(acceptance_env(), acceptance_class(), tuned_config(20, 5));
  const auto b = run_optac(acceptance_env(), acceptance_class(), tuned_config(20, 5));
  ASSERT_EQ(a.metrics.iterations.size(), b.metrics.iterations.size());
  for (std::size_t i = 0; i < a.metrics.iterations.size(); ++i) {
    EXPECT_EQ(a.metrics.iterations[i].gap, b.metrics.iterations[i].gap);
    EXPECT_EQ(a.metrics.iterations[i].model, b.metrics.iterations[i].model);
  }
  EXPECT_EQ(a.mixture.components, b.mixture.components);
}
