#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "lowrank/dp.hpp"
#include "lowrank/envgen.hpp"

using namespace lowrank;
using lowrank::fixtures::chain_kernel;
using lowrank::fixtures::random_kernel;
using lowrank::fixtures::random_policy;

namespace {

RewardTable random_reward(std::uint64_t seed, int H, int S, int A) {
  Rng rng = make_rng(seed, 7);
  RewardTable r(H, S, A);
  for (auto& x : r.data()) x = uniform01(rng);
  return r;
}

}  // namespace

TEST(PolicyEval, SatisfiesBellmanEquation) {
  const int H = 4, S = 6, A = 3;
  const auto k = random_kernel(1, H, S, A);
  const auto r = random_reward(1, H, S, A);
  Rng rng = make_rng(1, 2);
  const auto pi = random_policy(rng, H, S, A);
  const auto pv = exact_policy_eval(k, pi, r);
  for (int h = 0; h < H; ++h)
    for (int s = 0; s < S; ++s) {
      double v = 0.0;
      for (int a = 0; a < A; ++a) {
        double cont = 0.0;
        for (int n = 0; n < S; ++n) cont += k(h, s, a, n) * pv.v(h + 1, n);
        EXPECT_NEAR(pv.q(h, s, a), r(h, s, a) + cont, 1e-9);
        v += pi(h, s, a) * pv.q(h, s, a);
      }
      EXPECT_NEAR(pv.v(h, s), v, 1e-9);
    }
  for (int s = 0; s < S; ++s) EXPECT_EQ(pv.v(H, s), 0.0);
}

TEST(PolicyEval, SingleStepUnitRewardHasValueOne) {
  const auto k = random_kernel(2, 1, 3, 2);
  const auto pv = exact_policy_eval(k, Policy::uniform(1, 3, 2), constant_reward(1, 3, 2, 1.0));
  for (int s = 0; s < 3; ++s) EXPECT_DOUBLE_EQ(pv.v(0, s), 1.0);
}

TEST(PolicyEval, ZeroRewardGivesZeroValues) {
  const auto k = random_kernel(3, 3, 4, 2);
  const auto pv = exact_policy_eval(k, Policy::uniform(3, 4, 2), constant_reward(3, 4, 2, 0.0));
  for (double q : pv.q.data()) EXPECT_EQ(q, 0.0);
  for (double v : pv.v.data()) EXPECT_EQ(v, 0.0);
}

TEST(PolicyEval, ValuesBoundedByHorizon) {
  const int H = 5, S = 7, A = 3;
  const auto k = random_kernel(4, H, S, A);
  const auto r = random_reward(4, H, S, A);
  Rng rng = make_rng(4, 1);
  for (int t = 0; t < 20; ++t) {
    const auto pv = exact_policy_eval(k, random_policy(rng, H, S, A), r);
    for (int h = 0; h <= H; ++h)
      for (int s = 0; s < S; ++s) {
        EXPECT_GE(pv.v(h, s), 0.0);
        EXPECT_LE(pv.v(h, s), H - h + 1e-12);
      }
  }
}

TEST(PolicyEval, RejectsMismatchedPolicy) {
  const auto k = random_kernel(5, 2, 3, 2);
  EXPECT_THROW(exact_policy_eval(k, Policy::uniform(2, 3, 3), constant_reward(2, 3, 2, 0.0)),
               std::invalid_argument);
}

TEST(Optimal, DeterministicChainReachesGoal) {
  const int H = 3, S = 3;
  RewardTable r(H, S, 2, 0.0);
  r(H - 1, S - 1, 0) = r(H - 1, S - 1, 1) = 1.0;
  const auto opt = exact_optimal(chain_kernel(H, S), r);
  EXPECT_DOUBLE_EQ(opt.v(0, 0), 1.0);
  EXPECT_EQ(opt.greedy(0, 0, 1), 1.0);
  EXPECT_DOUBLE_EQ(exact_policy_eval(chain_kernel(H, S), opt.greedy, r).v(0, 0), 1.0);
}

TEST(Optimal, DominatesRandomPolicies) {
  const int H = 4, S = 6, A = 3;
  const auto k = random_kernel(6, H, S, A);
  const auto r = random_reward(6, H, S, A);
  const auto opt = exact_optimal(k, r);
  Rng rng = make_rng(6, 3);
  for (int t = 0; t < 100; ++t) {
    const auto pv = exact_policy_eval(k, random_policy(rng, H, S, A), r);
    for (int h = 0; h < H; ++h)
      for (int s = 0; s < S; ++s) ASSERT_GE(opt.v(h, s) + 1e-12, pv.v(h, s));
  }
}

TEST(Optimal, MatchesEnumerationOfDeterministicPolicies) {
  const int H = 3, S = 4, A = 2;
  const auto k = random_kernel(8, H, S, A);
  const auto r = random_reward(8, H, S, A);
  const auto opt = exact_optimal(k, r);
  const int cells = H * S;
  double best = -1.0;
  std::vector<int> actions(static_cast<std::size_t>(cells));
  for (int mask = 0; mask < (1 << cells); ++mask) {
    for (int i = 0; i < cells; ++i) actions[i] = (mask >> i) & 1;
    const auto pi = Policy::deterministic(H, S, A, actions);
    best = std::max(best, exact_policy_eval(k, pi, r).v(0, 0));
  }
  EXPECT_NEAR(opt.v(0, 0), best, 1e-12);
}

TEST(Optimal, GreedyPolicyAttainsOptimalValue) {
  const auto env = gen_lowrank(7, 20, 4, 5, 3);
  const auto opt = exact_optimal(env, env.rewards());
  const auto pv = exact_policy_eval(env, opt.greedy, env.rewards());
  for (int h = 0; h < 5; ++h)
    for (int s = 0; s < 20; ++s) EXPECT_NEAR(pv.v(h, s), opt.v(h, s), 1e-12);
}

TEST(MonteCarlo, UniformPolicyValueMatchesExact) {
  const auto env = gen_lowrank(7, 20, 4, 5, 3);
  const auto k = materialize(env);
  const auto pi = Policy::uniform(5, 20, 4);
  const double exact = exact_policy_eval(k, pi, env.rewards()).v(0, 0);
  Rng rng = make_rng(7, 99);
  const int n = 1000000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rollout_return(k, env.rewards(), pi, 0, rng);
    sum += g;
    sum_sq += g * g;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum_sq / n - mean * mean) / n);
  EXPECT_NEAR(mean, exact, 3 * se);
}

TEST(MonteCarlo, OccupancyMatchesEmpiricalFrequencies) {
  const int H = 5, S = 20, A = 4;
  const auto env = gen_lowrank(7, S, A, H, 3);
  const auto k = materialize(env);
  const auto pi = Policy::uniform(H, S, A);
  const auto occ = occupancy(k, pi, 0);
  StepActionTable counts(H, S, A);
  Rng rng = make_rng(7, 98);
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    int s = 0;
    for (int h = 0; h < H; ++h) {
      const int a = pi.sample(rng, h, s);
      counts(h, s, a) += 1.0;
      s = sample_categorical(rng, k.row(h, s, a));
    }
  }
  for (std::size_t i = 0; i < occ.data().size(); ++i) {
    const double p = occ.data()[i];
    const double se = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(counts.data()[i] / n, p, 4 * se + 1e-9);
  }
}

TEST(Occupancy, StartsAsPointMassAndStepsSumToOne) {
  const int H = 4, S = 5, A = 3;
  const auto k = random_kernel(9, H, S, A);
  Rng rng = make_rng(9, 1);
  const auto pi = random_policy(rng, H, S, A);
  const auto occ = occupancy(k, pi, 2);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) EXPECT_EQ(occ(0, s, a), s == 2 ? pi(0, 2, a) : 0.0);
  for (int h = 0; h < H; ++h) {
    double total = 0.0;
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < A; ++a) total += occ(h, s, a);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Occupancy, NextMarginalIsPushForward) {
  const int H = 4, S = 5, A = 3;
  const auto k = random_kernel(10, H, S, A);
  Rng rng = make_rng(10, 1);
  const auto pi = random_policy(rng, H, S, A);
  const auto occ = occupancy(k, pi, 0);
  for (int h = 0; h + 1 < H; ++h)
    for (int n = 0; n < S; ++n) {
      double pushed = 0.0, marginal = 0.0;
      for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) pushed += occ(h, s, a) * k(h, s, a, n);
      for (int a = 0; a < A; ++a) marginal += occ(h + 1, n, a);
      EXPECT_NEAR(marginal, pushed, 1e-12);
    }
}

TEST(Occupancy, ValueIsRewardUnderOccupancy) {
  const int H = 4, S = 5, A = 3;
  const auto k = random_kernel(11, H, S, A);
  const auto r = random_reward(11, H, S, A);
  Rng rng = make_rng(11, 1);
  const auto pi = random_policy(rng, H, S, A);
  const auto occ = occupancy(k, pi, 0);
  double total = 0.0;
  for (std::size_t i = 0; i < occ.data().size(); ++i) total += occ.data()[i] * r.data()[i];
  EXPECT_NEAR(total, exact_policy_eval(k, pi, r).v(0, 0), 1e-12);
}

TEST(Coverage, UniformRhoOnSingleStateIsOne) {
  const auto k = random_kernel(12, 3, 1, 4);
  const std::vector<Policy> pis = {Policy::uniform(3, 1, 4)};
  EXPECT_NEAR(coverage_constant(k, pis, uniform_state_action(1, 4), 0), 1.0, 1e-12);
}

TEST(Coverage, PointMassVisitGivesNumberOfStates) {
  // Stay-put chain: the start state is visited with probability one at every step.
  const int S = 5;
  const auto k = chain_kernel(3, S);
  const std::vector<int> stay(static_cast<std::size_t>(3 * S), 0);
  const std::vector<Policy> pis = {Policy::deterministic(3, S, 2, stay)};
  EXPECT_NEAR(coverage_constant(k, pis, uniform_state_action(S, 2), 0), S, 1e-12);
}

TEST(Coverage, ZeroRhoAtVisitedPairThrows) {
  const auto k = chain_kernel(2, 3);
  const std::vector<Policy> pis = {Policy::uniform(2, 3, 2)};
  auto rho = uniform_state_action(3, 2);
  rho(0, 0, 1) = 0.0;
  EXPECT_THROW(coverage_constant(k, pis, rho, 0), Uncoverable);
}

TEST(Distances, TotalVariationIsUnnormalized) {
  const std::vector<double> p = {1.0, 0.0}, q = {0.0, 1.0}, r = {0.5, 0.5};
  EXPECT_DOUBLE_EQ(tv_distance(p, q), 2.0);
  EXPECT_DOUBLE_EQ(tv_distance(p, r), 1.0);
  EXPECT_DOUBLE_EQ(tv_distance(r, r), 0.0);
}

TEST(Distances, HellingerExamples) {
  const std::vector<double> p = {1.0, 0.0}, q = {0.0, 1.0}, r = {0.5, 0.5};
  EXPECT_DOUBLE_EQ(hellinger_sq(p, q), 2.0);
  EXPECT_DOUBLE_EQ(hellinger_sq(r, r), 0.0);
  EXPECT_NEAR(hellinger_sq(p, r), 2.0 - std::sqrt(2.0), 1e-15);
}

TEST(Distances, RejectMismatchedSupport) {
  const std::vector<double> p = {1.0}, q = {0.5, 0.5};
  EXPECT_THROW(tv_distance(p, q), std::invalid_argument);
  EXPECT_THROW(hellinger_sq(p, q), std::invalid_argument);
}

TEST(Mixture, ValueIsAverageOfComponents) {
  const int H = 3, S = 4, A = 2;
  const auto k = random_kernel(13, H, S, A);
  const auto r = random_reward(13, H, S, A);
  Rng rng = make_rng(13, 1);
  MixturePolicy mix;
  double total = 0.0;
  for (int i = 0; i < 5; ++i) {
    mix.components.push_back(random_policy(rng, H, S, A));
    total += exact_policy_eval(k, mix.components.back(), r).v(0, 0);
  }
  EXPECT_NEAR(mixture_value(k, mix, r, 0), total / 5, 1e-12);
  EXPECT_THROW(mixture_value(k, MixturePolicy{}, r, 0), std::invalid_argument);
}

TEST(LowRankEvaluation, AgreesWithMaterializedKernel) {
  const auto env = gen_lowrank(3, 8, 3, 4, 2);
  const auto pi = Policy::uniform(4, 8, 3);
  EXPECT_EQ(exact_policy_eval(env, pi, env.rewards()).q,
            exact_policy_eval(materialize(env), pi, env.rewards()).q);
}
