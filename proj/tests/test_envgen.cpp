#include <gtest/gtest.h>

#include <cmath>

#include "lowrank/envgen.hpp"
#include "lowrank/validate.hpp"

using namespace lowrank;

TEST(GenLowRank, RankOneSharesOneNextStateDistribution) {
  const auto env = gen_lowrank(3, 10, 3, 4, 1);
  EXPECT_TRUE(validate(env).ok());
  const auto k = materialize(env);
  for (int h = 0; h < 4; ++h)
    for (int s = 0; s < 10; ++s)
      for (int a = 0; a < 3; ++a)
        for (int n = 0; n < 10; ++n) EXPECT_NEAR(k(h, s, a, n), k(h, 0, 0, n), 1e-15);
}

TEST(GenLowRank, SameSeedIsBitIdentical) {
  EXPECT_EQ(gen_lowrank(9, 15, 3, 4, 3), gen_lowrank(9, 15, 3, 4, 3));
  EXPECT_NE(gen_lowrank(9, 15, 3, 4, 3), gen_lowrank(10, 15, 3, 4, 3));
}

TEST(GenLowRank, AcceptanceInstanceFixture) {
  const auto env = gen_lowrank(7, 20, 4, 5, 3);
  EXPECT_TRUE(validate(env).ok()) << describe(validate(env));
  const double v_star = exact_optimal(env, env.rewards()).v(0, 0);
  const double v_uniform = exact_policy_eval(env, Policy::uniform(5, 20, 4), env.rewards()).v(0, 0);
  EXPECT_NEAR(v_star, 0.52321165047291418, 1e-12);
  EXPECT_NEAR(v_uniform, 0.30389176975809251, 1e-12);
  EXPECT_GT(v_star - v_uniform, 0.05);
}

TEST(GenLowRank, ValidAcrossSeedsAndShapes) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto env = gen_lowrank(seed, 5 + static_cast<int>(seed), 2 + seed % 3, 1 + seed % 5,
                                 1 + seed % 4);
    EXPECT_TRUE(validate(env).ok()) << "seed " << seed << ": " << describe(validate(env));
  }
}

TEST(GenLowRank, RewardIsSparseOnFinalStep) {
  const auto env = gen_lowrank(7, 20, 4, 5, 3);
  double total = 0.0;
  for (int h = 0; h < 5; ++h)
    for (int s = 0; s < 20; ++s)
      for (int a = 0; a < 4; ++a) {
        const double r = env.reward(h, s, a);
        EXPECT_TRUE(r == 0.0 || r == 1.0);
        if (h < 4) {
          EXPECT_EQ(r, 0.0);
        }
        total += r;
      }
  EXPECT_GT(total, 0.0);
  EXPECT_LT(total, 20 * 4);
}

TEST(GenLowRank, RankAboveStatesThrows) {
  EXPECT_THROW(gen_lowrank(1, 3, 2, 2, 4), std::invalid_argument);
}

TEST(ModelClass, SizeOneIsTheTruth) {
  const auto env = gen_lowrank(2, 8, 2, 3, 2);
  const auto cls = gen_model_class(env, 1, 5);
  ASSERT_EQ(cls.size(), 1);
  EXPECT_EQ(cls.truth_index, 0);
  EXPECT_EQ(cls[0], env);
}

TEST(ModelClass, DecoysAreValidAndSeparated) {
  const auto env = gen_lowrank(7, 20, 4, 5, 3);
  const auto cls = gen_model_class(env, 32, 11);
  ASSERT_EQ(cls.size(), 32);
  ASSERT_TRUE(cls.truth_index.has_value());
  EXPECT_EQ(cls[*cls.truth_index], env);
  for (int i = 0; i < cls.size(); ++i) {
    EXPECT_EQ(cls[i].shape(), env.shape());
    EXPECT_TRUE(validate(cls[i]).ok()) << "model " << i;
    if (i != *cls.truth_index) {
      EXPECT_GE(min_row_hellinger(env, cls[i]), 1e-3) << "model " << i;
    }
  }
}

TEST(ModelClass, AcceptanceClassFixture) {
  const auto env = gen_lowrank(7, 20, 4, 5, 3);
  const auto a = gen_model_class(env, 32, 11);
  const auto b = gen_model_class(env, 32, 11);
  EXPECT_EQ(a.truth_index, 8);
  EXPECT_EQ(a.models, b.models);
}

TEST(ModelClass, RealizableForManySeeds) {
  const auto env = gen_lowrank(4, 6, 2, 3, 2);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto cls = gen_model_class(env, 5, seed);
    EXPECT_EQ(cls[*cls.truth_index], env);
  }
}

TEST(Misspecified, ZeroZetaIsExact) {
  const auto env = gen_lowrank(7, 20, 4, 5, 3);
  const auto m = gen_misspecified(env, 0.0, 3);
  EXPECT_EQ(m.true_kernel, materialize(env));
  EXPECT_EQ(m.zeta, 0.0);
}

TEST(Misspecified, MeasuredDeviationWithinRequest) {
  const auto env = gen_lowrank(7, 20, 4, 5, 3);
  const auto base = materialize(env);
  for (double zeta : {0.01, 0.05, 0.1})
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto m = gen_misspecified(env, zeta, seed);
      EXPECT_LE(m.zeta, zeta);
      EXPECT_GT(m.zeta, 0.0);
      EXPECT_EQ(m.zeta, max_entry_deviation(m.true_kernel, base));
    }
}

TEST(Misspecified, RowsAreDistributions) {
  const auto env = gen_lowrank(7, 20, 4, 5, 3);
  const auto m = gen_misspecified(env, 0.05, 4);
  for (int h = 0; h < 5; ++h)
    for (int s = 0; s < 20; ++s)
      for (int a = 0; a < 4; ++a) {
        double total = 0.0;
        for (double p : m.true_kernel.row(h, s, a)) {
          EXPECT_GE(p, 0.0);
          total += p;
        }
        EXPECT_NEAR(total, 1.0, 1e-9);
      }
}

TEST(Misspecified, OptimalValueUnchangedAndUniformValueDrops) {
  const auto env = gen_lowrank(7, 20, 4, 5, 3);
  const auto m = gen_misspecified(env, 0.05, 7);
  const auto e = m.environment();
  const double base_star = exact_optimal(env, env.rewards()).v(0, 0);
  EXPECT_NEAR(exact_optimal(e.kernel, e.reward).v(0, 0), base_star, 1e-9);
  const auto uniform = Policy::uniform(5, 20, 4);
  EXPECT_LT(exact_policy_eval(e.kernel, uniform, e.reward).v(0, 0),
            exact_policy_eval(env, uniform, env.rewards()).v(0, 0));
}

TEST(Misspecified, ZetaOutsideRangeThrows) {
  const auto env = gen_lowrank(1, 4, 2, 2, 2);
  EXPECT_THROW(gen_misspecified(env, 0.2, 1), std::invalid_argument);
  EXPECT_THROW(gen_misspecified(env, -0.01, 1), std::invalid_argument);
}
