#include <gtest/gtest.h>

#include <cmath>

#include "instances.hpp"
#include "oracles.hpp"
#include "srlab/policy_engine.hpp"
#include "support.hpp"

using namespace srlab;
using instances::random_policy;
using instances::random_rewards;
using testing_support::TempDir;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Internal;
}

}  // namespace

TEST(TabularPolicyTest, ProbabilitiesMatchSoftmaxWithTemperature) {
  Rng rng(1);
  for (double t : {1.0, 0.5, 3.0}) {
    std::vector<double> logits(2 * 6);
    for (double& v : logits) v = rng.uniform(-3, 3);
    TabularPolicy pi(instances::prompt_ids(2), 6, logits, t);
    const Distribution d = pi.distribution();
    for (std::size_t p = 0; p < 2; ++p) {
      const auto ref = oracle::softmax({logits.begin() + p * 6, logits.begin() + (p + 1) * 6}, t);
      for (std::size_t y = 0; y < 6; ++y) {
        EXPECT_NEAR(d.at(p, y), ref[y], 1e-14);
        EXPECT_NEAR(pi.prob(p, y), ref[y], 1e-14);
        EXPECT_NEAR(pi.log_prob(p, y), std::log(ref[y]), 1e-12);
      }
    }
  }
}

TEST(TabularPolicyTest, ConstructorValidation) {
  EXPECT_EQ(kind_of([] { TabularPolicy({"a"}, 2, {0.0}); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { TabularPolicy({"a"}, 1, {0.0}, 0.0); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { TabularPolicy({"a"}, 1, {NAN}); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([] { TabularPolicy({"a", "a"}, 1, {0.0, 0.0}); }), ErrorKind::InvalidArgument);
  TabularPolicy pi({"a"}, 2, {0.0, 1.0});
  EXPECT_EQ(kind_of([&] { pi.prob(1, 0); }), ErrorKind::IndexOutOfRange);
}

TEST(TabularPolicyTest, SnapshotRoundTripIsBitExact) {
  Rng rng(2);
  TabularPolicy pi = random_policy(rng, 3, 5, -1e3, 1e3);
  pi.logits()[0] = 0.1 + 0.2;
  TempDir dir;
  pi.save(dir / "p.snapshot");
  const TabularPolicy back = TabularPolicy::load(dir / "p.snapshot");
  EXPECT_EQ(back, pi);
  EXPECT_EQ(back.content_hash(), pi.content_hash());

  Json tampered = pi.to_snapshot();
  tampered["logits"][0][0] = "1.0";
  EXPECT_EQ(kind_of([&] { TabularPolicy::from_snapshot(tampered); }), ErrorKind::ParseError);
}

TEST(ConditionalPolicyTest, TiltMatchesOracle) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const TabularPolicy base = random_policy(rng, 2, 9);
    const RewardMatrix f = random_rewards(rng, 2, 9);
    const Distribution ref = base.distribution();
    for (double alpha : {1.0, 2.0, 1.5}) {
      const double score = 1.0 + static_cast<double>(rng.below(10));
      const Distribution cond = conditional_distribution(ConditionalPolicy{&base, score, 0.7, alpha}, f);
      const Distribution tilted = tilt(ref, f, score, 0.7, alpha);
      for (std::size_t p = 0; p < 2; ++p) {
        const auto expect = oracle::tilt(instances::row(ref, p), instances::row(f, p), score, 0.7, alpha);
        for (std::size_t y = 0; y < 9; ++y) {
          EXPECT_NEAR(cond.at(p, y), expect[y], 1e-13);
          EXPECT_NEAR(tilted.at(p, y), expect[y], 1e-13);
        }
      }
    }
  }
}

TEST(ConditionalPolicyTest, ZeroGammaOrConstantRewardLeavesReference) {
  Rng rng(4);
  const TabularPolicy base = random_policy(rng, 2, 4);
  RewardMatrix f = random_rewards(rng, 2, 4);
  const Distribution ref = base.distribution();
  EXPECT_EQ(tilt(ref, f, 10.0, 0.0, 2.0), ref);
  for (double& v : f.values) v = 4.0;
  EXPECT_EQ(tilt(ref, f, 10.0, 5.0, 2.0), ref);
  EXPECT_EQ(conditional_distribution(ConditionalPolicy{&base, 10.0, 5.0, 2.0}, f), ref);
}

TEST(ConditionalPolicyTest, ExpectedRewardRisesWithScore) {
  Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    const TabularPolicy base = random_policy(rng, 3, 16);
    const RewardMatrix f = random_rewards(rng, 3, 16);
    double previous = -1.0;
    for (int s = 1; s <= 10; ++s) {
      const double e = expected_reward(conditional_distribution(ConditionalPolicy{&base, double(s), 1.0, 2.0}, f), f);
      EXPECT_GE(e, previous - 1e-12);
      previous = e;
    }
  }
}

TEST(ConditionalPolicyTest, RejectsBadParameters) {
  Rng rng(6);
  const TabularPolicy base = random_policy(rng, 1, 3);
  const RewardMatrix f = random_rewards(rng, 1, 3);
  EXPECT_EQ(kind_of([&] { conditional_distribution({&base, 11.0, 1.0, 2.0}, f); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { conditional_distribution({&base, 5.0, -1.0, 2.0}, f); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { conditional_distribution({&base, 5.0, 1.0, 0.0}, f); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { conditional_distribution({nullptr, 5.0, 1.0, 2.0}, f); }), ErrorKind::InvalidArgument);
}

TEST(SamplingTest, EmpiricalFrequenciesMatch) {
  std::vector<double> probs{0.1, 0.0, 0.6, 0.3};
  Rng rng(7);
  std::vector<int> counts(4);
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++counts[sample(probs, rng)];
  EXPECT_EQ(counts[1], 0);
  for (std::size_t y = 0; y < 4; ++y) EXPECT_NEAR(counts[y] / double(n), probs[y], 0.01);
}

TEST(KlTest, MatchesOracleAndDetectsSupportViolation) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 50; ++t) {
    const auto a = oracle::random_simplex(7, rng);
    const auto b = oracle::random_simplex(7, rng);
    EXPECT_NEAR(kl_divergence(a, b), static_cast<double>(oracle::kl(a, b)), 1e-12);
    EXPECT_EQ(kl_divergence(a, a), 0.0);
  }
  std::vector<double> pi{0.5, 0.5}, ref{1.0, 0.0};
  EXPECT_EQ(kind_of([&] { kl_divergence(pi, ref); }), ErrorKind::SupportViolation);
  // zero mass where the reference has none is fine
  EXPECT_NEAR(kl_divergence(ref, pi), std::log(2.0), 1e-15);
}

TEST(ObjectiveTest, MatchesOracle) {
  Rng rng(9);
  const TabularPolicy a = random_policy(rng, 3, 8);
  const TabularPolicy b = random_policy(rng, 3, 8);
  const RewardMatrix f = random_rewards(rng, 3, 8);
  const Distribution pi = a.distribution(), ref = b.distribution();
  long double expect = 0;
  for (std::size_t p = 0; p < 3; ++p) {
    expect += oracle::objective(instances::row(pi, p), instances::row(ref, p), instances::row(f, p), 0.3);
  }
  EXPECT_NEAR(kl_regularized_objective(pi, ref, f, 0.3), static_cast<double>(expect / 3), 1e-12);
  EXPECT_EQ(rlhf_objective(pi, ref, f, 0.3), kl_regularized_objective(pi, ref, f, 0.3));
  const RewardMatrix d = distance_reward(f, 2.0, 2.0, 10.0);
  EXPECT_NEAR(d.at(1, 3), -2.0 * (f.at(1, 3) - 10.0) * (f.at(1, 3) - 10.0), 1e-12);
  EXPECT_EQ(kind_of([&] { kl_regularized_objective(pi, ref, f, 0.0); }), ErrorKind::InvalidArgument);
}

TEST(OptimalPolicyTest, ClosedFormMatchesOracleAndDominates) {
  Rng rng(10);
  std::mt19937_64 mt(10);
  for (double beta : {0.05, 0.1, 1.0}) {
    const Distribution ref = random_policy(rng, 2, 12).distribution();
    const RewardMatrix f = random_rewards(rng, 2, 12);
    const OptimalPolicy opt = optimal_policy(ref, f, beta);
    long double value = 0;
    for (std::size_t p = 0; p < 2; ++p) value += oracle::beta_log_partition(instances::row(ref, p), instances::row(f, p), beta);
    EXPECT_NEAR(opt.optimal_value, static_cast<double>(value / 2), 1e-10);
    const double j_star = kl_regularized_objective(opt.policy, ref, f, beta);
    EXPECT_NEAR(j_star, opt.optimal_value, 1e-9);
    for (int k = 0; k < 100; ++k) {
      Distribution other(2, 12);
      for (std::size_t p = 0; p < 2; ++p) {
        const auto r = oracle::random_simplex(12, mt);
        std::copy(r.begin(), r.end(), other.row(p).begin());
      }
      EXPECT_GE(j_star, kl_regularized_objective(other, ref, f, beta) - 1e-8);
    }
  }
}

TEST(OptimalPolicyTest, OverflowIsReported) {
  Distribution ref(1, 2);
  ref.probs = {0.5, 0.5};
  RewardMatrix f{1, 2, {0.0, 1e308}, 1e308};
  EXPECT_EQ(kind_of([&] { optimal_policy(ref, f, 1e-10); }), ErrorKind::NumericOverflow);
}

TEST(QualityGapTest, PositiveForHarderRejectedAndZeroWhenDegenerate) {
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const Distribution ref = random_policy(rng, 2, 10).distribution();
    const RewardMatrix f = random_rewards(rng, 2, 10);
    for (double bad : {3.0, 5.0, 7.0, 9.0}) {
      const QualityGap q = quality_gap(ref, f, 1.0, 1.0, 2.0, 10.0, bad);
      EXPECT_FALSE(q.degenerate);
      EXPECT_GT(q.gap, 0.0);
    }
    EXPECT_EQ(quality_gap(ref, f, 1.0, 1.0, 2.0, 10.0, 10.0).gap, 0.0);
    RewardMatrix flat = f;
    for (double& v : flat.values) v = 6.0;
    const QualityGap q = quality_gap(ref, flat, 1.0, 1.0, 2.0, 10.0, 3.0);
    EXPECT_TRUE(q.degenerate);
    EXPECT_EQ(q.gap, 0.0);
  }
  EXPECT_THROW(quality_gap(Distribution(1, 1), RewardMatrix{1, 1, {1.0}, 10.0}, 1.0, 1.0, 2.0, 3.0, 5.0), Error);
}

TEST(EvaluationTest, GreedyAndExpectedReward) {
  TabularPolicy pi({"a", "b"}, 3, {0.0, 2.0, 2.0, 5.0, 0.0, 1.0});
  RewardMatrix f{2, 3, {1.0, 4.0, 9.0, 2.0, 8.0, 3.0}, 10.0};
  // ties go to the lowest index
  EXPECT_DOUBLE_EQ(greedy_reward(pi, f), (4.0 + 2.0) / 2);
  const auto per = expected_reward_per_prompt(pi.distribution(), f);
  const auto s0 = oracle::softmax({0.0, 2.0, 2.0});
  EXPECT_NEAR(per[0], s0[0] * 1 + s0[1] * 4 + s0[2] * 9, 1e-14);
  EXPECT_EQ(argmax(std::vector<double>{1, 3, 3}), 1u);
}
