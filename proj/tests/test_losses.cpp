#include <gtest/gtest.h>

#include <cmath>

#include "instances.hpp"
#include "oracles.hpp"
#include "srlab/losses.hpp"

using namespace srlab;
using instances::random_policy;

namespace {

std::vector<IndexedPair> random_pairs(Rng& rng, std::size_t prompts, std::size_t k, std::size_t n, bool mixed_lengths) {
  std::vector<IndexedPair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    IndexedPair p;
    p.prompt = rng.below(prompts);
    p.chosen = rng.below(k);
    do {
      p.rejected = rng.below(k);
    } while (p.rejected == p.chosen);
    p.chosen_length = mixed_lengths ? 1 + rng.below(4) : 3;
    p.rejected_length = mixed_lengths ? 1 + rng.below(4) : 3;
    pairs.push_back(p);
  }
  return pairs;
}

// Loss values computed directly from the definitions.
double dpo_reference(const oracle::Vec& logits, const oracle::Vec& ref_logits, std::size_t k,
                     const std::vector<IndexedPair>& pairs, double beta) {
  double total = 0;
  for (const auto& p : pairs) {
    const oracle::Vec row(logits.begin() + p.prompt * k, logits.begin() + (p.prompt + 1) * k);
    const oracle::Vec ref_row(ref_logits.begin() + p.prompt * k, ref_logits.begin() + (p.prompt + 1) * k);
    const auto pi = oracle::softmax(row), ref = oracle::softmax(ref_row);
    const double m = beta * (std::log(pi[p.chosen] / ref[p.chosen]) - std::log(pi[p.rejected] / ref[p.rejected]));
    total -= oracle::log_sigmoid(m);
  }
  return total / static_cast<double>(pairs.size());
}

double simpo_reference(const oracle::Vec& logits, std::size_t k, const std::vector<IndexedPair>& pairs, double beta,
                       double margin) {
  double total = 0;
  for (const auto& p : pairs) {
    const auto pi = oracle::softmax({logits.begin() + p.prompt * k, logits.begin() + (p.prompt + 1) * k});
    const double m = beta / static_cast<double>(p.chosen_length) * std::log(pi[p.chosen]) -
                     beta / static_cast<double>(p.rejected_length) * std::log(pi[p.rejected]) - margin;
    total -= oracle::log_sigmoid(m);
  }
  return total / static_cast<double>(pairs.size());
}

}  // namespace

TEST(SigmoidTest, StableAtExtremes) {
  EXPECT_EQ(neg_log_sigmoid(0.0), std::log(2.0));
  EXPECT_NEAR(neg_log_sigmoid(800.0), 0.0, 1e-300);
  EXPECT_NEAR(neg_log_sigmoid(-800.0), 800.0, 1e-9);
  EXPECT_TRUE(std::isfinite(neg_log_sigmoid(-1e308)));
  EXPECT_EQ(sigmoid(-800.0), 0.0);
  EXPECT_EQ(sigmoid(800.0), 1.0);
  for (double m : {-30.0, -2.5, 0.1, 7.0}) EXPECT_NEAR(neg_log_sigmoid(m), -oracle::log_sigmoid(m), 1e-14);
}

TEST(TokenCountTest, WhitespaceTokens) {
  EXPECT_EQ(token_count(""), 0u);
  EXPECT_EQ(token_count("  a  b\tc\n"), 3u);
  EXPECT_EQ(token_count("single"), 1u);
}

TEST(LossNamesTest, ParseAndPrint) {
  EXPECT_EQ(preference_loss_from_string("dpo"), PreferenceLoss::Dpo);
  EXPECT_EQ(to_string(PreferenceLoss::Simpo), "simpo");
  EXPECT_THROW(preference_loss_from_string("ipo"), Error);
}

TEST(SftLossTest, ValueAndGradient) {
  Rng rng(1);
  const TabularPolicy pi = random_policy(rng, 3, 5);
  std::vector<SftExample> data{{0, 1}, {2, 4}, {0, 3}};
  const LossReport r = sft_loss(pi, data);
  double expect = 0;
  for (const auto& ex : data) {
    const auto row = pi.logits_row(ex.prompt);
    expect -= std::log(oracle::softmax({row.begin(), row.end()})[ex.response]);
  }
  EXPECT_NEAR(r.value, expect / 3, 1e-13);
  EXPECT_LT(grad_check([&](const TabularPolicy& p) { return sft_loss(p, data); }, pi, 1e-5), 1e-6);
  EXPECT_TRUE(r.margins.empty());
  EXPECT_EQ(sft_loss(pi, {}).value, 0.0);
}

TEST(DpoLossTest, ValueMatchesDefinition) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const TabularPolicy pi = random_policy(rng, 2, 6), ref = random_policy(rng, 2, 6);
    const auto pairs = random_pairs(rng, 2, 6, 5, false);
    const double beta = rng.uniform(0.05, 2.0);
    const oracle::Vec a(pi.logits().begin(), pi.logits().end()), b(ref.logits().begin(), ref.logits().end());
    EXPECT_NEAR(dpo_loss(pi, ref, pairs, beta).value, dpo_reference(a, b, 6, pairs, beta), 1e-12);
  }
}

TEST(DpoLossTest, IdentityAnchorIsLnTwo) {
  Rng rng(3);
  const TabularPolicy pi = random_policy(rng, 2, 6);
  const auto pairs = random_pairs(rng, 2, 6, 7, true);
  for (double beta : {0.01, 0.1, 1.0}) {
    const LossReport r = dpo_loss(pi, pi, pairs, beta);
    EXPECT_NEAR(r.value, std::log(2.0), 1e-12);
    for (double m : r.margins) EXPECT_EQ(m, 0.0);
  }
}

TEST(DpoLossTest, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  const TabularPolicy pi = random_policy(rng, 3, 5), ref = random_policy(rng, 3, 5);
  const auto pairs = random_pairs(rng, 3, 5, 6, false);
  const LossFn f = [&](const TabularPolicy& p) { return dpo_loss(p, ref, pairs, 0.7); };
  EXPECT_LT(grad_check(f, pi, 1e-5), 1e-6);
}

TEST(DpoLossTest, ShapeMismatchAndBadBeta) {
  Rng rng(5);
  const TabularPolicy a = random_policy(rng, 1, 3), b = random_policy(rng, 1, 4);
  std::vector<IndexedPair> pairs{{0, 0, 1, 1, 1}};
  EXPECT_THROW(dpo_loss(a, b, pairs, 0.1), Error);
  EXPECT_THROW(dpo_loss(a, a, pairs, 0.0), Error);
  std::vector<IndexedPair> bad{{0, 0, 9, 1, 1}};
  try {
    dpo_loss(a, a, bad, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnknownResponse);
  }
}

TEST(SimpoLossTest, ValueAndGradientWithMixedLengths) {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    const TabularPolicy pi = random_policy(rng, 2, 7);
    const auto pairs = random_pairs(rng, 2, 7, 5, true);
    const double beta = rng.uniform(0.5, 4.0), margin = rng.uniform(0.0, 3.0);
    const oracle::Vec a(pi.logits().begin(), pi.logits().end());
    EXPECT_NEAR(simpo_loss(pi, pairs, beta, margin).value, simpo_reference(a, 7, pairs, beta, margin), 1e-12);
    const LossFn f = [&](const TabularPolicy& p) { return simpo_loss(p, pairs, beta, margin); };
    EXPECT_LT(grad_check(f, pi, 1e-5), 1e-6);
  }
}

TEST(SimpoLossTest, ZeroLengthRejected) {
  Rng rng(7);
  const TabularPolicy pi = random_policy(rng, 1, 3);
  std::vector<IndexedPair> pairs{{0, 0, 1, 0, 2}};
  try {
    simpo_loss(pi, pairs, 1.0, 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ZeroLengthResponse);
  }
  EXPECT_THROW(simpo_loss(pi, {}, 1.0, -1.0), Error);
}

TEST(GradCheckTest, EpsilonRangeEnforced) {
  Rng rng(8);
  const TabularPolicy pi = random_policy(rng, 1, 2);
  const LossFn f = [](const TabularPolicy& p) { return sft_loss(p, std::vector<SftExample>{{0, 0}}); };
  EXPECT_THROW(grad_check(f, pi, 1e-2), Error);
  EXPECT_THROW(grad_check(f, pi, 1e-9), Error);
}

TEST(ResolveTest, IndicesAndLengths) {
  PromptSet prompts({{"p0", "x"}, {"p1", "y"}});
  ResponseSpace space({"a b", "c", "d e f"});
  const std::vector<PreferencePair> pairs{{"p1", "y", "d e f", "c", 10, 3, 1}};
  const auto ip = resolve_pairs(prompts, space, pairs);
  ASSERT_EQ(ip.size(), 1u);
  EXPECT_EQ(ip[0].prompt, 1u);
  EXPECT_EQ(ip[0].chosen, 2u);
  EXPECT_EQ(ip[0].chosen_length, 3u);
  EXPECT_EQ(ip[0].rejected_length, 1u);
  const std::vector<std::pair<std::string, std::string>> sft{{"p0", "zzz"}};
  EXPECT_THROW(resolve_sft(prompts, space, sft), Error);
}
