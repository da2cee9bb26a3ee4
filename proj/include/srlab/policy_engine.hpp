#pragma once

// Tabular softmax policies and the exact (enumeration-based) quantities built
// on them: the score-conditioned tilt of a reference policy, KL divergence,
// the KL-regularized objectives, their closed-form maximizer, and the quality
// gap between the top-score and low-score conditional policies.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "srlab/core_types.hpp"
#include "srlab/random.hpp"
#include "srlab/reward_oracle.hpp"

namespace srlab {

/// Row-stochastic matrix: one distribution over the response space per prompt.
struct Distribution {
  std::size_t prompts = 0;
  std::size_t responses = 0;
  std::vector<double> probs;

  Distribution() = default;
  Distribution(std::size_t n_prompts, std::size_t n_responses)
      : prompts(n_prompts), responses(n_responses), probs(n_prompts * n_responses, 0.0) {}

  std::span<const double> row(std::size_t p) const {
    return std::span<const double>(probs).subspan(p * responses, responses);
  }
  std::span<double> row(std::size_t p) { return std::span<double>(probs).subspan(p * responses, responses); }
  double at(std::size_t p, std::size_t y) const { return probs[p * responses + y]; }

  friend bool operator==(const Distribution&, const Distribution&) = default;
};

/// pi(y|x) = softmax(logits[x] / temperature). Logits are indexed
/// (prompt, response), prompts in PromptSet order.
class TabularPolicy {
 public:
  TabularPolicy() = default;
  TabularPolicy(std::vector<std::string> prompt_ids, std::size_t responses, std::vector<double> logits,
                double temperature = 1.0);

  static TabularPolicy uniform(const PromptSet& prompts, std::size_t responses, double temperature = 1.0);

  std::size_t prompts() const noexcept { return prompt_ids_.size(); }
  std::size_t responses() const noexcept { return responses_; }
  double temperature() const noexcept { return temperature_; }
  const std::vector<std::string>& prompt_ids() const noexcept { return prompt_ids_; }

  std::span<const double> logits() const noexcept { return logits_; }
  std::span<double> logits() noexcept { return logits_; }
  std::span<const double> logits_row(std::size_t p) const;
  std::span<double> logits_row(std::size_t p);

  /// Throws IndexOutOfRange.
  double prob(std::size_t prompt, std::size_t response) const;
  double log_prob(std::size_t prompt, std::size_t response) const;
  /// log-normalizer of row p: log sum_y exp(logit / T).
  double log_partition(std::size_t prompt) const;
  std::vector<double> log_probs(std::size_t prompt) const;
  Distribution distribution() const;

  /// Snapshot JSON: logits as decimal strings at round-trip precision.
  Json to_snapshot() const;
  static TabularPolicy from_snapshot(const Json& j);
  /// SHA-256 over the canonical snapshot body.
  std::string content_hash() const;
  void save(const std::filesystem::path& path) const;
  static TabularPolicy load(const std::filesystem::path& path);

  friend bool operator==(const TabularPolicy&, const TabularPolicy&) = default;

 private:
  Json snapshot_body() const;
  void check_index(std::size_t prompt, std::size_t response) const;

  std::vector<std::string> prompt_ids_;
  std::size_t responses_ = 0;
  std::vector<double> logits_;
  double temperature_ = 1.0;
};

/// pi(y|x, r) proportional to exp(-gamma * |f(x,y) - r|^alpha) * pi_ref(y|x).
struct ConditionalPolicy {
  const TabularPolicy* base = nullptr;
  double score = 10.0;
  double gamma = 1.0;
  double alpha = 2.0;
};

/// |f - r|^alpha, exact product for alpha == 2.
double tilt_distance(double f, double r, double alpha);

/// Tilts every row of `ref`. Rows on which the tilt is constant are returned
/// bit-identical to the reference row.
Distribution tilt(const Distribution& ref, const RewardMatrix& f, double score, double gamma, double alpha);
Distribution conditional_distribution(const ConditionalPolicy& cond, const RewardMatrix& f);
double conditional_prob(const ConditionalPolicy& cond, const RewardMatrix& f, std::size_t prompt,
                        std::size_t response);

/// Inverse-CDF draw from one row.
std::size_t sample(std::span<const double> probs, Rng& rng);
std::size_t sample(const Distribution& dist, std::size_t prompt, Rng& rng);

/// sum_y pi ln(pi / ref). Throws SupportViolation when pi > 0 where ref == 0.
double kl_divergence(std::span<const double> pi, std::span<const double> ref);
double kl_divergence(const Distribution& pi, const Distribution& ref, std::size_t prompt);

/// Mean over prompts of E_pi[reward] - beta * KL(pi || ref).
double kl_regularized_objective(const Distribution& pi, const Distribution& ref, const RewardMatrix& reward,
                                double beta);
/// Mean over prompts of E_pi[f] - beta * KL.
double rlhf_objective(const Distribution& pi, const Distribution& ref, const RewardMatrix& f, double beta);
/// Mean over prompts of E_pi[-gamma |f - r_target|^alpha] - beta * KL.
double score_conditioned_objective(const Distribution& pi, const Distribution& ref, const RewardMatrix& f,
                                   double beta, double gamma, double alpha, double r_target);
/// The per-entry reward -gamma |f - r_target|^alpha as a matrix.
RewardMatrix distance_reward(const RewardMatrix& f, double gamma, double alpha, double r_target);

struct OptimalPolicy {
  Distribution policy;
  std::vector<double> log_partition;  // ln Z_p(x) per prompt
  double optimal_value = 0.0;         // mean of beta * ln Z_p(x)
};

/// Closed-form maximizer of E_pi[reward] - beta KL(pi || ref):
/// pi_p = ref * exp(reward / beta) / Z_p.
OptimalPolicy optimal_policy(const Distribution& ref, const RewardMatrix& reward, double beta);

struct QualityGap {
  double j_good = 0.0;
  double j_bad = 0.0;
  double gap = 0.0;
  /// The two conditional policies coincide, so the gap is zero by construction.
  bool degenerate = false;
};

/// J of pi_good = pi(.|., r_good) and pi_bad = pi(.|., r_bad), both evaluated
/// with the score-conditioned objective at r_target = r_good.
QualityGap quality_gap(const Distribution& ref, const RewardMatrix& f, double beta, double gamma, double alpha,
                       double r_good, double r_bad);

/// Mean over prompts of E_pi[f].
double expected_reward(const Distribution& pi, const RewardMatrix& f);
/// Per-prompt E_pi[f].
std::vector<double> expected_reward_per_prompt(const Distribution& pi, const RewardMatrix& f);
/// Mean over prompts of f at the most likely response (lowest index on ties).
double greedy_reward(const TabularPolicy& policy, const RewardMatrix& f);
std::size_t argmax(std::span<const double> x);

}  // namespace srlab
