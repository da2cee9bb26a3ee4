#pragma once

// Training objectives over tabular-policy logits with analytic gradients:
// SFT cross-entropy, DPO, and the reference-free length-normalized variant
// with a target margin (SimPO-style).

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "srlab/core_types.hpp"
#include "srlab/policy_engine.hpp"

namespace srlab {

struct LossReport {
  double value = 0.0;
  std::vector<double> gradient;  // shaped like the policy logits
  std::vector<double> margins;   // argument of the sigmoid, per pair (empty for SFT)
};

/// (prompt, target response) resolved to indices.
struct SftExample {
  std::size_t prompt = 0;
  std::size_t response = 0;
};

/// A preference pair resolved to indices, with whitespace-token lengths.
struct IndexedPair {
  std::size_t prompt = 0;
  std::size_t chosen = 0;
  std::size_t rejected = 0;
  std::size_t chosen_length = 0;
  std::size_t rejected_length = 0;
};

enum class PreferenceLoss { Dpo, Simpo };

std::string_view to_string(PreferenceLoss loss) noexcept;
/// Throws InvalidConfig.
PreferenceLoss preference_loss_from_string(std::string_view name);

/// Number of whitespace-separated tokens.
std::size_t token_count(std::string_view text);

/// Throws UnknownPrompt / UnknownResponse.
std::vector<SftExample> resolve_sft(const PromptSet& prompts, const ResponseSpace& space,
                                    std::span<const std::pair<std::string, std::string>> data);
std::vector<IndexedPair> resolve_pairs(const PromptSet& prompts, const ResponseSpace& space,
                                       std::span<const PreferencePair> pairs);

/// -ln(sigmoid(m)) without overflow.
double neg_log_sigmoid(double m);
/// sigmoid(m) using the stable branch form.
double sigmoid(double m);

/// mean of -ln pi(y|x).
LossReport sft_loss(const TabularPolicy& policy, std::span<const SftExample> data);

/// mean of -ln sigmoid(beta [ln pi(y_w)/ref(y_w) - ln pi(y_l)/ref(y_l)]).
LossReport dpo_loss(const TabularPolicy& policy, const TabularPolicy& ref, std::span<const IndexedPair> pairs,
                    double beta);

/// mean of -ln sigmoid((beta/|y_w|) ln pi(y_w) - (beta/|y_l|) ln pi(y_l) - target_margin).
/// Throws ZeroLengthResponse.
LossReport simpo_loss(const TabularPolicy& policy, std::span<const IndexedPair> pairs, double beta,
                      double target_margin);

using LossFn = std::function<LossReport(const TabularPolicy&)>;

/// Max over logits of |g - g_fd| / max(1e-12, |g| + |g_fd|) with central
/// differences of step epsilon (must lie in [1e-7, 1e-3]).
double grad_check(const LossFn& loss, const TabularPolicy& policy, double epsilon);

}  // namespace srlab
