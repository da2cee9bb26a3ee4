#include "srlab/losses.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace srlab {

std::string_view to_string(PreferenceLoss loss) noexcept {
  return loss == PreferenceLoss::Dpo ? "dpo" : "simpo";
}

PreferenceLoss preference_loss_from_string(std::string_view name) {
  if (name == "dpo") return PreferenceLoss::Dpo;
  if (name == "simpo") return PreferenceLoss::Simpo;
  fail(ErrorKind::InvalidConfig, "unknown loss '" + std::string(name) + "' (expected dpo or simpo)");
}

std::size_t token_count(std::string_view text) {
  std::size_t count = 0;
  bool in_token = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_token) ++count;
    in_token = !space;
  }
  return count;
}

std::vector<SftExample> resolve_sft(const PromptSet& prompts, const ResponseSpace& space,
                                    std::span<const std::pair<std::string, std::string>> data) {
  std::vector<SftExample> out;
  out.reserve(data.size());
  for (const auto& [prompt_id, response] : data) {
    out.push_back(SftExample{prompts.index_of(prompt_id), space.index_of(response)});
  }
  return out;
}

std::vector<IndexedPair> resolve_pairs(const PromptSet& prompts, const ResponseSpace& space,
                                       std::span<const PreferencePair> pairs) {
  std::vector<IndexedPair> out;
  out.reserve(pairs.size());
  for (const auto& pair : pairs) {
    IndexedPair ip;
    ip.prompt = prompts.index_of(pair.prompt_id);
    ip.chosen = space.index_of(pair.chosen);
    ip.rejected = space.index_of(pair.rejected);
    ip.chosen_length = token_count(pair.chosen);
    ip.rejected_length = token_count(pair.rejected);
    out.push_back(ip);
  }
  return out;
}

double neg_log_sigmoid(double m) {
  if (m >= 0.0) return std::log1p(std::exp(-m));
  return -m + std::log1p(std::exp(m));
}

double sigmoid(double m) {
  if (m >= 0.0) return 1.0 / (1.0 + std::exp(-m));
  const double e = std::exp(m);
  return e / (1.0 + e);
}

namespace {

void check_index(const TabularPolicy& policy, std::size_t prompt, std::size_t response) {
  if (prompt >= policy.prompts() || response >= policy.responses()) {
    fail(ErrorKind::UnknownResponse, "training example refers to an index outside the policy");
  }
}

void check_pair(const TabularPolicy& policy, const IndexedPair& pair) {
  check_index(policy, pair.prompt, pair.chosen);
  check_index(policy, pair.prompt, pair.rejected);
}

void check_beta(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) fail(ErrorKind::InvalidArgument, "beta must be positive and finite");
}

// ln pi(a|x) - ln pi(b|x); the softmax normalizer cancels exactly.
double log_ratio(const TabularPolicy& policy, std::size_t prompt, std::size_t a, std::size_t b) {
  auto row = policy.logits_row(prompt);
  return (row[a] - row[b]) / policy.temperature();
}

}  // namespace

LossReport sft_loss(const TabularPolicy& policy, std::span<const SftExample> data) {
  LossReport report;
  report.gradient.assign(policy.logits().size(), 0.0);
  if (data.empty()) return report;
  const double n = static_cast<double>(data.size());
  const double inv_t = 1.0 / policy.temperature();
  const Distribution dist = policy.distribution();
  double total = 0.0;
  for (const auto& ex : data) {
    check_index(policy, ex.prompt, ex.response);
    total += -policy.log_prob(ex.prompt, ex.response);
    auto probs = dist.row(ex.prompt);
    double* g = report.gradient.data() + ex.prompt * policy.responses();
    for (std::size_t k = 0; k < probs.size(); ++k) g[k] += probs[k] * inv_t / n;
    g[ex.response] -= inv_t / n;
  }
  report.value = total / n;
  return report;
}

LossReport dpo_loss(const TabularPolicy& policy, const TabularPolicy& ref, std::span<const IndexedPair> pairs,
                    double beta) {
  check_beta(beta);
  if (policy.prompts() != ref.prompts() || policy.responses() != ref.responses()) {
    fail(ErrorKind::InvalidArgument, "policy and reference shapes differ");
  }
  LossReport report;
  report.gradient.assign(policy.logits().size(), 0.0);
  if (pairs.empty()) return report;
  const double n = static_cast<double>(pairs.size());
  const double coef = beta / (policy.temperature() * n);
  report.margins.reserve(pairs.size());
  double total = 0.0;
  for (const auto& pair : pairs) {
    check_pair(policy, pair);
    const double m = beta * (log_ratio(policy, pair.prompt, pair.chosen, pair.rejected) -
                             log_ratio(ref, pair.prompt, pair.chosen, pair.rejected));
    report.margins.push_back(m);
    total += neg_log_sigmoid(m);
    // d/dm of -ln sigmoid(m) is -sigmoid(-m); dm/dlogit is +-beta/T on the pair's two entries.
    const double g = -sigmoid(-m) * coef;
    double* row = report.gradient.data() + pair.prompt * policy.responses();
    row[pair.chosen] += g;
    row[pair.rejected] -= g;
  }
  report.value = total / n;
  return report;
}

LossReport simpo_loss(const TabularPolicy& policy, std::span<const IndexedPair> pairs, double beta,
                      double target_margin) {
  check_beta(beta);
  if (!(target_margin >= 0.0) || !std::isfinite(target_margin)) {
    fail(ErrorKind::InvalidArgument, "target_margin must be >= 0");
  }
  LossReport report;
  report.gradient.assign(policy.logits().size(), 0.0);
  if (pairs.empty()) return report;
  const double n = static_cast<double>(pairs.size());
  const double inv_t = 1.0 / policy.temperature();
  const Distribution dist = policy.distribution();
  report.margins.reserve(pairs.size());
  double total = 0.0;
  for (const auto& pair : pairs) {
    check_pair(policy, pair);
    if (pair.chosen_length == 0 || pair.rejected_length == 0) {
      fail(ErrorKind::ZeroLengthResponse, "length-normalized loss needs non-empty responses");
    }
    const double inv_w = 1.0 / static_cast<double>(pair.chosen_length);
    const double inv_l = 1.0 / static_cast<double>(pair.rejected_length);
    auto logits = policy.logits_row(pair.prompt);
    // the normalizer enters with weight (1/|w| - 1/|l|), exactly zero for equal lengths
    const double shared = inv_w - inv_l;
    const double lse = shared != 0.0 ? policy.log_partition(pair.prompt) : 0.0;
    const double m = beta * (logits[pair.chosen] * inv_t * inv_w - logits[pair.rejected] * inv_t * inv_l) -
                     beta * lse * shared - target_margin;
    report.margins.push_back(m);
    total += neg_log_sigmoid(m);
    const double g = -sigmoid(-m) * beta * inv_t / n;
    double* row = report.gradient.data() + pair.prompt * policy.responses();
    if (shared != 0.0) {
      auto probs = dist.row(pair.prompt);
      for (std::size_t k = 0; k < probs.size(); ++k) row[k] -= g * shared * probs[k];
    }
    row[pair.chosen] += g * inv_w;
    row[pair.rejected] -= g * inv_l;
  }
  report.value = total / n;
  return report;
}

double grad_check(const LossFn& loss, const TabularPolicy& policy, double epsilon) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) fail(ErrorKind::InvalidArgument, "epsilon must lie in [1e-7, 1e-3]");
  const std::vector<double> analytic = loss(policy).gradient;
  if (analytic.size() != policy.logits().size()) fail(ErrorKind::Internal, "gradient shape mismatch");
  TabularPolicy probe = policy;
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double original = probe.logits()[i];
    probe.logits()[i] = original + epsilon;
    const double plus = loss(probe).value;
    probe.logits()[i] = original - epsilon;
    const double minus = loss(probe).value;
    probe.logits()[i] = original;
    const double fd = (plus - minus) / (2.0 * epsilon);
    const double err = std::abs(analytic[i] - fd) / std::max(1e-12, std::abs(analytic[i]) + std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace srlab
