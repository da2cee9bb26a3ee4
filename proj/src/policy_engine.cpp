#include "srlab/policy_engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "srlab/io.hpp"
#include "srlab/kernels.hpp"

namespace srlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::string_view kSnapshotFormat = "srlab-policy/1";

void check_shapes(const Distribution& a, const Distribution& b) {
  if (a.prompts != b.prompts || a.responses != b.responses) {
    fail(ErrorKind::InvalidArgument, "distribution shapes differ");
  }
}

void check_shapes(const Distribution& a, const RewardMatrix& f) {
  if (a.prompts != f.prompts || a.responses != f.responses) {
    fail(ErrorKind::InvalidArgument, "distribution and reward matrix shapes differ");
  }
}

void check_beta(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) fail(ErrorKind::InvalidArgument, "beta must be positive and finite");
}

void check_tilt_params(double score, double gamma, double alpha, double r_max) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) fail(ErrorKind::InvalidArgument, "gamma must be >= 0");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) fail(ErrorKind::InvalidArgument, "alpha must be > 0");
  if (!(score >= 0.0 && score <= r_max)) fail(ErrorKind::InvalidArgument, "conditioning score outside [0, r_max]");
}

// Fills `penalty` with gamma * |f - r|^alpha; returns true if it is constant on the row.
bool row_penalty(std::span<const double> f, double score, double gamma, double alpha, std::vector<double>& penalty) {
  penalty.resize(f.size());
  bool constant = true;
  for (std::size_t y = 0; y < f.size(); ++y) {
    penalty[y] = gamma * tilt_distance(f[y], score, alpha);
    if (penalty[y] != penalty[0]) constant = false;
  }
  return constant;
}

}  // namespace

// ---------------------------------------------------------------------------
// TabularPolicy

TabularPolicy::TabularPolicy(std::vector<std::string> prompt_ids, std::size_t responses, std::vector<double> logits,
                             double temperature)
    : prompt_ids_(std::move(prompt_ids)), responses_(responses), logits_(std::move(logits)),
      temperature_(temperature) {
  if (responses_ == 0) fail(ErrorKind::InvalidArgument, "policy needs at least one response");
  if (logits_.size() != prompt_ids_.size() * responses_) {
    fail(ErrorKind::InvalidArgument, "logit count does not match prompts x responses");
  }
  if (!(temperature_ > 0.0) || !std::isfinite(temperature_)) {
    fail(ErrorKind::InvalidArgument, "temperature must be positive and finite");
  }
  for (double v : logits_) {
    if (!std::isfinite(v)) fail(ErrorKind::InvalidArgument, "policy logits must be finite");
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : prompt_ids_) {
    if (!seen.insert(id).second) fail(ErrorKind::InvalidArgument, "duplicate prompt id in policy: " + id);
  }
}

TabularPolicy TabularPolicy::uniform(const PromptSet& prompts, std::size_t responses, double temperature) {
  std::vector<std::string> ids;
  ids.reserve(prompts.size());
  for (const auto& p : prompts) ids.push_back(p.id);
  return TabularPolicy(std::move(ids), responses, std::vector<double>(prompts.size() * responses, 0.0), temperature);
}

void TabularPolicy::check_index(std::size_t prompt, std::size_t response) const {
  if (prompt >= prompts() || response >= responses_) {
    fail(ErrorKind::IndexOutOfRange, "policy index (" + std::to_string(prompt) + ", " + std::to_string(response) +
                                         ") out of range");
  }
}

std::span<const double> TabularPolicy::logits_row(std::size_t p) const {
  check_index(p, 0);
  return std::span<const double>(logits_).subspan(p * responses_, responses_);
}

std::span<double> TabularPolicy::logits_row(std::size_t p) {
  check_index(p, 0);
  return std::span<double>(logits_).subspan(p * responses_, responses_);
}

double TabularPolicy::log_partition(std::size_t prompt) const {
  auto row = logits_row(prompt);
  if (temperature_ == 1.0) return kernels::log_sum_exp(row);
  std::vector<double> scaled(row.begin(), row.end());
  kernels::scale(1.0 / temperature_, scaled);
  return kernels::log_sum_exp(scaled);
}

std::vector<double> TabularPolicy::log_probs(std::size_t prompt) const {
  auto row = logits_row(prompt);
  const double lse = log_partition(prompt);
  std::vector<double> out(row.size());
  for (std::size_t y = 0; y < row.size(); ++y) out[y] = row[y] / temperature_ - lse;
  return out;
}

double TabularPolicy::log_prob(std::size_t prompt, std::size_t response) const {
  check_index(prompt, response);
  return logits_[prompt * responses_ + response] / temperature_ - log_partition(prompt);
}

double TabularPolicy::prob(std::size_t prompt, std::size_t response) const {
  check_index(prompt, response);
  Distribution d(1, responses_);
  auto row = logits_row(prompt);
  std::vector<double> scaled(row.begin(), row.end());
  if (temperature_ != 1.0) kernels::scale(1.0 / temperature_, scaled);
  kernels::softmax(scaled, d.row(0));
  return d.at(0, response);
}

Distribution TabularPolicy::distribution() const {
  Distribution d(prompts(), responses_);
  std::vector<double> scaled(responses_);
  for (std::size_t p = 0; p < prompts(); ++p) {
    auto row = logits_row(p);
    std::copy(row.begin(), row.end(), scaled.begin());
    if (temperature_ != 1.0) kernels::scale(1.0 / temperature_, scaled);
    kernels::softmax(scaled, d.row(p));
  }
  return d;
}

Json TabularPolicy::snapshot_body() const {
  Json j;
  j["format"] = kSnapshotFormat;
  j["temperature"] = format_double(temperature_);
  j["responses"] = responses_;
  j["prompt_ids"] = prompt_ids_;
  Json rows = Json::array();
  for (std::size_t p = 0; p < prompts(); ++p) {
    Json row = Json::array();
    for (double v : logits_row(p)) row.push_back(format_double(v));
    rows.push_back(std::move(row));
  }
  j["logits"] = std::move(rows);
  return j;
}

std::string TabularPolicy::content_hash() const { return sha256_hex(snapshot_body().dump()); }

Json TabularPolicy::to_snapshot() const {
  Json j = snapshot_body();
  j["content_hash"] = sha256_hex(j.dump());
  return j;
}

TabularPolicy TabularPolicy::from_snapshot(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != kSnapshotFormat) {
      fail(ErrorKind::ParseError, "unsupported policy snapshot format");
    }
    const double temperature = parse_double(j.at("temperature").get<std::string>());
    const auto responses = j.at("responses").get<std::size_t>();
    auto ids = j.at("prompt_ids").get<std::vector<std::string>>();
    std::vector<double> logits;
    logits.reserve(ids.size() * responses);
    const Json& rows = j.at("logits");
    if (rows.size() != ids.size()) fail(ErrorKind::ParseError, "snapshot has wrong number of logit rows");
    for (const auto& row : rows) {
      if (row.size() != responses) fail(ErrorKind::ParseError, "snapshot logit row has wrong length");
      for (const auto& v : row) logits.push_back(parse_double(v.get<std::string>()));
    }
    TabularPolicy policy(std::move(ids), responses, std::move(logits), temperature);
    if (j.contains("content_hash") && j.at("content_hash").get<std::string>() != policy.content_hash()) {
      fail(ErrorKind::ParseError, "policy snapshot content hash mismatch");
    }
    return policy;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, std::string("malformed policy snapshot: ") + e.what());
  }
}

void TabularPolicy::save(const std::filesystem::path& path) const {
  write_text_atomic(path, to_snapshot().dump(1) + "\n");
}

TabularPolicy TabularPolicy::load(const std::filesystem::path& path) {
  try {
    return from_snapshot(Json::parse(read_text_file(path)));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, path.string() + ": " + e.what());
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Conditional policy

double tilt_distance(double f, double r, double alpha) {
  const double d = std::abs(f - r);
  if (alpha == 2.0) return d * d;
  if (alpha == 1.0) return d;
  return std::pow(d, alpha);
}

Distribution tilt(const Distribution& ref, const RewardMatrix& f, double score, double gamma, double alpha) {
  check_shapes(ref, f);
  check_tilt_params(score, gamma, alpha, f.r_max);
  Distribution out(ref.prompts, ref.responses);
  std::vector<double> penalty;
  std::vector<double> w(ref.responses);
  for (std::size_t p = 0; p < ref.prompts; ++p) {
    auto ref_row = ref.row(p);
    if (row_penalty(f.row(p), score, gamma, alpha, penalty)) {
      std::copy(ref_row.begin(), ref_row.end(), out.row(p).begin());
      continue;
    }
    for (std::size_t y = 0; y < ref.responses; ++y) {
      w[y] = ref_row[y] > 0.0 ? std::log(ref_row[y]) - penalty[y] : kNegInf;
    }
    kernels::softmax(w, out.row(p));
  }
  return out;
}

Distribution conditional_distribution(const ConditionalPolicy& cond, const RewardMatrix& f) {
  if (cond.base == nullptr) fail(ErrorKind::InvalidArgument, "conditional policy without base");
  const TabularPolicy& base = *cond.base;
  if (base.prompts() != f.prompts || base.responses() != f.responses) {
    fail(ErrorKind::InvalidArgument, "policy and reward matrix shapes differ");
  }
  check_tilt_params(cond.score, cond.gamma, cond.alpha, f.r_max);
  Distribution out = base.distribution();
  std::vector<double> penalty;
  std::vector<double> w(base.responses());
  const double inv_t = 1.0 / base.temperature();
  for (std::size_t p = 0; p < base.prompts(); ++p) {
    // constant tilt cancels in the normalization: keep the base row as is
    if (row_penalty(f.row(p), cond.score, cond.gamma, cond.alpha, penalty)) continue;
    auto logits = base.logits_row(p);
    for (std::size_t y = 0; y < w.size(); ++y) w[y] = logits[y] * inv_t - penalty[y];
    kernels::softmax(w, out.row(p));
  }
  return out;
}

double conditional_prob(const ConditionalPolicy& cond, const RewardMatrix& f, std::size_t prompt,
                        std::size_t response) {
  if (cond.base == nullptr) fail(ErrorKind::InvalidArgument, "conditional policy without base");
  if (prompt >= f.prompts || response >= f.responses) {
    fail(ErrorKind::IndexOutOfRange, "conditional_prob index out of range");
  }
  return conditional_distribution(cond, f).at(prompt, response);
}

// ---------------------------------------------------------------------------
// Sampling and divergences

std::size_t sample(std::span<const double> probs, Rng& rng) {
  if (probs.empty()) fail(ErrorKind::InvalidArgument, "cannot sample from an empty distribution");
  const double total = kernels::sum(probs);
  const double u = rng.uniform() * total;
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t y = 0; y < probs.size(); ++y) {
    if (probs[y] <= 0.0) continue;
    cum += probs[y];
    last_positive = y;
    if (u < cum) return y;
  }
  return last_positive;
}

std::size_t sample(const Distribution& dist, std::size_t prompt, Rng& rng) {
  if (prompt >= dist.prompts) fail(ErrorKind::IndexOutOfRange, "sample: prompt index out of range");
  return sample(dist.row(prompt), rng);
}

double kl_divergence(std::span<const double> pi, std::span<const double> ref) {
  if (pi.size() != ref.size()) fail(ErrorKind::InvalidArgument, "kl_divergence: size mismatch");
  double kl = 0.0;
  for (std::size_t y = 0; y < pi.size(); ++y) {
    if (pi[y] <= 0.0) continue;
    if (ref[y] <= 0.0) {
      fail(ErrorKind::SupportViolation, "policy puts mass on response " + std::to_string(y) +
                                            " outside the reference support");
    }
    if (pi[y] == ref[y]) continue;
    kl += pi[y] * (std::log(pi[y]) - std::log(ref[y]));
  }
  return kl > 0.0 ? kl : 0.0;
}

double kl_divergence(const Distribution& pi, const Distribution& ref, std::size_t prompt) {
  check_shapes(pi, ref);
  if (prompt >= pi.prompts) fail(ErrorKind::IndexOutOfRange, "kl_divergence: prompt index out of range");
  return kl_divergence(pi.row(prompt), ref.row(prompt));
}

// ---------------------------------------------------------------------------
// Objectives

double kl_regularized_objective(const Distribution& pi, const Distribution& ref, const RewardMatrix& reward,
                                double beta) {
  check_shapes(pi, ref);
  check_shapes(pi, reward);
  check_beta(beta);
  if (pi.prompts == 0) fail(ErrorKind::InvalidArgument, "objective over an empty prompt set");
  double total = 0.0;
  for (std::size_t p = 0; p < pi.prompts; ++p) {
    total += kernels::dot(pi.row(p), reward.row(p)) - beta * kl_divergence(pi.row(p), ref.row(p));
  }
  return total / static_cast<double>(pi.prompts);
}

double rlhf_objective(const Distribution& pi, const Distribution& ref, const RewardMatrix& f, double beta) {
  return kl_regularized_objective(pi, ref, f, beta);
}

RewardMatrix distance_reward(const RewardMatrix& f, double gamma, double alpha, double r_target) {
  check_tilt_params(r_target, gamma, alpha, f.r_max);
  RewardMatrix out = f;
  for (double& v : out.values) v = -gamma * tilt_distance(v, r_target, alpha);
  return out;
}

double score_conditioned_objective(const Distribution& pi, const Distribution& ref, const RewardMatrix& f,
                                   double beta, double gamma, double alpha, double r_target) {
  return kl_regularized_objective(pi, ref, distance_reward(f, gamma, alpha, r_target), beta);
}

OptimalPolicy optimal_policy(const Distribution& ref, const RewardMatrix& reward, double beta) {
  check_shapes(ref, reward);
  check_beta(beta);
  if (ref.prompts == 0) fail(ErrorKind::InvalidArgument, "optimal_policy over an empty prompt set");
  OptimalPolicy out;
  out.policy = Distribution(ref.prompts, ref.responses);
  out.log_partition.resize(ref.prompts);
  std::vector<double> w(ref.responses);
  double total = 0.0;
  for (std::size_t p = 0; p < ref.prompts; ++p) {
    auto ref_row = ref.row(p);
    auto r_row = reward.row(p);
    for (std::size_t y = 0; y < w.size(); ++y) {
      if (!std::isfinite(r_row[y])) fail(ErrorKind::NumericOverflow, "reward is not finite");
      w[y] = ref_row[y] > 0.0 ? std::log(ref_row[y]) + r_row[y] / beta : kNegInf;
    }
    const double log_z = kernels::log_sum_exp(w);
    if (!std::isfinite(log_z)) fail(ErrorKind::NumericOverflow, "log partition is not finite");
    out.log_partition[p] = log_z;
    auto row = out.policy.row(p);
    for (std::size_t y = 0; y < w.size(); ++y) row[y] = std::exp(w[y] - log_z);
    // renormalize away the rounding of exp
    kernels::scale(1.0 / kernels::sum(row), row);
    total += beta * log_z;
  }
  out.optimal_value = total / static_cast<double>(ref.prompts);
  return out;
}

QualityGap quality_gap(const Distribution& ref, const RewardMatrix& f, double beta, double gamma, double alpha,
                       double r_good, double r_bad) {
  check_beta(beta);
  if (r_bad > r_good) fail(ErrorKind::InvalidArgument, "quality_gap requires r_bad <= r_good");
  const Distribution good = tilt(ref, f, r_good, gamma, alpha);
  const Distribution bad = tilt(ref, f, r_bad, gamma, alpha);
  QualityGap q;
  q.j_good = score_conditioned_objective(good, ref, f, beta, gamma, alpha, r_good);
  q.j_bad = score_conditioned_objective(bad, ref, f, beta, gamma, alpha, r_good);
  q.degenerate = good.probs == bad.probs;
  q.gap = q.degenerate ? 0.0 : q.j_good - q.j_bad;
  return q;
}

// ---------------------------------------------------------------------------
// Evaluation helpers

std::vector<double> expected_reward_per_prompt(const Distribution& pi, const RewardMatrix& f) {
  check_shapes(pi, f);
  std::vector<double> out(pi.prompts);
  for (std::size_t p = 0; p < pi.prompts; ++p) out[p] = kernels::dot(pi.row(p), f.row(p));
  return out;
}

double expected_reward(const Distribution& pi, const RewardMatrix& f) {
  if (pi.prompts == 0) return 0.0;
  const auto per = expected_reward_per_prompt(pi, f);
  double total = 0.0;
  for (double v : per) total += v;
  return total / static_cast<double>(per.size());
}

std::size_t argmax(std::span<const double> x) {
  if (x.empty()) fail(ErrorKind::InvalidArgument, "argmax of an empty row");
  return static_cast<std::size_t>(std::max_element(x.begin(), x.end()) - x.begin());
}

double greedy_reward(const TabularPolicy& policy, const RewardMatrix& f) {
  if (policy.prompts() != f.prompts || policy.responses() != f.responses) {
    fail(ErrorKind::InvalidArgument, "policy and reward matrix shapes differ");
  }
  if (policy.prompts() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t p = 0; p < policy.prompts(); ++p) total += f.at(p, argmax(policy.logits_row(p)));
  return total / static_cast<double>(policy.prompts());
}

}  // namespace srlab
