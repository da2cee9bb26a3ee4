#pragma once

// Preference-pair generation: score-prefixed prompts, a pluggable generation
// backend (exact tabular model or a chat-completions endpoint), regex cleaning
// of meta-preambles, and JSONL dataset assembly.

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include "srlab/core_types.hpp"
#include "srlab/policy_engine.hpp"
#include "srlab/random.hpp"
#include "srlab/reward_oracle.hpp"

namespace spdlog {
class logger;
}

namespace srlab {

// ---------------------------------------------------------------------------
// Prefix templates

inline constexpr std::string_view kPromptPlaceholder = "[prompt]";
inline constexpr std::string_view kScorePlaceholder = "[rejected score]";

struct PrefixTemplate {
  std::string chosen_template =
      "Please produce a top-notch response that merits a perfect score of 10 out of 10. [prompt]";
  std::string rejected_template =
      "Please produce a good response that merits a perfect score of [rejected score] out of 10. [prompt]";
};

enum class Side { Chosen, Rejected };

/// Throws PlaceholderMissing unless each placeholder occurs exactly once where required.
void validate_template(const PrefixTemplate& t);

/// Placeholder substitution only. The chosen side ignores `score`; the
/// rejected side requires score in [1, 9] (ScoreOutOfRange).
std::string render_prefix(const PrefixTemplate& t, Side side, int score, const Prompt& prompt);

// ---------------------------------------------------------------------------
// Cleaning

struct CleaningRule {
  enum class Action { Strip, Reject };

  std::string id;
  std::string pattern;
  Action action = Action::Strip;
  std::regex compiled;
};

/// Ordered rules. Strip rules are anchored at the start of the text and are
/// applied until none matches; reject rules are searched anywhere in the
/// stripped text.
class CleaningRuleSet {
 public:
  CleaningRuleSet() = default;
  /// Patterns are ECMAScript, case-insensitive. Throws ParseError if one fails to compile.
  static CleaningRuleSet from_json(const Json& j);
  static CleaningRuleSet load(const std::filesystem::path& path);
  static CleaningRuleSet defaults();

  void add(std::string id, std::string pattern, CleaningRule::Action action);
  const std::vector<CleaningRule>& rules() const noexcept { return rules_; }
  Json to_json() const;

 private:
  std::vector<CleaningRule> rules_;
};

struct CleanResult {
  bool rejected = false;
  std::string text;     // cleaned text when not rejected
  std::string rule_id;  // matching reject rule when rejected
};

CleanResult clean_response(const CleaningRuleSet& rules, std::string_view raw);

// ---------------------------------------------------------------------------
// Backends

class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;

  virtual std::string_view kind() const noexcept = 0;
  /// Upper bound on concurrent generate() calls.
  virtual std::size_t max_concurrency() const noexcept { return 1; }
  /// One raw response for `prompt` conditioned on the prefix score (1..10).
  /// Must be safe to call concurrently for different prompts.
  virtual std::string generate(const Prompt& prompt, int score, Rng& rng) const = 0;
};

/// Samples from the score-conditioned tilt of a tabular reference policy.
class ExactBackend final : public GenerationBackend {
 public:
  ExactBackend(const PromptSet& prompts, ResponseSpace space, const TabularPolicy& reference,
               const RewardMatrix& rewards, double gamma, double alpha);

  std::string_view kind() const noexcept override { return "exact"; }
  std::size_t max_concurrency() const noexcept override { return concurrency_; }
  std::string generate(const Prompt& prompt, int score, Rng& rng) const override;

  /// Conditioning reward for a prefix score; identity by default.
  double reward_for_score(int score) const;
  void set_score_map(const std::array<double, 10>& map);
  void set_max_concurrency(std::size_t n) { concurrency_ = n == 0 ? 1 : n; }
  const Distribution& conditional(int score) const;

 private:
  PromptSet prompts_;
  ResponseSpace space_;
  TabularPolicy reference_;
  RewardMatrix rewards_;
  double gamma_;
  double alpha_;
  std::array<double, 10> score_map_{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<Distribution> by_score_;  // index score - 1
  std::size_t concurrency_ = 1;
};

struct HttpBackendConfig {
  std::string endpoint;  // e.g. https://api.example.com/v1
  std::string model;
  double temperature = 0.7;
  int max_tokens = 1024;
  std::string auth_env;  // name of the environment variable holding the bearer token
  std::size_t max_concurrency = 8;
  int max_retries = 5;
  std::chrono::milliseconds backoff_initial{1000};
  std::chrono::seconds timeout{120};
};

/// Chat-completions client: POST {endpoint}/chat/completions.
class HttpBackend final : public GenerationBackend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  HttpBackend(HttpBackendConfig config, PrefixTemplate templates, std::shared_ptr<spdlog::logger> log);

  std::string_view kind() const noexcept override { return "http"; }
  std::size_t max_concurrency() const noexcept override { return config_.max_concurrency; }
  std::string generate(const Prompt& prompt, int score, Rng& rng) const override;

  /// Sends one request for an already-rendered user message.
  std::string complete(const std::string& user_message) const;
  /// Replaces the token with a marker wherever it occurs.
  std::string redact(std::string text) const;
  void set_sleeper(Sleeper sleeper) { sleeper_ = std::move(sleeper); }
  const HttpBackendConfig& config() const noexcept { return config_; }

 private:
  HttpBackendConfig config_;
  PrefixTemplate templates_;
  std::shared_ptr<spdlog::logger> log_;
  std::string token_;
  std::string scheme_host_port_;
  std::string path_;
  Sleeper sleeper_;
};

// ---------------------------------------------------------------------------
// Pairs and datasets

struct PairOutcome {
  std::optional<PreferencePair> pair;
  std::string skip_reason;  // "cleaning" or "duplicate" when skipped
};

/// Chosen side from score 10, rejected side from `rejected_score`, both cleaned.
/// `seed` selects the prompt's random substreams.
PairOutcome generate_pair(const GenerationBackend& backend, const CleaningRuleSet& rules, const Prompt& prompt,
                          int rejected_score, int iteration, std::uint64_t seed);

struct DatasetResult {
  DatasetSummary summary;
  std::vector<PreferencePair> pairs;  // sorted by prompt id
};

/// One pair per prompt with rejected score schedule[iteration - 1]. Output is
/// ordered by prompt id regardless of completion order and written atomically.
/// Backend failures are collected per prompt and rethrown together.
DatasetResult build_dataset(const GenerationBackend& backend, const CleaningRuleSet& rules, const PromptSet& prompts,
                            const ScoreSchedule& schedule, int iteration, std::uint64_t seed,
                            const std::filesystem::path& out_path);

/// SFT data file: JSONL of {"prompt_id", "response"}.
std::vector<std::pair<std::string, std::string>> read_sft_jsonl(const std::filesystem::path& path);
void write_sft_jsonl(const std::filesystem::path& path, std::span<const std::pair<std::string, std::string>> data);

}  // namespace srlab
