#pragma once

// Shared vocabulary: prompts, the finite response space, preference pairs,
// the rejected-score curriculum and run provenance.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "srlab/error.hpp"

namespace srlab {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view kToolVersion = "srlab 0.3.0";
inline constexpr int kChosenScore = 10;
inline constexpr std::size_t kDefaultResponseCap = 4096;

struct Prompt {
  std::string id;
  std::string text;

  friend bool operator==(const Prompt&, const Prompt&) = default;
};

/// Ordered prompt collection with unique ids and non-empty texts.
class PromptSet {
 public:
  PromptSet() = default;
  explicit PromptSet(std::vector<Prompt> prompts);

  std::size_t size() const noexcept { return prompts_.size(); }
  bool empty() const noexcept { return prompts_.empty(); }
  const Prompt& operator[](std::size_t i) const { return prompts_[i]; }
  const Prompt& at(std::size_t i) const;
  std::span<const Prompt> items() const noexcept { return prompts_; }
  auto begin() const noexcept { return prompts_.begin(); }
  auto end() const noexcept { return prompts_.end(); }

  std::optional<std::size_t> find(std::string_view id) const;
  /// Throws UnknownPrompt.
  std::size_t index_of(std::string_view id) const;

  /// Indices ordered by prompt id (lexicographic), the canonical output order.
  std::vector<std::size_t> sorted_by_id() const;

  friend bool operator==(const PromptSet& a, const PromptSet& b) { return a.prompts_ == b.prompts_; }

 private:
  std::vector<Prompt> prompts_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// The finite response space. Entries are distinct; size is capped so that
/// exhaustive enumeration stays cheap.
class ResponseSpace {
 public:
  ResponseSpace() = default;
  explicit ResponseSpace(std::vector<std::string> responses,
                         std::size_t cap = kDefaultResponseCap);

  std::size_t size() const noexcept { return responses_.size(); }
  const std::string& operator[](std::size_t i) const { return responses_[i]; }
  const std::string& at(std::size_t i) const;
  std::span<const std::string> items() const noexcept { return responses_; }

  std::optional<std::size_t> find(std::string_view response) const;
  /// Throws UnknownResponse.
  std::size_t index_of(std::string_view response) const;

  friend bool operator==(const ResponseSpace& a, const ResponseSpace& b) {
    return a.responses_ == b.responses_;
  }

 private:
  std::vector<std::string> responses_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct PreferencePair {
  std::string prompt_id;
  std::string prompt;
  std::string chosen;
  std::string rejected;
  int chosen_score = kChosenScore;
  int rejected_score = 1;
  int iteration = 1;

  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

/// Throws InvalidArgument when scores or iteration break the pair invariants.
void check_pair(const PreferencePair& pair);

/// One JSONL line (no trailing newline), keys in the fixed wire order.
std::string to_jsonl_line(const PreferencePair& pair);
PreferencePair pair_from_json(const Json& j);
std::vector<PreferencePair> read_pairs_jsonl(const std::filesystem::path& path);
/// Writes through a temporary file and renames it into place.
void write_pairs_jsonl(const std::filesystem::path& path, std::span<const PreferencePair> pairs);

struct ScoreSchedule {
  std::vector<int> rejected_scores;
  int chosen_score = kChosenScore;

  friend bool operator==(const ScoreSchedule&, const ScoreSchedule&) = default;
};

/// Default curriculum used by the reported ablations.
ScoreSchedule default_schedule();

/// Returns the schedule unchanged when it has `iterations` entries, each in
/// [1, 9] and below the chosen score, non-decreasing. Otherwise throws
/// LengthMismatch, ScoreOutOfRange or NonMonotone (checked in that order).
ScoreSchedule validate_schedule(ScoreSchedule schedule, int iterations);

Json to_json(const ScoreSchedule& s);
ScoreSchedule schedule_from_json(const Json& j);

Json to_json(const Prompt& p);
Prompt prompt_from_json(const Json& j);
/// Prompts file: JSON array of {"id", "text"}.
PromptSet load_prompts(const std::filesystem::path& path);
void save_prompts(const std::filesystem::path& path, const PromptSet& prompts);

/// Responses file: JSON array of strings.
ResponseSpace load_responses(const std::filesystem::path& path,
                             std::size_t cap = kDefaultResponseCap);
void save_responses(const std::filesystem::path& path, const ResponseSpace& space);

struct DatasetSummary {
  std::size_t pairs_written = 0;
  std::map<std::string, std::size_t> skipped;  // reason -> count

  std::size_t skipped_total() const;
  friend bool operator==(const DatasetSummary&, const DatasetSummary&) = default;
};

Json to_json(const DatasetSummary& s);
DatasetSummary summary_from_json(const Json& j);

/// Per-iteration evaluation numbers, also the metrics CSV row.
struct IterationMetrics {
  double mean_chosen_reward = 0.0;
  double mean_rejected_reward = 0.0;
  double gap = 0.0;
  double policy_expected_reward = 0.0;
  double greedy_reward = 0.0;
  double dpo_loss_final = 0.0;

  friend bool operator==(const IterationMetrics&, const IterationMetrics&) = default;
};

struct IterationRecord {
  int iteration = 0;
  int rejected_score = 0;
  std::string dataset_path;   // relative to the run directory
  DatasetSummary dataset;
  double loss_initial = 0.0;
  double loss_final = 0.0;
  std::vector<double> loss_trace;  // loss at each checkpoint, first entry is loss_initial
  std::string snapshot_path;  // relative to the run directory
  std::string snapshot_hash;
  IterationMetrics metrics;

  friend bool operator==(const IterationRecord&, const IterationRecord&) = default;
};

struct InitRecord {
  std::string snapshot_path;
  std::string snapshot_hash;
  int sft_steps = 0;
  std::vector<double> sft_loss_trace;
  std::size_t offline_pairs = 0;
  double pref_loss_initial = 0.0;
  double pref_loss_final = 0.0;
  double greedy_reward = 0.0;
  double policy_expected_reward = 0.0;

  friend bool operator==(const InitRecord&, const InitRecord&) = default;
};

/// Everything needed to reproduce a run. Contains no wall-clock data so that
/// identical inputs produce byte-identical manifests.
struct RunManifest {
  std::string tool_version{kToolVersion};
  std::uint64_t master_seed = 0;
  Json config = Json::object();
  std::optional<InitRecord> init;
  std::vector<IterationRecord> iterations;
  std::string status = "partial";  // partial | complete | failed
  std::string error;

  friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

Json to_json(const IterationRecord& r);
IterationRecord iteration_record_from_json(const Json& j);
Json to_json(const InitRecord& r);
InitRecord init_record_from_json(const Json& j);
Json to_json(const RunManifest& m);
RunManifest manifest_from_json(const Json& j);

void save_manifest(const std::filesystem::path& path, const RunManifest& m);
RunManifest load_manifest(const std::filesystem::path& path);

}  // namespace srlab
