#pragma once

// The training pipeline: SFT then offline preference optimization to
// initialize, followed by self-rewarding iterations. Each iteration freezes
// the current policy as the reference, generates one score-prefixed pair per
// prompt from it, and fine-tunes a warm-started copy on that dataset.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "srlab/core_types.hpp"
#include "srlab/datagen.hpp"
#include "srlab/losses.hpp"
#include "srlab/policy_engine.hpp"
#include "srlab/reward_oracle.hpp"

namespace spdlog {
class logger;
}

namespace srlab {

struct SftSettings {
  double learning_rate = 0.5;
  int max_steps = 10000;
  /// Converged once the loss moves by less than this over `window` steps.
  double tolerance = 1e-9;
  int window = 100;

  friend bool operator==(const SftSettings&, const SftSettings&) = default;
};

struct OfflineSettings {
  double learning_rate = 0.5;
  int steps = 200;

  friend bool operator==(const OfflineSettings&, const OfflineSettings&) = default;
};

struct TrainConfig {
  int iterations = 3;
  ScoreSchedule schedule = default_schedule();
  // Defaults are tuned for the standard fixture (see README).
  double beta = 4.0;
  double gamma = 1.0;
  double alpha = 2.0;
  double target_margin = 4.0;  // SimPO only
  PreferenceLoss init_loss = PreferenceLoss::Simpo;
  PreferenceLoss iteration_loss = PreferenceLoss::Simpo;
  std::vector<double> learning_rates{0.5, 0.25, 0.1};
  int steps_per_iteration = 1000;
  int checkpoint_every = 50;
  double momentum = 0.0;
  SftSettings sft;
  OfflineSettings offline;
  std::uint64_t seed = 0;
  /// Concurrent dataset-generation workers; results do not depend on it.
  std::size_t workers = 4;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Throws InvalidConfig (or the schedule's LengthMismatch / ScoreOutOfRange / NonMonotone).
void validate(const TrainConfig& config);

Json to_json(const TrainConfig& config);
/// Strict: unknown keys throw InvalidConfig. Missing keys keep their defaults.
TrainConfig train_config_from_json(const Json& j);

// ---------------------------------------------------------------------------
// Optimizer

struct DescentResult {
  std::vector<double> trace;  // loss at step 0, every checkpoint, and the last step
  int steps = 0;
  int backtracks = 0;
};

/// Gradient descent with optional heavy-ball momentum and a probed step: a
/// candidate step that would raise the loss is halved (and the velocity
/// reset) until it does not, so the loss sequence is non-increasing. A zero
/// learning rate leaves the logits untouched. Throws NonFiniteLoss.
DescentResult minimize(TabularPolicy& policy, const LossFn& loss, double learning_rate, int steps,
                       double momentum, int checkpoint_every);

/// Runs SFT until the windowed loss change drops below tolerance or the cap.
DescentResult train_sft(TabularPolicy& policy, std::span<const SftExample> data, const SftSettings& settings);

LossFn preference_objective(PreferenceLoss kind, const TabularPolicy& reference, std::vector<IndexedPair> pairs,
                            double beta, double target_margin);

// ---------------------------------------------------------------------------
// Pipeline

/// Everything the pipeline reads. `rewards` is the oracle over prompts x space.
struct TrainingData {
  PromptSet prompts;
  ResponseSpace space;
  RewardMatrix rewards;
  TabularPolicy pretrained;
  std::vector<std::pair<std::string, std::string>> sft;
  std::vector<PreferencePair> offline;
  CleaningRuleSet rules = CleaningRuleSet::defaults();
};

struct InitResult {
  TabularPolicy policy;
  DescentResult sft;
  DescentResult preference;
};

/// SFT to convergence, then offline preference training against the SFT
/// policy as reference. With no offline pairs the SFT policy is returned.
InitResult init_stage(const TabularPolicy& pretrained, std::span<const SftExample> sft,
                      std::span<const IndexedPair> offline, const TrainConfig& config);

struct TrainerState {
  TrainConfig config;
  const TrainingData* data = nullptr;
  std::filesystem::path run_dir;
  TabularPolicy policy;
  std::shared_ptr<spdlog::logger> log;
};

/// One self-rewarding round; writes iterN/dataset.jsonl and iterN/policy.snapshot
/// under the run directory and replaces state.policy with the trained policy.
/// Throws EmptyDataset when every pair was skipped.
IterationRecord run_iteration(TrainerState& state, int iteration);

struct RunOptions {
  bool resume = false;
  /// Stop (status "partial") once this many iterations are complete.
  std::optional<int> stop_after;
  /// Stored verbatim as the manifest's config; defaults to to_json(config).
  std::optional<Json> config_snapshot;
};

inline constexpr std::string_view kManifestFile = "manifest.json";
inline constexpr std::string_view kMetricsFile = "metrics.csv";

/// init_stage followed by the configured iterations. The manifest and metrics
/// CSV are rewritten after every stage; on failure the manifest is saved with
/// status "failed" and the error is rethrown.
RunManifest run(const TrainConfig& config, const TrainingData& data, const std::filesystem::path& run_dir,
                const RunOptions& options = {}, std::shared_ptr<spdlog::logger> log = nullptr);

/// Per-iteration metrics table.
std::string metrics_csv(const RunManifest& manifest);

/// Policy and dataset metrics for a finished iteration.
IterationMetrics evaluate_iteration(const TabularPolicy& policy, const TabularPolicy& reference,
                                    const RewardMatrix& rewards, const PromptSet& prompts,
                                    const ResponseSpace& space, std::span<const PreferencePair> pairs, double beta);

}  // namespace srlab
