#pragma once

// Desk-scale analysis experiments: reward versus prefix score, the
// chosen/rejected reward trend across iterations, the fixed-versus-rising
// rejected-score ablation, and inference with the top-score prefix compared
// with training. Every report exports to a fixed-schema CSV.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "srlab/core_types.hpp"
#include "srlab/datagen.hpp"
#include "srlab/policy_engine.hpp"
#include "srlab/reward_oracle.hpp"
#include "srlab/trainer.hpp"

namespace srlab {

/// Majority thresholds for the cross-seed claims.
struct AnalysisThresholds {
  double narrowing_fraction = 0.9;
  double curriculum_win_fraction = 0.7;
  double improvement_fraction = 0.9;
  double prefix_eval_fraction = 0.7;
  std::size_t low_confidence_below = 10;  // seed count under which results are flagged
};

struct SweepRow {
  int score = 0;
  double mean = 0.0;  // sampled oracle reward
  double std = 0.0;   // sample standard deviation
  std::size_t n = 0;
  double exact = 0.0;                    // enumeration, averaged over prompts
  std::vector<double> exact_per_prompt;  // not exported
  double exact_std = 0.0;                // spread of one draw under the exact policy, not exported
};

struct SweepReport {
  std::vector<SweepRow> rows;  // scores 1..10
};

/// Samples `samples_per_score` (prompt, response) draws per prefix score from
/// the conditional policy (prompt chosen uniformly) and reports the exact
/// expectation alongside. Throws InvalidArgument when samples_per_score == 0.
SweepReport prefix_sweep(const TabularPolicy& policy, const RewardMatrix& f, double gamma, double alpha,
                         std::size_t samples_per_score, std::uint64_t seed);

/// |mean - exact| <= 4 sigma with sigma = exact_std / sqrt(n). The exact
/// spread is used because a small sample of a peaked policy can show none.
bool sampled_within_tolerance(const SweepRow& row);

struct GapRow {
  int iteration = 0;
  int rejected_score = 0;
  double mean_chosen = 0.0;
  double mean_rejected = 0.0;
  double gap = 0.0;
};

struct GapTrend {
  std::vector<GapRow> rows;
};

/// Re-scores every iteration dataset listed in the manifest (paths relative to
/// `run_dir`). Throws MissingDataset.
GapTrend gap_trend(const RunManifest& manifest, const std::filesystem::path& run_dir, const RewardOracle& oracle);

struct AblationArm {
  std::string label;
  std::vector<int> schedule;
  std::vector<double> final_greedy;    // per seed
  std::vector<double> final_expected;  // per seed
  std::vector<RunManifest> manifests;  // per seed
  double mean_greedy = 0.0;
  double mean_expected = 0.0;
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  AblationArm curriculum;
  AblationArm control;
  std::size_t wins = 0;  // seeds where curriculum final greedy >= control
  double win_fraction = 0.0;
  bool low_confidence = false;
};

/// Runs both configurations over every seed; runs land in
/// scratch_dir/<label>/seed-<n>. The configs must differ only in schedule
/// (InvalidConfig otherwise).
AblationReport ablation_arithmetic_control(const TrainConfig& curriculum, const TrainConfig& control,
                                           const TrainingData& data, std::span<const std::uint64_t> seeds,
                                           const std::filesystem::path& scratch_dir,
                                           const AnalysisThresholds& thresholds = {});

struct PrefixEvalReport {
  double exact_reference = 0.0;   // (a) plain sampling from the reference
  double exact_prefixed = 0.0;    // (b) top-score conditional on the reference
  double exact_trained = 0.0;     // (c) the iteration-1 policy
  double sampled_reference = 0.0;
  double sampled_prefixed = 0.0;  // after cleaning; rejected draws are dropped
  double sampled_trained = 0.0;
  std::size_t samples = 0;
  std::size_t cleaned_away = 0;
};

PrefixEvalReport chosen_prefix_inference_eval(const TabularPolicy& reference, const TabularPolicy& trained,
                                              const RewardMatrix& f, const ResponseSpace& space,
                                              const CleaningRuleSet& rules, double gamma, double alpha,
                                              std::size_t samples, std::uint64_t seed);

// CSV schemas: one header per report type, fields in this order.
std::string to_csv(const SweepReport& r);        // score,mean,std,n,exact
std::string to_csv(const GapTrend& r);           // iteration,rejected_score,mean_chosen,mean_rejected,gap
std::string to_csv(const AblationReport& r);     // seed,curriculum_greedy,control_greedy,curriculum_expected,control_expected,curriculum_wins
std::string to_csv(const PrefixEvalReport& r);   // arm,exact,sampled

/// Writes the CSV atomically. Throws Io.
template <typename Report>
void export_csv(const Report& report, const std::filesystem::path& path);

Json to_json(const SweepReport& r);
Json to_json(const GapTrend& r);
Json to_json(const AblationReport& r);
Json to_json(const PrefixEvalReport& r);

}  // namespace srlab
