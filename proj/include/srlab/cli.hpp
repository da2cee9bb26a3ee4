#pragma once

// Command-line surface: strict JSON configuration, the run-directory layout
// and the init / generate / run / analyze / make-fixture subcommands.
// Standard output carries JSON lines only; logs go to the error stream.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "srlab/analysis.hpp"
#include "srlab/datagen.hpp"
#include "srlab/trainer.hpp"

namespace srlab {

struct OracleSettings {
  std::string kind = "target_match";  // target_match | table
  std::filesystem::path path;
  double r_max = 10.0;
  double sharpness = 1.5;  // target_match only
};

struct BackendSettings {
  std::string kind = "exact";  // exact | http
  HttpBackendConfig http;
};

struct AnalysisSettings {
  AnalysisThresholds thresholds;
  std::size_t samples_per_score = 200;
  std::vector<std::uint64_t> seeds;  // ablation seeds; empty means 1..20
};

struct Config {
  std::filesystem::path prompts;
  std::filesystem::path responses;
  OracleSettings oracle;
  std::filesystem::path pretrained;
  std::filesystem::path sft_data;
  std::filesystem::path offline_pairs;  // optional
  std::filesystem::path cleaning_rules;  // optional; default rules when empty
  PrefixTemplate templates;
  BackendSettings backend;
  TrainConfig train;
  AnalysisSettings analysis;
  std::filesystem::path output_dir = "run";
};

/// Strict parse: unknown keys throw InvalidConfig. Relative paths resolve
/// against `base_dir`.
Config config_from_json(const Json& j, const std::filesystem::path& base_dir);
/// Reads and parses a config file (Io / ParseError / InvalidConfig).
Config load_config(const std::filesystem::path& path);
/// The resolved config as stored in run manifests.
Json to_json(const Config& config);

/// Loads prompts, responses, oracle, pretrained policy, SFT data, offline
/// pairs and cleaning rules named by the config, checking shapes agree.
TrainingData load_training_data(const Config& config);

/// Entry point used by the srlab executable. Returns the process exit code:
/// 0 success, 2 configuration or usage error, 3 backend or environment
/// error, 4 internal invariant violation.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace srlab
