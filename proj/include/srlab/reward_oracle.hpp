#pragma once

// Ground-truth bounded reward f(x, y) in [0, r_max]. Stands in for human
// preference; every analysis measures against it.

#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "srlab/core_types.hpp"

namespace srlab {

/// Levenshtein distance over Unicode code points (UTF-8 input).
std::size_t edit_distance(std::string_view a, std::string_view b);
/// 1 - dist / max_len, with two empty strings counting as identical.
double edit_similarity(std::string_view a, std::string_view b);

/// Dense f(x_i, y_j) for a prompt set and a response space, row per prompt.
struct RewardMatrix {
  std::size_t prompts = 0;
  std::size_t responses = 0;
  std::vector<double> values;
  double r_max = 10.0;

  std::span<const double> row(std::size_t p) const {
    return std::span<const double>(values).subspan(p * responses, responses);
  }
  double at(std::size_t p, std::size_t y) const { return values[p * responses + y]; }
};

class RewardOracle {
 public:
  enum class Kind { Table, TargetMatch };

  /// rewards[prompt_id][response_index]; every entry must lie in [0, r_max].
  static RewardOracle table(ResponseSpace space,
                            std::map<std::string, std::vector<double>> rewards,
                            double r_max = 10.0);
  /// reward = r_max * edit_similarity(response, target)^sharpness.
  static RewardOracle target_match(std::map<std::string, std::string> targets,
                                   double r_max = 10.0, double sharpness = 1.0);

  Kind kind() const noexcept { return kind_; }
  double r_max() const noexcept { return r_max_; }
  double sharpness() const noexcept { return sharpness_; }
  const std::map<std::string, std::string>& targets() const noexcept { return targets_; }

  /// Throws UnknownPrompt, and UnknownResponse for table oracles.
  double score(const Prompt& prompt, std::string_view response) const;
  std::vector<double> batch_score(const Prompt& prompt, std::span<const std::string> responses) const;

  /// f over the whole (prompts x space) grid.
  RewardMatrix matrix(const PromptSet& prompts, const ResponseSpace& space) const;

  /// Table file: {prompt_id: {response_index: reward}}, requires the space.
  /// Target file: {prompt_id: target_string}.
  static RewardOracle load_table(const std::filesystem::path& path, ResponseSpace space,
                                 double r_max = 10.0);
  static RewardOracle load_targets(const std::filesystem::path& path, double r_max = 10.0,
                                   double sharpness = 1.0);
  Json to_file_json() const;

 private:
  RewardOracle() = default;

  Kind kind_ = Kind::Table;
  double r_max_ = 10.0;
  double sharpness_ = 1.0;
  std::shared_ptr<const ResponseSpace> space_;
  std::map<std::string, std::vector<double>> table_;
  std::map<std::string, std::string> targets_;
};

}  // namespace srlab
