#pragma once

// The standard toy instance used by the experiments: three-word sequences as
// the response space, an edit-similarity oracle with one hidden target per
// prompt, a random pretrained policy, mid-quality SFT demonstrations and a
// small set of offline preference pairs.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "srlab/core_types.hpp"
#include "srlab/policy_engine.hpp"
#include "srlab/reward_oracle.hpp"
#include "srlab/trainer.hpp"

namespace srlab {

struct FixtureSpec {
  std::uint64_t seed = 0x5eed2024;
  std::size_t prompts = 40;
  std::vector<std::string> alphabet{"a", "b", "c", "d"};
  std::size_t min_words = 3;
  std::size_t max_words = 3;
  std::size_t target_words = 3;
  double sharpness = 1.5;
  double pretrained_scale = 1.0;  // std of the pretrained logits
  std::size_t sft_per_prompt = 3;
  double sft_min_reward = 4.0;  // demonstrations are drawn from this reward band
  double sft_max_reward = 8.0;
  double offline_fraction = 0.25;  // share of prompts with an offline pair
  double offline_chosen_min = 6.0;
  double offline_chosen_max = 9.0;
  double offline_rejected_max = 3.0;
};

struct Fixture {
  PromptSet prompts;
  ResponseSpace space;
  RewardOracle oracle = RewardOracle::target_match({});
  TabularPolicy pretrained;
  std::vector<std::pair<std::string, std::string>> sft;
  std::vector<PreferencePair> offline;

  /// Bundles the fixture for the trainer (default cleaning rules).
  TrainingData training_data() const;
};

/// Every sequence of min_words..max_words words over the alphabet, joined by spaces.
ResponseSpace word_sequences(const std::vector<std::string>& alphabet, std::size_t min_words, std::size_t max_words);

Fixture make_fixture(const FixtureSpec& spec);
Fixture standard_fixture();
/// Training hyperparameters tuned for the standard fixture.
TrainConfig standard_train_config();

/// Writes prompts.json, responses.json, oracle.json, pretrained.snapshot,
/// sft.jsonl and offline.jsonl into `dir`.
void write_fixture(const Fixture& fixture, const std::filesystem::path& dir);

}  // namespace srlab
