#include "srlab/fixture.hpp"

#include <algorithm>
#include <map>

#include "srlab/datagen.hpp"
#include "srlab/io.hpp"
#include "srlab/random.hpp"

namespace srlab {

namespace fs = std::filesystem;

TrainingData Fixture::training_data() const {
  TrainingData data;
  data.prompts = prompts;
  data.space = space;
  data.rewards = oracle.matrix(prompts, space);
  data.pretrained = pretrained;
  data.sft = sft;
  data.offline = offline;
  return data;
}

ResponseSpace word_sequences(const std::vector<std::string>& alphabet, std::size_t min_words, std::size_t max_words) {
  if (alphabet.empty() || min_words == 0 || min_words > max_words) {
    fail(ErrorKind::InvalidArgument, "empty alphabet or bad length range");
  }
  std::vector<std::string> out;
  std::vector<std::string> layer{""};
  for (std::size_t len = 1; len <= max_words; ++len) {
    std::vector<std::string> next;
    for (const auto& prefix : layer) {
      for (const auto& word : alphabet) next.push_back(prefix.empty() ? word : prefix + " " + word);
    }
    if (len >= min_words) out.insert(out.end(), next.begin(), next.end());
    layer = std::move(next);
  }
  return ResponseSpace(std::move(out));
}

namespace {

std::string prompt_id(std::size_t i) {
  std::string digits = std::to_string(i);
  return "p" + std::string(digits.size() < 3 ? 3 - digits.size() : 0, '0') + digits;
}

// Indices whose reward lies in [lo, hi].
std::vector<std::size_t> band(std::span<const double> row, double lo, double hi) {
  std::vector<std::size_t> out;
  for (std::size_t y = 0; y < row.size(); ++y) {
    if (row[y] >= lo && row[y] <= hi) out.push_back(y);
  }
  return out;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

Fixture make_fixture(const FixtureSpec& spec) {
  if (spec.prompts == 0) fail(ErrorKind::InvalidArgument, "fixture needs at least one prompt");
  Fixture fx;
  Rng rng(derive_seed(spec.seed, "fixture"));
  fx.space = word_sequences(spec.alphabet, spec.min_words, spec.max_words);

  std::vector<Prompt> prompts;
  std::map<std::string, std::string> targets;
  for (std::size_t i = 0; i < spec.prompts; ++i) {
    std::string target;
    for (std::size_t w = 0; w < spec.target_words; ++w) {
      if (w > 0) target += ' ';
      target += spec.alphabet[rng.below(spec.alphabet.size())];
    }
    const std::string id = prompt_id(i);
    prompts.push_back({id, "Write the phrase for item " + std::to_string(i) + "."});
    targets[id] = target;
  }
  fx.prompts = PromptSet(std::move(prompts));
  fx.oracle = RewardOracle::target_match(targets, 10.0, spec.sharpness);
  const RewardMatrix f = fx.oracle.matrix(fx.prompts, fx.space);

  std::vector<double> logits(fx.prompts.size() * fx.space.size());
  for (double& v : logits) v = spec.pretrained_scale * rng.normal();
  std::vector<std::string> ids;
  for (const auto& p : fx.prompts) ids.push_back(p.id);
  fx.pretrained = TabularPolicy(ids, fx.space.size(), std::move(logits), 1.0);

  std::vector<std::size_t> offline_prompts(fx.prompts.size());
  for (std::size_t i = 0; i < offline_prompts.size(); ++i) offline_prompts[i] = i;
  shuffle(offline_prompts, rng);
  offline_prompts.resize(static_cast<std::size_t>(spec.offline_fraction * static_cast<double>(fx.prompts.size())));
  std::sort(offline_prompts.begin(), offline_prompts.end());

  for (std::size_t p = 0; p < fx.prompts.size(); ++p) {
    const Prompt& prompt = fx.prompts[p];
    auto demos = band(f.row(p), spec.sft_min_reward, spec.sft_max_reward);
    shuffle(demos, rng);
    demos.resize(std::min(demos.size(), spec.sft_per_prompt));
    for (std::size_t y : demos) fx.sft.emplace_back(prompt.id, fx.space[y]);

    if (std::binary_search(offline_prompts.begin(), offline_prompts.end(), p)) {
      auto good = band(f.row(p), spec.offline_chosen_min, spec.offline_chosen_max);
      auto bad = band(f.row(p), 0.0, spec.offline_rejected_max);
      if (good.empty() || bad.empty()) continue;
      PreferencePair pair;
      pair.prompt_id = prompt.id;
      pair.prompt = prompt.text;
      pair.chosen = fx.space[good[rng.below(good.size())]];
      pair.rejected = fx.space[bad[rng.below(bad.size())]];
      pair.chosen_score = kChosenScore;
      pair.rejected_score = 1;
      pair.iteration = 0;
      fx.offline.push_back(std::move(pair));
    }
  }
  return fx;
}

Fixture standard_fixture() { return make_fixture(FixtureSpec{}); }

TrainConfig standard_train_config() { return TrainConfig{}; }

void write_fixture(const Fixture& fx, const fs::path& dir) {
  fs::create_directories(dir);
  save_prompts(dir / "prompts.json", fx.prompts);
  save_responses(dir / "responses.json", fx.space);
  write_text_atomic(dir / "oracle.json", fx.oracle.to_file_json().dump(2) + "\n");
  fx.pretrained.save(dir / "pretrained.snapshot");
  write_sft_jsonl(dir / "sft.jsonl", fx.sft);
  write_pairs_jsonl(dir / "offline.jsonl", fx.offline);
}

}  // namespace srlab
