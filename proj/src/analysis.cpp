#include "srlab/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "srlab/io.hpp"
#include "srlab/random.hpp"

namespace srlab {

namespace fs = std::filesystem;

namespace {

struct Moments {
  double mean = 0.0;
  double std = 0.0;
};

Moments moments(const std::vector<double>& xs) {
  Moments m;
  if (xs.empty()) return m;
  double sum = 0.0;
  for (double x : xs) sum += x;
  m.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

double mean_of(const std::vector<double>& xs) { return moments(xs).mean; }

// One draw: a uniformly chosen prompt and a response from its row.
std::pair<std::size_t, std::size_t> draw(const Distribution& dist, Rng& rng) {
  const std::size_t p = static_cast<std::size_t>(rng.below(dist.prompts));
  return {p, sample(dist, p, rng)};
}

}  // namespace

SweepReport prefix_sweep(const TabularPolicy& policy, const RewardMatrix& f, double gamma, double alpha,
                         std::size_t samples_per_score, std::uint64_t seed) {
  if (samples_per_score == 0) fail(ErrorKind::InvalidArgument, "samples_per_score must be >= 1");
  SweepReport report;
  for (int s = 1; s <= 10; ++s) {
    const Distribution dist = conditional_distribution(ConditionalPolicy{&policy, double(s), gamma, alpha}, f);
    SweepRow row;
    row.score = s;
    row.exact_per_prompt = expected_reward_per_prompt(dist, f);
    row.exact = expected_reward(dist, f);
    double second = 0.0;
    for (std::size_t p = 0; p < dist.prompts; ++p) {
      for (std::size_t y = 0; y < dist.responses; ++y) second += dist.at(p, y) * f.at(p, y) * f.at(p, y);
    }
    second /= static_cast<double>(dist.prompts);
    row.exact_std = std::sqrt(std::max(0.0, second - row.exact * row.exact));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    std::vector<double> values;
    values.reserve(samples_per_score);
    for (std::size_t i = 0; i < samples_per_score; ++i) {
      auto [p, y] = draw(dist, rng);
      values.push_back(f.at(p, y));
    }
    const Moments m = moments(values);
    row.mean = m.mean;
    row.std = m.std;
    row.n = values.size();
    report.rows.push_back(std::move(row));
  }
  return report;
}

bool sampled_within_tolerance(const SweepRow& row) {
  if (row.n == 0) return false;
  const double sigma = row.exact_std / std::sqrt(static_cast<double>(row.n));
  return std::abs(row.mean - row.exact) <= 4.0 * sigma + 1e-9;
}

GapTrend gap_trend(const RunManifest& manifest, const fs::path& run_dir, const RewardOracle& oracle) {
  GapTrend trend;
  for (const auto& it : manifest.iterations) {
    const fs::path path = run_dir / it.dataset_path;
    if (!fs::exists(path)) {
      fail(ErrorKind::MissingDataset, "iteration " + std::to_string(it.iteration) + " dataset not found: " +
                                          path.string());
    }
    const auto pairs = read_pairs_jsonl(path);
    GapRow row;
    row.iteration = it.iteration;
    row.rejected_score = it.rejected_score;
    if (!pairs.empty()) {
      double chosen = 0.0;
      double rejected = 0.0;
      for (const auto& pair : pairs) {
        const Prompt prompt{pair.prompt_id, pair.prompt};
        chosen += oracle.score(prompt, pair.chosen);
        rejected += oracle.score(prompt, pair.rejected);
      }
      row.mean_chosen = chosen / static_cast<double>(pairs.size());
      row.mean_rejected = rejected / static_cast<double>(pairs.size());
      row.gap = row.mean_chosen - row.mean_rejected;
    }
    trend.rows.push_back(row);
  }
  return trend;
}

AblationReport ablation_arithmetic_control(const TrainConfig& curriculum, const TrainConfig& control,
                                           const TrainingData& data, std::span<const std::uint64_t> seeds,
                                           const fs::path& scratch_dir, const AnalysisThresholds& thresholds) {
  {
    TrainConfig a = curriculum;
    TrainConfig b = control;
    b.schedule = a.schedule;
    a.seed = b.seed = 0;
    if (!(a == b)) fail(ErrorKind::InvalidConfig, "ablation configs must differ only in their schedule");
  }
  if (seeds.empty()) fail(ErrorKind::InvalidArgument, "ablation needs at least one seed");

  AblationReport report;
  report.seeds.assign(seeds.begin(), seeds.end());
  report.curriculum.label = "curriculum";
  report.curriculum.schedule = curriculum.schedule.rejected_scores;
  report.control.label = "control";
  report.control.schedule = control.schedule.rejected_scores;

  auto run_arm = [&](const TrainConfig& base, AblationArm& arm, std::uint64_t seed) {
    TrainConfig config = base;
    config.seed = seed;
    const fs::path dir = scratch_dir / arm.label / ("seed-" + std::to_string(seed));
    fs::remove_all(dir);
    RunManifest manifest = run(config, data, dir);
    arm.final_greedy.push_back(manifest.iterations.back().metrics.greedy_reward);
    arm.final_expected.push_back(manifest.iterations.back().metrics.policy_expected_reward);
    arm.manifests.push_back(std::move(manifest));
  };
  for (std::uint64_t seed : seeds) {
    run_arm(curriculum, report.curriculum, seed);
    run_arm(control, report.control, seed);
    if (report.curriculum.final_greedy.back() >= report.control.final_greedy.back()) ++report.wins;
  }
  for (AblationArm* arm : {&report.curriculum, &report.control}) {
    arm->mean_greedy = mean_of(arm->final_greedy);
    arm->mean_expected = mean_of(arm->final_expected);
  }
  report.win_fraction = static_cast<double>(report.wins) / static_cast<double>(seeds.size());
  report.low_confidence = seeds.size() < thresholds.low_confidence_below;
  return report;
}

PrefixEvalReport chosen_prefix_inference_eval(const TabularPolicy& reference, const TabularPolicy& trained,
                                              const RewardMatrix& f, const ResponseSpace& space,
                                              const CleaningRuleSet& rules, double gamma, double alpha,
                                              std::size_t samples, std::uint64_t seed) {
  if (samples == 0) fail(ErrorKind::InvalidArgument, "samples must be >= 1");
  const Distribution ref = reference.distribution();
  const Distribution prefixed =
      conditional_distribution(ConditionalPolicy{&reference, double(kChosenScore), gamma, alpha}, f);
  const Distribution tuned = trained.distribution();

  PrefixEvalReport r;
  r.exact_reference = expected_reward(ref, f);
  r.exact_prefixed = expected_reward(prefixed, f);
  r.exact_trained = expected_reward(tuned, f);
  r.samples = samples;

  auto sampled_mean = [&](const Distribution& dist, std::string_view tag, bool clean) {
    Rng rng(derive_seed(seed, tag));
    std::vector<double> values;
    for (std::size_t i = 0; i < samples; ++i) {
      auto [p, y] = draw(dist, rng);
      if (clean) {
        const CleanResult c = clean_response(rules, space[y]);
        const auto idx = c.rejected ? std::nullopt : space.find(c.text);
        if (!idx) {
          ++r.cleaned_away;
          continue;
        }
        y = *idx;
      }
      values.push_back(f.at(p, y));
    }
    return mean_of(values);
  };
  r.sampled_reference = sampled_mean(ref, "reference", false);
  r.sampled_prefixed = sampled_mean(prefixed, "prefixed", true);
  r.sampled_trained = sampled_mean(tuned, "trained", false);
  return r;
}

// ---------------------------------------------------------------------------
// Export

std::string to_csv(const SweepReport& r) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& row : r.rows) {
    rows.push_back({std::to_string(row.score), format_double(row.mean), format_double(row.std),
                    std::to_string(row.n), format_double(row.exact)});
  }
  return to_csv({"score", "mean", "std", "n", "exact"}, rows);
}

std::string to_csv(const GapTrend& r) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& row : r.rows) {
    rows.push_back({std::to_string(row.iteration), std::to_string(row.rejected_score), format_double(row.mean_chosen),
                    format_double(row.mean_rejected), format_double(row.gap)});
  }
  return to_csv({"iteration", "rejected_score", "mean_chosen", "mean_rejected", "gap"}, rows);
}

std::string to_csv(const AblationReport& r) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < r.seeds.size(); ++i) {
    const bool win = r.curriculum.final_greedy[i] >= r.control.final_greedy[i];
    rows.push_back({std::to_string(r.seeds[i]), format_double(r.curriculum.final_greedy[i]),
                    format_double(r.control.final_greedy[i]), format_double(r.curriculum.final_expected[i]),
                    format_double(r.control.final_expected[i]), win ? "1" : "0"});
  }
  return to_csv({"seed", "curriculum_greedy", "control_greedy", "curriculum_expected", "control_expected",
                 "curriculum_wins"},
                rows);
}

std::string to_csv(const PrefixEvalReport& r) {
  return to_csv({"arm", "exact", "sampled"},
                {{"reference", format_double(r.exact_reference), format_double(r.sampled_reference)},
                 {"prefixed", format_double(r.exact_prefixed), format_double(r.sampled_prefixed)},
                 {"trained", format_double(r.exact_trained), format_double(r.sampled_trained)}});
}

template <typename Report>
void export_csv(const Report& report, const fs::path& path) {
  write_text_atomic(path, to_csv(report));
}

template void export_csv<SweepReport>(const SweepReport&, const fs::path&);
template void export_csv<GapTrend>(const GapTrend&, const fs::path&);
template void export_csv<AblationReport>(const AblationReport&, const fs::path&);
template void export_csv<PrefixEvalReport>(const PrefixEvalReport&, const fs::path&);

Json to_json(const SweepReport& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    rows.push_back(Json{{"score", row.score}, {"mean", row.mean}, {"std", row.std}, {"n", row.n}, {"exact", row.exact}});
  }
  return Json{{"rows", rows}};
}

Json to_json(const GapTrend& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows) {
    rows.push_back(Json{{"iteration", row.iteration},
                        {"rejected_score", row.rejected_score},
                        {"mean_chosen", row.mean_chosen},
                        {"mean_rejected", row.mean_rejected},
                        {"gap", row.gap}});
  }
  return Json{{"rows", rows}};
}

Json to_json(const AblationReport& r) {
  auto arm = [](const AblationArm& a) {
    return Json{{"label", a.label},
                {"schedule", a.schedule},
                {"mean_greedy", a.mean_greedy},
                {"mean_expected", a.mean_expected}};
  };
  return Json{{"seeds", r.seeds.size()},
              {"curriculum", arm(r.curriculum)},
              {"control", arm(r.control)},
              {"wins", r.wins},
              {"win_fraction", r.win_fraction},
              {"low_confidence", r.low_confidence}};
}

Json to_json(const PrefixEvalReport& r) {
  return Json{{"exact_reference", r.exact_reference},   {"exact_prefixed", r.exact_prefixed},
              {"exact_trained", r.exact_trained},       {"sampled_reference", r.sampled_reference},
              {"sampled_prefixed", r.sampled_prefixed}, {"sampled_trained", r.sampled_trained},
              {"samples", r.samples},                   {"cleaned_away", r.cleaned_away}};
}

}  // namespace srlab
