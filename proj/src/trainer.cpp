#include "srlab/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "srlab/io.hpp"
#include "srlab/kernels.hpp"
#include "srlab/logging.hpp"

namespace srlab {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

void validate(const TrainConfig& c) {
  if (c.iterations < 1) fail(ErrorKind::InvalidConfig, "iterations must be >= 1");
  validate_schedule(c.schedule, c.iterations);
  if (c.learning_rates.size() != static_cast<std::size_t>(c.iterations)) {
    fail(ErrorKind::InvalidConfig, "learning_rates needs one entry per iteration (" + std::to_string(c.iterations) +
                                       "), got " + std::to_string(c.learning_rates.size()));
  }
  for (double lr : c.learning_rates) {
    if (!(lr > 0.0) || !std::isfinite(lr)) fail(ErrorKind::InvalidConfig, "learning rates must be positive");
  }
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) fail(ErrorKind::InvalidConfig, std::string(name) + " must be positive");
  };
  positive(c.beta, "beta");
  positive(c.alpha, "alpha");
  positive(c.sft.learning_rate, "sft.learning_rate");
  positive(c.offline.learning_rate, "offline.learning_rate");
  if (!(c.gamma >= 0.0) || !std::isfinite(c.gamma)) fail(ErrorKind::InvalidConfig, "gamma must be >= 0");
  if (!(c.target_margin >= 0.0)) fail(ErrorKind::InvalidConfig, "target_margin must be >= 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) fail(ErrorKind::InvalidConfig, "momentum must lie in [0, 1)");
  if (c.steps_per_iteration < 0 || c.offline.steps < 0 || c.sft.max_steps < 0) {
    fail(ErrorKind::InvalidConfig, "step counts must be >= 0");
  }
  if (c.checkpoint_every < 1 || c.sft.window < 1) fail(ErrorKind::InvalidConfig, "checkpoint intervals must be >= 1");
  if (!(c.sft.tolerance >= 0.0)) fail(ErrorKind::InvalidConfig, "sft.tolerance must be >= 0");
}

namespace {

void require_known_keys(const Json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::InvalidConfig, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(ErrorKind::InvalidConfig, "unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read_key(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    fail(ErrorKind::InvalidConfig, where + "." + key + ": " + e.what());
  }
}

}  // namespace

Json to_json(const TrainConfig& c) {
  Json j;
  j["iterations"] = c.iterations;
  j["schedule"] = c.schedule.rejected_scores;
  j["beta"] = c.beta;
  j["gamma"] = c.gamma;
  j["alpha"] = c.alpha;
  j["target_margin"] = c.target_margin;
  j["init_loss"] = std::string(to_string(c.init_loss));
  j["iteration_loss"] = std::string(to_string(c.iteration_loss));
  j["learning_rates"] = c.learning_rates;
  j["steps_per_iteration"] = c.steps_per_iteration;
  j["checkpoint_every"] = c.checkpoint_every;
  j["momentum"] = c.momentum;
  j["sft"] = Json{{"learning_rate", c.sft.learning_rate},
                  {"max_steps", c.sft.max_steps},
                  {"tolerance", c.sft.tolerance},
                  {"window", c.sft.window}};
  j["offline"] = Json{{"learning_rate", c.offline.learning_rate}, {"steps", c.offline.steps}};
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  const std::string where = "train";
  require_known_keys(j,
                     {"iterations", "schedule", "beta", "gamma", "alpha", "target_margin", "init_loss",
                      "iteration_loss", "learning_rates", "steps_per_iteration", "checkpoint_every", "momentum",
                      "sft", "offline", "seed", "workers"},
                     where);
  TrainConfig c;
  read_key(j, "iterations", c.iterations, where);
  read_key(j, "schedule", c.schedule.rejected_scores, where);
  read_key(j, "beta", c.beta, where);
  read_key(j, "gamma", c.gamma, where);
  read_key(j, "alpha", c.alpha, where);
  read_key(j, "target_margin", c.target_margin, where);
  read_key(j, "learning_rates", c.learning_rates, where);
  read_key(j, "steps_per_iteration", c.steps_per_iteration, where);
  read_key(j, "checkpoint_every", c.checkpoint_every, where);
  read_key(j, "momentum", c.momentum, where);
  read_key(j, "seed", c.seed, where);
  read_key(j, "workers", c.workers, where);
  std::string loss;
  if (j.contains("init_loss")) {
    read_key(j, "init_loss", loss, where);
    c.init_loss = preference_loss_from_string(loss);
  }
  if (j.contains("iteration_loss")) {
    read_key(j, "iteration_loss", loss, where);
    c.iteration_loss = preference_loss_from_string(loss);
  }
  if (j.contains("sft")) {
    const Json& s = j.at("sft");
    require_known_keys(s, {"learning_rate", "max_steps", "tolerance", "window"}, "train.sft");
    read_key(s, "learning_rate", c.sft.learning_rate, "train.sft");
    read_key(s, "max_steps", c.sft.max_steps, "train.sft");
    read_key(s, "tolerance", c.sft.tolerance, "train.sft");
    read_key(s, "window", c.sft.window, "train.sft");
  }
  if (j.contains("offline")) {
    const Json& o = j.at("offline");
    require_known_keys(o, {"learning_rate", "steps"}, "train.offline");
    read_key(o, "learning_rate", c.offline.learning_rate, "train.offline");
    read_key(o, "steps", c.offline.steps, "train.offline");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Optimizer

namespace {

LossReport evaluate(const LossFn& loss, const TabularPolicy& policy) {
  LossReport r = loss(policy);
  if (!std::isfinite(r.value)) fail(ErrorKind::NonFiniteLoss, "loss became non-finite");
  return r;
}

constexpr int kMaxHalvings = 40;

}  // namespace

DescentResult minimize(TabularPolicy& policy, const LossFn& loss, double learning_rate, int steps, double momentum,
                       int checkpoint_every) {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorKind::InvalidArgument, "learning rate must be >= 0");
  }
  if (checkpoint_every < 1) fail(ErrorKind::InvalidArgument, "checkpoint_every must be >= 1");
  DescentResult result;
  LossReport current = evaluate(loss, policy);
  result.trace.push_back(current.value);
  if (steps <= 0) return result;

  std::vector<double> velocity(current.gradient.size(), 0.0);
  std::vector<double> direction(current.gradient.size());
  TabularPolicy candidate = policy;
  for (int step = 1; step <= steps; ++step) {
    if (learning_rate > 0.0) {
      for (std::size_t i = 0; i < direction.size(); ++i) direction[i] = momentum * velocity[i] + current.gradient[i];
      double rate = learning_rate;
      bool accepted = false;
      for (int h = 0; h <= kMaxHalvings; ++h) {
        std::copy(policy.logits().begin(), policy.logits().end(), candidate.logits().begin());
        kernels::axpy(-rate, direction, candidate.logits());
        LossReport next = evaluate(loss, candidate);
        if (next.value <= current.value) {
          std::swap(policy, candidate);
          current = std::move(next);
          velocity = direction;
          accepted = true;
          break;
        }
        ++result.backtracks;
        rate *= 0.5;
        std::fill(velocity.begin(), velocity.end(), 0.0);
        for (std::size_t i = 0; i < direction.size(); ++i) direction[i] = current.gradient[i];
      }
      if (!accepted) {
        // no descent step exists at this resolution: the iterate is stationary
        result.steps = step - 1;
        if (result.trace.size() == 1 || result.trace.back() != current.value) result.trace.push_back(current.value);
        return result;
      }
    }
    result.steps = step;
    if (step % checkpoint_every == 0 || step == steps) result.trace.push_back(current.value);
  }
  return result;
}

DescentResult train_sft(TabularPolicy& policy, std::span<const SftExample> data, const SftSettings& settings) {
  DescentResult result;
  auto loss = [&](const TabularPolicy& p) { return sft_loss(p, data); };
  result.trace.push_back(evaluate(loss, policy).value);
  if (data.empty()) return result;
  while (result.steps < settings.max_steps) {
    const int chunk = std::min(settings.window, settings.max_steps - result.steps);
    DescentResult part = minimize(policy, loss, settings.learning_rate, chunk, 0.0, chunk);
    result.steps += part.steps;
    result.backtracks += part.backtracks;
    const double before = result.trace.back();
    const double after = part.trace.back();
    if (part.steps == 0 || !(after < before)) break;
    result.trace.push_back(after);
    if (before - after < settings.tolerance) break;
  }
  return result;
}

LossFn preference_objective(PreferenceLoss kind, const TabularPolicy& reference, std::vector<IndexedPair> pairs,
                            double beta, double target_margin) {
  auto shared = std::make_shared<std::vector<IndexedPair>>(std::move(pairs));
  if (kind == PreferenceLoss::Dpo) {
    auto ref = std::make_shared<TabularPolicy>(reference);
    return [ref, shared, beta](const TabularPolicy& p) { return dpo_loss(p, *ref, *shared, beta); };
  }
  return [shared, beta, target_margin](const TabularPolicy& p) {
    return simpo_loss(p, *shared, beta, target_margin);
  };
}

// ---------------------------------------------------------------------------
// Pipeline

InitResult init_stage(const TabularPolicy& pretrained, std::span<const SftExample> sft,
                      std::span<const IndexedPair> offline, const TrainConfig& config) {
  InitResult result;
  result.policy = pretrained;
  result.sft = train_sft(result.policy, sft, config.sft);
  if (offline.empty()) {
    result.preference.trace.push_back(0.0);
    return result;
  }
  const TabularPolicy reference = result.policy;
  LossFn loss = preference_objective(config.init_loss, reference, {offline.begin(), offline.end()}, config.beta,
                                     config.target_margin);
  result.preference = minimize(result.policy, loss, config.offline.learning_rate, config.offline.steps,
                               config.momentum, config.checkpoint_every);
  return result;
}

IterationMetrics evaluate_iteration(const TabularPolicy& policy, const TabularPolicy& reference,
                                    const RewardMatrix& rewards, const PromptSet& prompts,
                                    const ResponseSpace& space, std::span<const PreferencePair> pairs, double beta) {
  IterationMetrics m;
  if (!pairs.empty()) {
    double chosen = 0.0;
    double rejected = 0.0;
    for (const auto& pair : pairs) {
      const std::size_t p = prompts.index_of(pair.prompt_id);
      chosen += rewards.at(p, space.index_of(pair.chosen));
      rejected += rewards.at(p, space.index_of(pair.rejected));
    }
    const double n = static_cast<double>(pairs.size());
    m.mean_chosen_reward = chosen / n;
    m.mean_rejected_reward = rejected / n;
    m.gap = m.mean_chosen_reward - m.mean_rejected_reward;
    m.dpo_loss_final = dpo_loss(policy, reference, resolve_pairs(prompts, space, pairs), beta).value;
  }
  m.policy_expected_reward = expected_reward(policy.distribution(), rewards);
  m.greedy_reward = greedy_reward(policy, rewards);
  return m;
}

namespace {

std::string iteration_dir(int iteration) { return "iter" + std::to_string(iteration); }

std::shared_ptr<spdlog::logger> logger_or_null(const std::shared_ptr<spdlog::logger>& log) {
  return log ? log : null_logger();
}

}  // namespace

IterationRecord run_iteration(TrainerState& state, int iteration) {
  if (state.data == nullptr) fail(ErrorKind::Internal, "trainer state has no data");
  const TrainConfig& config = state.config;
  const TrainingData& data = *state.data;
  if (iteration < 1 || iteration > config.iterations) {
    fail(ErrorKind::InvalidArgument, "iteration " + std::to_string(iteration) + " outside 1.." +
                                         std::to_string(config.iterations));
  }
  auto log = logger_or_null(state.log);
  const std::size_t slot = static_cast<std::size_t>(iteration - 1);
  if (slot >= config.learning_rates.size() || slot >= config.schedule.rejected_scores.size()) {
    fail(ErrorKind::InvalidConfig, "schedule or learning rates shorter than the iteration count");
  }

  const TabularPolicy reference = state.policy;
  ExactBackend backend(data.prompts, data.space, reference, data.rewards, config.gamma, config.alpha);
  backend.set_max_concurrency(config.workers);

  IterationRecord record;
  record.iteration = iteration;
  record.rejected_score = config.schedule.rejected_scores[slot];
  record.dataset_path = iteration_dir(iteration) + "/dataset.jsonl";
  record.snapshot_path = iteration_dir(iteration) + "/policy.snapshot";
  fs::create_directories(state.run_dir / iteration_dir(iteration));

  DatasetResult dataset = build_dataset(backend, data.rules, data.prompts, config.schedule, iteration,
                                        derive_seed(config.seed, static_cast<std::uint64_t>(iteration)),
                                        state.run_dir / record.dataset_path);
  record.dataset = dataset.summary;
  log->info("iteration {}: rejected score {}, {} pairs, {} skipped", iteration, record.rejected_score,
            dataset.summary.pairs_written, dataset.summary.skipped_total());
  if (dataset.pairs.empty()) {
    fail(ErrorKind::EmptyDataset, "iteration " + std::to_string(iteration) + ": every pair was skipped (" +
                                      to_json(dataset.summary).dump() + ")");
  }

  LossFn loss = preference_objective(config.iteration_loss, reference,
                                     resolve_pairs(data.prompts, data.space, dataset.pairs), config.beta,
                                     config.target_margin);
  TabularPolicy trained = reference;
  DescentResult descent = minimize(trained, loss, config.learning_rates[slot], config.steps_per_iteration,
                                   config.momentum, config.checkpoint_every);
  record.loss_trace = descent.trace;
  record.loss_initial = descent.trace.front();
  record.loss_final = descent.trace.back();
  if (record.loss_final > record.loss_initial) {
    fail(ErrorKind::Internal, "training raised the loss on its own dataset");
  }

  trained.save(state.run_dir / record.snapshot_path);
  record.snapshot_hash = trained.content_hash();
  record.metrics = evaluate_iteration(trained, reference, data.rewards, data.prompts, data.space, dataset.pairs,
                                      config.beta);
  log->info("iteration {}: loss {:.6f} -> {:.6f}, greedy reward {:.4f}", iteration, record.loss_initial,
            record.loss_final, record.metrics.greedy_reward);
  state.policy = std::move(trained);
  return record;
}

std::string metrics_csv(const RunManifest& manifest) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& it : manifest.iterations) {
    const auto& m = it.metrics;
    rows.push_back({std::to_string(it.iteration), format_double(m.mean_chosen_reward),
                    format_double(m.mean_rejected_reward), format_double(m.gap),
                    format_double(m.policy_expected_reward), format_double(m.dpo_loss_final)});
  }
  return to_csv({"iteration", "mean_chosen_reward", "mean_rejected_reward", "gap", "policy_expected_reward",
                 "dpo_loss_final"},
                rows);
}

namespace {

void persist(const fs::path& run_dir, const RunManifest& manifest) {
  save_manifest(run_dir / kManifestFile, manifest);
  write_text_atomic(run_dir / kMetricsFile, metrics_csv(manifest));
}

TabularPolicy load_verified(const fs::path& path, const std::string& expected_hash) {
  TabularPolicy policy = TabularPolicy::load(path);
  if (policy.content_hash() != expected_hash) {
    fail(ErrorKind::InvalidConfig, "snapshot " + path.string() + " does not match the hash in the manifest");
  }
  return policy;
}

}  // namespace

RunManifest run(const TrainConfig& config, const TrainingData& data, const fs::path& run_dir,
                const RunOptions& options, std::shared_ptr<spdlog::logger> log) {
  validate(config);
  log = logger_or_null(log);
  const Json snapshot = options.config_snapshot ? *options.config_snapshot : to_json(config);
  const fs::path manifest_path = run_dir / kManifestFile;

  RunManifest manifest;
  manifest.master_seed = config.seed;
  manifest.config = snapshot;

  TrainerState state{config, &data, run_dir, data.pretrained, log};
  if (fs::exists(manifest_path)) {
    if (!options.resume) {
      fail(ErrorKind::InvalidConfig, run_dir.string() + " already holds a manifest; pass --resume or pick another --out");
    }
    RunManifest previous = load_manifest(manifest_path);
    if (previous.config != snapshot || previous.master_seed != config.seed) {
      fail(ErrorKind::InvalidConfig, "cannot resume " + run_dir.string() + ": config or seed differs from the manifest");
    }
    if (previous.status == "complete") return previous;
    manifest.init = previous.init;
    manifest.iterations = previous.iterations;
    if (!manifest.iterations.empty()) {
      const auto& last = manifest.iterations.back();
      state.policy = load_verified(run_dir / last.snapshot_path, last.snapshot_hash);
    } else if (manifest.init) {
      state.policy = load_verified(run_dir / manifest.init->snapshot_path, manifest.init->snapshot_hash);
    }
    log->info("resuming {} after {} completed iteration(s)", run_dir.string(), manifest.iterations.size());
  } else if (options.resume) {
    log->info("nothing to resume in {}; starting fresh", run_dir.string());
  }

  try {
    fs::create_directories(run_dir);
    if (!manifest.init) {
      const auto sft = resolve_sft(data.prompts, data.space, data.sft);
      const auto offline = resolve_pairs(data.prompts, data.space, data.offline);
      InitResult init = init_stage(data.pretrained, sft, offline, config);
      InitRecord record;
      record.snapshot_path = "init/policy.snapshot";
      fs::create_directories(run_dir / "init");
      init.policy.save(run_dir / record.snapshot_path);
      record.snapshot_hash = init.policy.content_hash();
      record.sft_steps = init.sft.steps;
      record.sft_loss_trace = init.sft.trace;
      record.offline_pairs = offline.size();
      record.pref_loss_initial = init.preference.trace.front();
      record.pref_loss_final = init.preference.trace.back();
      record.greedy_reward = greedy_reward(init.policy, data.rewards);
      record.policy_expected_reward = expected_reward(init.policy.distribution(), data.rewards);
      log->info("init: {} SFT steps, offline loss {:.6f} -> {:.6f}, greedy reward {:.4f}", record.sft_steps,
                record.pref_loss_initial, record.pref_loss_final, record.greedy_reward);
      manifest.init = record;
      state.policy = std::move(init.policy);
      persist(run_dir, manifest);
    }
    for (int i = static_cast<int>(manifest.iterations.size()) + 1; i <= config.iterations; ++i) {
      if (options.stop_after && static_cast<int>(manifest.iterations.size()) >= *options.stop_after) {
        manifest.status = "partial";
        persist(run_dir, manifest);
        return manifest;
      }
      manifest.iterations.push_back(run_iteration(state, i));
      persist(run_dir, manifest);
    }
    manifest.status = "complete";
    persist(run_dir, manifest);
  } catch (const std::exception& e) {
    manifest.status = "failed";
    manifest.error = e.what();
    try {
      persist(run_dir, manifest);
    } catch (const std::exception& inner) {
      log->error("could not persist the partial manifest: {}", inner.what());
    }
    throw;
  }
  return manifest;
}

}  // namespace srlab
