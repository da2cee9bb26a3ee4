#include "srlab/cli.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <ctime>

#include "srlab/fixture.hpp"
#include "srlab/io.hpp"
#include "srlab/logging.hpp"

namespace srlab {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

namespace {

void require_keys(const Json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::InvalidConfig, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(ErrorKind::InvalidConfig, "unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    fail(ErrorKind::InvalidConfig, where + "." + key + ": " + e.what());
  }
}

void read_path(const Json& j, const char* key, fs::path& out, const fs::path& base, const std::string& where) {
  std::string raw;
  read(j, key, raw, where);
  if (raw.empty()) return;
  const fs::path p(raw);
  out = (p.is_absolute() ? p : base / p).lexically_normal();
}

std::string path_string(const fs::path& p) { return p.empty() ? std::string() : p.string(); }

}  // namespace

Config config_from_json(const Json& j, const fs::path& base_dir) {
  require_keys(j,
               {"prompts", "responses", "oracle", "pretrained", "sft_data", "offline_pairs", "cleaning_rules",
                "templates", "backend", "train", "analysis", "output_dir"},
               "config");
  Config c;
  const fs::path base = base_dir.empty() ? fs::current_path() : fs::absolute(base_dir);
  read_path(j, "prompts", c.prompts, base, "config");
  read_path(j, "responses", c.responses, base, "config");
  read_path(j, "pretrained", c.pretrained, base, "config");
  read_path(j, "sft_data", c.sft_data, base, "config");
  read_path(j, "offline_pairs", c.offline_pairs, base, "config");
  read_path(j, "cleaning_rules", c.cleaning_rules, base, "config");
  read_path(j, "output_dir", c.output_dir, base, "config");
  if (!j.contains("output_dir")) c.output_dir = (base / c.output_dir).lexically_normal();

  if (j.contains("oracle")) {
    const Json& o = j.at("oracle");
    require_keys(o, {"kind", "path", "r_max", "sharpness"}, "oracle");
    read(o, "kind", c.oracle.kind, "oracle");
    read_path(o, "path", c.oracle.path, base, "oracle");
    read(o, "r_max", c.oracle.r_max, "oracle");
    read(o, "sharpness", c.oracle.sharpness, "oracle");
    if (c.oracle.kind != "target_match" && c.oracle.kind != "table") {
      fail(ErrorKind::InvalidConfig, "oracle.kind must be target_match or table");
    }
  }
  if (j.contains("templates")) {
    const Json& t = j.at("templates");
    require_keys(t, {"chosen", "rejected"}, "templates");
    read(t, "chosen", c.templates.chosen_template, "templates");
    read(t, "rejected", c.templates.rejected_template, "templates");
    validate_template(c.templates);
  }
  if (j.contains("backend")) {
    const Json& b = j.at("backend");
    require_keys(b, {"kind", "http"}, "backend");
    read(b, "kind", c.backend.kind, "backend");
    if (b.contains("http")) {
      const Json& h = b.at("http");
      const std::string where = "backend.http";
      require_keys(h,
                   {"endpoint", "model", "temperature", "max_tokens", "auth_env", "max_concurrency", "max_retries",
                    "backoff_initial_ms", "timeout_s"},
                   where);
      HttpBackendConfig& http = c.backend.http;
      read(h, "endpoint", http.endpoint, where);
      read(h, "model", http.model, where);
      read(h, "temperature", http.temperature, where);
      read(h, "max_tokens", http.max_tokens, where);
      read(h, "auth_env", http.auth_env, where);
      read(h, "max_concurrency", http.max_concurrency, where);
      read(h, "max_retries", http.max_retries, where);
      std::int64_t backoff = http.backoff_initial.count();
      std::int64_t timeout = http.timeout.count();
      read(h, "backoff_initial_ms", backoff, where);
      read(h, "timeout_s", timeout, where);
      http.backoff_initial = std::chrono::milliseconds(backoff);
      http.timeout = std::chrono::seconds(timeout);
    }
    if (c.backend.kind != "exact" && c.backend.kind != "http") {
      fail(ErrorKind::InvalidConfig, "backend.kind must be exact or http");
    }
  }
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("analysis")) {
    const Json& a = j.at("analysis");
    const std::string where = "analysis";
    require_keys(a,
                 {"samples_per_score", "seeds", "narrowing_fraction", "curriculum_win_fraction",
                  "improvement_fraction", "prefix_eval_fraction", "low_confidence_below"},
                 where);
    read(a, "samples_per_score", c.analysis.samples_per_score, where);
    read(a, "seeds", c.analysis.seeds, where);
    read(a, "narrowing_fraction", c.analysis.thresholds.narrowing_fraction, where);
    read(a, "curriculum_win_fraction", c.analysis.thresholds.curriculum_win_fraction, where);
    read(a, "improvement_fraction", c.analysis.thresholds.improvement_fraction, where);
    read(a, "prefix_eval_fraction", c.analysis.thresholds.prefix_eval_fraction, where);
    read(a, "low_confidence_below", c.analysis.thresholds.low_confidence_below, where);
  }
  return c;
}

Config load_config(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
  return config_from_json(j, fs::absolute(path).parent_path());
}

Json to_json(const Config& c) {
  Json j;
  j["prompts"] = path_string(c.prompts);
  j["responses"] = path_string(c.responses);
  j["oracle"] = Json{{"kind", c.oracle.kind},
                     {"path", path_string(c.oracle.path)},
                     {"r_max", c.oracle.r_max},
                     {"sharpness", c.oracle.sharpness}};
  j["pretrained"] = path_string(c.pretrained);
  j["sft_data"] = path_string(c.sft_data);
  j["offline_pairs"] = path_string(c.offline_pairs);
  j["cleaning_rules"] = path_string(c.cleaning_rules);
  j["templates"] = Json{{"chosen", c.templates.chosen_template}, {"rejected", c.templates.rejected_template}};
  const HttpBackendConfig& h = c.backend.http;
  j["backend"] = Json{{"kind", c.backend.kind},
                      {"http", Json{{"endpoint", h.endpoint},
                                    {"model", h.model},
                                    {"temperature", h.temperature},
                                    {"max_tokens", h.max_tokens},
                                    {"auth_env", h.auth_env},
                                    {"max_concurrency", h.max_concurrency},
                                    {"max_retries", h.max_retries},
                                    {"backoff_initial_ms", h.backoff_initial.count()},
                                    {"timeout_s", h.timeout.count()}}}};
  j["train"] = to_json(c.train);
  const AnalysisThresholds& t = c.analysis.thresholds;
  j["analysis"] = Json{{"samples_per_score", c.analysis.samples_per_score},
                       {"seeds", c.analysis.seeds},
                       {"narrowing_fraction", t.narrowing_fraction},
                       {"curriculum_win_fraction", t.curriculum_win_fraction},
                       {"improvement_fraction", t.improvement_fraction},
                       {"prefix_eval_fraction", t.prefix_eval_fraction},
                       {"low_confidence_below", t.low_confidence_below}};
  j["output_dir"] = path_string(c.output_dir);
  return j;
}

namespace {

void require_path(const fs::path& p, const char* key) {
  if (p.empty()) fail(ErrorKind::InvalidConfig, std::string("config is missing '") + key + "'");
}

RewardOracle load_oracle(const Config& c, const ResponseSpace& space) {
  require_path(c.oracle.path, "oracle.path");
  if (c.oracle.kind == "table") return RewardOracle::load_table(c.oracle.path, space, c.oracle.r_max);
  return RewardOracle::load_targets(c.oracle.path, c.oracle.r_max, c.oracle.sharpness);
}

CleaningRuleSet load_rules(const Config& c) {
  return c.cleaning_rules.empty() ? CleaningRuleSet::defaults() : CleaningRuleSet::load(c.cleaning_rules);
}

struct Scoring {
  PromptSet prompts;
  ResponseSpace space;
  RewardOracle oracle;
  RewardMatrix rewards;
};

Scoring load_scoring(const Config& c) {
  require_path(c.prompts, "prompts");
  require_path(c.responses, "responses");
  PromptSet prompts = load_prompts(c.prompts);
  ResponseSpace space = load_responses(c.responses);
  RewardOracle oracle = load_oracle(c, space);
  RewardMatrix rewards = oracle.matrix(prompts, space);
  return Scoring{std::move(prompts), std::move(space), std::move(oracle), std::move(rewards)};
}

void check_shape(const TabularPolicy& policy, const PromptSet& prompts, const ResponseSpace& space,
                 const std::string& what) {
  std::vector<std::string> ids;
  for (const auto& p : prompts) ids.push_back(p.id);
  if (policy.prompt_ids() != ids || policy.responses() != space.size()) {
    fail(ErrorKind::InvalidConfig, what + " does not match the prompts and response space of the config");
  }
}

}  // namespace

TrainingData load_training_data(const Config& c) {
  Scoring s = load_scoring(c);
  require_path(c.pretrained, "pretrained");
  require_path(c.sft_data, "sft_data");
  TrainingData data;
  data.pretrained = TabularPolicy::load(c.pretrained);
  check_shape(data.pretrained, s.prompts, s.space, "pretrained policy " + c.pretrained.string());
  data.sft = read_sft_jsonl(c.sft_data);
  if (!c.offline_pairs.empty()) data.offline = read_pairs_jsonl(c.offline_pairs);
  data.rules = load_rules(c);
  data.prompts = std::move(s.prompts);
  data.space = std::move(s.space);
  data.rewards = std::move(s.rewards);
  return data;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string backend;
  std::string out;
};

struct Context {
  std::ostream& out;
  std::shared_ptr<spdlog::logger> log;
};

void emit(Context& ctx, const Json& j) { ctx.out << j.dump() << '\n' << std::flush; }

Config resolve_config(const Common& common) {
  if (common.config_path.empty()) fail(ErrorKind::InvalidConfig, "--config is required");
  Config c = load_config(common.config_path);
  if (common.seed) c.train.seed = *common.seed;
  if (!common.backend.empty()) {
    if (common.backend != "exact" && common.backend != "http") {
      fail(ErrorKind::InvalidConfig, "--backend must be exact or http");
    }
    c.backend.kind = common.backend;
  }
  return c;
}

std::string utc_stamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

fs::path run_directory(const Common& common, const Config& c) {
  if (!common.out.empty()) return fs::absolute(common.out).lexically_normal();
  return c.output_dir / (utc_stamp() + "-" + std::to_string(c.train.seed));
}

RunManifest load_run_manifest(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::Io, "manifest not found: " + path.string());
  return load_manifest(path);
}

TabularPolicy latest_policy(const RunManifest& m, const fs::path& dir) {
  if (!m.iterations.empty()) return TabularPolicy::load(dir / m.iterations.back().snapshot_path);
  if (m.init) return TabularPolicy::load(dir / m.init->snapshot_path);
  fail(ErrorKind::InvalidConfig, "manifest has no snapshots");
}

int cmd_init(Context& ctx, const Common& common) {
  Config c = resolve_config(common);
  validate(c.train);
  TrainingData data = load_training_data(c);
  const fs::path dir = run_directory(common, c);
  RunOptions options;
  options.stop_after = 0;
  options.config_snapshot = to_json(c);
  RunManifest m = run(c.train, data, dir, options, ctx.log);
  emit(ctx, Json{{"event", "init"},
                 {"run_dir", dir.string()},
                 {"snapshot", (dir / m.init->snapshot_path).string()},
                 {"snapshot_hash", m.init->snapshot_hash},
                 {"sft_steps", m.init->sft_steps},
                 {"greedy_reward", m.init->greedy_reward}});
  return 0;
}

int cmd_generate(Context& ctx, const Common& common, int iteration) {
  Config c = resolve_config(common);
  const ScoreSchedule schedule = validate_schedule(c.train.schedule, c.train.iterations);
  if (iteration < 1 || iteration > c.train.iterations) {
    fail(ErrorKind::InvalidConfig, "--iteration must lie in 1.." + std::to_string(c.train.iterations));
  }
  const fs::path dir = run_directory(common, c);
  const CleaningRuleSet rules = load_rules(c);
  require_path(c.prompts, "prompts");
  const PromptSet prompts = load_prompts(c.prompts);

  std::unique_ptr<GenerationBackend> backend;
  if (c.backend.kind == "http") {
    backend = std::make_unique<HttpBackend>(c.backend.http, c.templates, ctx.log);
  } else {
    Scoring s = load_scoring(c);
    const fs::path snapshot = iteration == 1 ? dir / "init" / "policy.snapshot"
                                             : dir / ("iter" + std::to_string(iteration - 1)) / "policy.snapshot";
    if (!fs::exists(snapshot)) {
      fail(ErrorKind::Io, "reference snapshot not found: " + snapshot.string() + " (run init or earlier iterations)");
    }
    TabularPolicy reference = TabularPolicy::load(snapshot);
    check_shape(reference, s.prompts, s.space, "snapshot " + snapshot.string());
    auto exact = std::make_unique<ExactBackend>(s.prompts, s.space, reference, s.rewards, c.train.gamma,
                                                c.train.alpha);
    exact->set_max_concurrency(c.train.workers);
    backend = std::move(exact);
  }
  const fs::path out_path = dir / ("iter" + std::to_string(iteration)) / "dataset.jsonl";
  fs::create_directories(out_path.parent_path());
  DatasetResult result = build_dataset(*backend, rules, prompts, schedule, iteration,
                                       derive_seed(c.train.seed, static_cast<std::uint64_t>(iteration)), out_path);
  ctx.log->info("wrote {} pairs to {}", result.summary.pairs_written, out_path.string());
  emit(ctx, Json{{"event", "dataset"},
                 {"iteration", iteration},
                 {"backend", std::string(backend->kind())},
                 {"rejected_score", schedule.rejected_scores[static_cast<std::size_t>(iteration - 1)]},
                 {"path", out_path.string()},
                 {"pairs_written", result.summary.pairs_written},
                 {"skipped", to_json(result.summary).at("skipped")}});
  return 0;
}

int cmd_run(Context& ctx, const Common& common, bool resume, std::optional<int> stop_after) {
  Config c = resolve_config(common);
  if (c.backend.kind != "exact") {
    fail(ErrorKind::InvalidConfig, "training runs need the exact backend; use 'generate' with the http backend");
  }
  if (resume && common.out.empty()) fail(ErrorKind::InvalidConfig, "--resume needs --out pointing at the run");
  validate(c.train);
  TrainingData data = load_training_data(c);
  const fs::path dir = run_directory(common, c);
  RunOptions options;
  options.resume = resume;
  options.stop_after = stop_after;
  options.config_snapshot = to_json(c);
  RunManifest m = run(c.train, data, dir, options, ctx.log);
  Json j{{"event", "run"},
         {"status", m.status},
         {"run_dir", dir.string()},
         {"manifest", (dir / kManifestFile).string()},
         {"iterations", m.iterations.size()}};
  if (m.init) j["init_greedy_reward"] = m.init->greedy_reward;
  if (!m.iterations.empty()) j["final_greedy_reward"] = m.iterations.back().metrics.greedy_reward;
  emit(ctx, j);
  return 0;
}

struct AnalyzeArgs {
  std::string which;
  std::string manifest;
  std::string csv;
  std::string control_config;
};

int cmd_analyze(Context& ctx, const Common& common, const AnalyzeArgs& args) {
  Config c = resolve_config(common);
  Json report;
  fs::path csv = args.csv.empty() ? fs::path() : fs::absolute(args.csv);
  auto default_csv = [&](const fs::path& dir) {
    if (csv.empty()) csv = dir / (args.which + ".csv");
  };

  if (args.which == "ablation") {
    if (args.control_config.empty()) fail(ErrorKind::InvalidConfig, "ablation needs --control-config");
    Config control = load_config(args.control_config);
    if (common.seed) control.train.seed = *common.seed;
    validate(c.train);
    validate(control.train);
    TrainingData data = load_training_data(c);
    std::vector<std::uint64_t> seeds = c.analysis.seeds;
    if (seeds.empty()) {
      for (std::uint64_t s = 1; s <= 20; ++s) seeds.push_back(s);
    }
    const fs::path dir = common.out.empty() ? c.output_dir / ("ablation-" + utc_stamp()) : fs::absolute(common.out);
    AblationReport r =
        ablation_arithmetic_control(c.train, control.train, data, seeds, dir, c.analysis.thresholds);
    default_csv(dir);
    export_csv(r, csv);
    report = to_json(r);
    report["meets_threshold"] = r.win_fraction >= c.analysis.thresholds.curriculum_win_fraction;
  } else {
    if (args.manifest.empty()) fail(ErrorKind::InvalidConfig, "--manifest is required for " + args.which);
    const fs::path manifest_path = fs::absolute(args.manifest);
    const fs::path dir = manifest_path.parent_path();
    const RunManifest m = load_run_manifest(manifest_path);
    default_csv(dir);
    if (args.which == "trend") {
      Scoring s = load_scoring(c);
      GapTrend r = gap_trend(m, dir, s.oracle);
      export_csv(r, csv);
      report = to_json(r);
    } else if (args.which == "sweep") {
      Scoring s = load_scoring(c);
      TabularPolicy policy = latest_policy(m, dir);
      check_shape(policy, s.prompts, s.space, "snapshot");
      SweepReport r = prefix_sweep(policy, s.rewards, c.train.gamma, c.train.alpha, c.analysis.samples_per_score,
                                   c.train.seed);
      export_csv(r, csv);
      report = to_json(r);
    } else if (args.which == "prefix-eval") {
      Scoring s = load_scoring(c);
      if (!m.init || m.iterations.empty()) {
        fail(ErrorKind::MissingDataset, "prefix-eval needs a manifest with init and iteration 1 snapshots");
      }
      TabularPolicy reference = TabularPolicy::load(dir / m.init->snapshot_path);
      TabularPolicy trained = TabularPolicy::load(dir / m.iterations.front().snapshot_path);
      check_shape(reference, s.prompts, s.space, "init snapshot");
      check_shape(trained, s.prompts, s.space, "iteration 1 snapshot");
      PrefixEvalReport r = chosen_prefix_inference_eval(reference, trained, s.rewards, s.space, load_rules(c),
                                                        c.train.gamma, c.train.alpha, c.analysis.samples_per_score,
                                                        c.train.seed);
      export_csv(r, csv);
      report = to_json(r);
    } else {
      fail(ErrorKind::InvalidConfig, "--which must be sweep, trend, ablation or prefix-eval");
    }
  }
  emit(ctx, Json{{"event", "analysis"}, {"which", args.which}, {"csv", csv.string()}, {"report", report}});
  return 0;
}

int cmd_make_fixture(Context& ctx, const Common& common) {
  if (common.out.empty()) fail(ErrorKind::InvalidConfig, "make-fixture needs --out");
  const fs::path dir = fs::absolute(common.out).lexically_normal();
  FixtureSpec spec;
  if (common.seed) spec.seed = *common.seed;
  Fixture fx = make_fixture(spec);
  write_fixture(fx, dir);
  Json config{{"prompts", "prompts.json"},
              {"responses", "responses.json"},
              {"oracle", Json{{"kind", "target_match"}, {"path", "oracle.json"}, {"r_max", 10.0},
                              {"sharpness", spec.sharpness}}},
              {"pretrained", "pretrained.snapshot"},
              {"sft_data", "sft.jsonl"},
              {"offline_pairs", "offline.jsonl"},
              {"backend", Json{{"kind", "exact"}}},
              {"train", to_json(standard_train_config())},
              {"output_dir", "run"}};
  write_text_atomic(dir / "config.json", config.dump(2) + "\n");
  ctx.log->info("fixture with {} prompts and {} responses written to {}", fx.prompts.size(), fx.space.size(),
                dir.string());
  emit(ctx, Json{{"event", "fixture"}, {"dir", dir.string()}, {"config", (dir / "config.json").string()}});
  return 0;
}

void add_common(CLI::App* sub, Common& common, bool with_backend) {
  sub->add_option("--config", common.config_path, "Path to the JSON config file");
  sub->add_option("--seed", common.seed, "Master seed (overrides train.seed)");
  sub->add_option("--out", common.out, "Run directory (default: <output_dir>/<timestamp>-<seed>)");
  if (with_backend) {
    sub->add_option("--backend", common.backend, "Generation backend")->check(CLI::IsMember({"exact", "http"}));
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  auto log = stream_logger(err);
  Context ctx{out, log};

  CLI::App app{"Score-prefixed self-rewarding preference optimization on enumerable policies", "srlab"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  Common common;
  int iteration = 0;
  bool resume = false;
  std::optional<int> stop_after;
  AnalyzeArgs analyze;

  CLI::App* init = app.add_subcommand("init", "SFT then offline preference training; writes init/policy.snapshot");
  add_common(init, common, false);
  CLI::App* generate = app.add_subcommand("generate", "Generate one iteration's preference dataset");
  add_common(generate, common, true);
  generate->add_option("--iteration", iteration, "Iteration index (1-based)")->required();
  CLI::App* run_cmd = app.add_subcommand("run", "Full pipeline: init then every iteration");
  add_common(run_cmd, common, true);
  run_cmd->add_flag("--resume", resume, "Continue the run in --out from its last completed stage");
  run_cmd->add_option("--stop-after", stop_after, "Stop after this many iterations")->group("");
  CLI::App* analyze_cmd = app.add_subcommand("analyze", "Analysis experiments exported as CSV");
  add_common(analyze_cmd, common, false);
  analyze_cmd->add_option("--which", analyze.which, "sweep | trend | ablation | prefix-eval")
      ->required()
      ->check(CLI::IsMember({"sweep", "trend", "ablation", "prefix-eval"}));
  analyze_cmd->add_option("--manifest", analyze.manifest, "Run manifest (sweep, trend, prefix-eval)");
  analyze_cmd->add_option("--csv", analyze.csv, "Output CSV path (default: next to the manifest)");
  analyze_cmd->add_option("--control-config", analyze.control_config, "Control-arm config (ablation)");
  CLI::App* fixture = app.add_subcommand("make-fixture", "Write the standard toy fixture and a config for it");
  add_common(fixture, common, false);

  std::vector<const char*> argv{"srlab"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    err << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    err << kToolVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (app.get_subcommands().empty()) err << app.help();
    return 2;
  }

  try {
    if (*init) return cmd_init(ctx, common);
    if (*generate) return cmd_generate(ctx, common, iteration);
    if (*run_cmd) return cmd_run(ctx, common, resume, stop_after);
    if (*analyze_cmd) return cmd_analyze(ctx, common, analyze);
    if (*fixture) return cmd_make_fixture(ctx, common);
  } catch (const Error& e) {
    log->error("{}: {}", to_string(e.kind()), e.what());
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    log->error("io: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    log->error("internal: {}", e.what());
    return 4;
  }
  return 2;
}

}  // namespace srlab
