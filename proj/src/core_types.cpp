#include "srlab/core_types.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "srlab/io.hpp"

namespace srlab {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PromptSet / ResponseSpace

PromptSet::PromptSet(std::vector<Prompt> prompts) : prompts_(std::move(prompts)) {
  index_.reserve(prompts_.size());
  for (std::size_t i = 0; i < prompts_.size(); ++i) {
    const Prompt& p = prompts_[i];
    if (p.text.empty()) fail(ErrorKind::InvalidArgument, "prompt '" + p.id + "' has empty text");
    if (!index_.emplace(p.id, i).second) {
      fail(ErrorKind::InvalidArgument, "duplicate prompt id '" + p.id + "'");
    }
  }
}

const Prompt& PromptSet::at(std::size_t i) const {
  if (i >= prompts_.size()) fail(ErrorKind::IndexOutOfRange, "prompt index " + std::to_string(i) + " out of range");
  return prompts_[i];
}

std::optional<std::size_t> PromptSet::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t PromptSet::index_of(std::string_view id) const {
  if (auto i = find(id)) return *i;
  fail(ErrorKind::UnknownPrompt, "unknown prompt id '" + std::string(id) + "'");
}

std::vector<std::size_t> PromptSet::sorted_by_id() const {
  std::vector<std::size_t> order(prompts_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return prompts_[a].id < prompts_[b].id; });
  return order;
}

ResponseSpace::ResponseSpace(std::vector<std::string> responses, std::size_t cap)
    : responses_(std::move(responses)) {
  if (responses_.empty()) fail(ErrorKind::InvalidArgument, "response space is empty");
  if (responses_.size() > cap) {
    fail(ErrorKind::InvalidArgument, "response space has " + std::to_string(responses_.size()) +
                                         " entries, cap is " + std::to_string(cap));
  }
  index_.reserve(responses_.size());
  for (std::size_t i = 0; i < responses_.size(); ++i) {
    if (!index_.emplace(responses_[i], i).second) {
      fail(ErrorKind::InvalidArgument, "duplicate response '" + responses_[i] + "'");
    }
  }
}

const std::string& ResponseSpace::at(std::size_t i) const {
  if (i >= responses_.size()) fail(ErrorKind::IndexOutOfRange, "response index " + std::to_string(i) + " out of range");
  return responses_[i];
}

std::optional<std::size_t> ResponseSpace::find(std::string_view response) const {
  auto it = index_.find(std::string(response));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ResponseSpace::index_of(std::string_view response) const {
  if (auto i = find(response)) return *i;
  fail(ErrorKind::UnknownResponse, "response not in space: '" + std::string(response) + "'");
}

// ---------------------------------------------------------------------------
// PreferencePair

void check_pair(const PreferencePair& pair) {
  auto bad = [&](const std::string& why) {
    fail(ErrorKind::InvalidArgument, "invalid pair for prompt '" + pair.prompt_id + "': " + why);
  };
  if (pair.chosen_score < 1 || pair.chosen_score > 10) bad("chosen_score outside 1..10");
  if (pair.rejected_score < 1 || pair.rejected_score > 10) bad("rejected_score outside 1..10");
  if (pair.chosen_score <= pair.rejected_score) bad("chosen_score must exceed rejected_score");
  if (pair.iteration < 0) bad("negative iteration");
}

std::string to_jsonl_line(const PreferencePair& pair) {
  Json j;
  j["prompt_id"] = pair.prompt_id;
  j["prompt"] = pair.prompt;
  j["chosen"] = pair.chosen;
  j["rejected"] = pair.rejected;
  j["chosen_score"] = pair.chosen_score;
  j["rejected_score"] = pair.rejected_score;
  j["iteration"] = pair.iteration;
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict);
}

PreferencePair pair_from_json(const Json& j) {
  try {
    PreferencePair p;
    p.prompt_id = j.at("prompt_id").get<std::string>();
    p.prompt = j.at("prompt").get<std::string>();
    p.chosen = j.at("chosen").get<std::string>();
    p.rejected = j.at("rejected").get<std::string>();
    p.chosen_score = j.at("chosen_score").get<int>();
    p.rejected_score = j.at("rejected_score").get<int>();
    p.iteration = j.at("iteration").get<int>();
    if (j.size() != 7) fail(ErrorKind::ParseError, "preference pair has unexpected keys");
    check_pair(p);
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, std::string("malformed preference pair: ") + e.what());
  }
}

std::vector<PreferencePair> read_pairs_jsonl(const fs::path& path) {
  const std::string text = read_text_file(path);
  std::vector<PreferencePair> pairs;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      pairs.push_back(pair_from_json(Json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::ParseError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      fail(e.kind(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return pairs;
}

void write_pairs_jsonl(const fs::path& path, std::span<const PreferencePair> pairs) {
  std::string out;
  for (const auto& p : pairs) {
    check_pair(p);
    out += to_jsonl_line(p);
    out += '\n';
  }
  write_text_atomic(path, out);
}

// ---------------------------------------------------------------------------
// ScoreSchedule

ScoreSchedule default_schedule() { return ScoreSchedule{{3, 5, 7}, kChosenScore}; }

ScoreSchedule validate_schedule(ScoreSchedule schedule, int iterations) {
  if (iterations < 1) fail(ErrorKind::InvalidArgument, "iterations must be >= 1");
  if (schedule.rejected_scores.size() != static_cast<std::size_t>(iterations)) {
    fail(ErrorKind::LengthMismatch, "schedule has " + std::to_string(schedule.rejected_scores.size()) +
                                        " entries for " + std::to_string(iterations) + " iterations");
  }
  for (int s : schedule.rejected_scores) {
    if (s < 1 || s > 9 || s >= schedule.chosen_score) {
      fail(ErrorKind::ScoreOutOfRange, "rejected score " + std::to_string(s) + " outside [1, 9]");
    }
  }
  for (std::size_t i = 1; i < schedule.rejected_scores.size(); ++i) {
    if (schedule.rejected_scores[i] < schedule.rejected_scores[i - 1]) {
      fail(ErrorKind::NonMonotone, "schedule decreases at iteration " + std::to_string(i + 1));
    }
  }
  return schedule;
}

Json to_json(const ScoreSchedule& s) {
  Json j;
  j["rejected_scores"] = s.rejected_scores;
  j["chosen_score"] = s.chosen_score;
  return j;
}

ScoreSchedule schedule_from_json(const Json& j) {
  ScoreSchedule s;
  s.rejected_scores = j.at("rejected_scores").get<std::vector<int>>();
  s.chosen_score = j.value("chosen_score", kChosenScore);
  return s;
}

// ---------------------------------------------------------------------------
// Prompts / responses files

Json to_json(const Prompt& p) {
  Json j;
  j["id"] = p.id;
  j["text"] = p.text;
  return j;
}

Prompt prompt_from_json(const Json& j) {
  return Prompt{j.at("id").get<std::string>(), j.at("text").get<std::string>()};
}

PromptSet load_prompts(const fs::path& path) {
  try {
    const Json j = Json::parse(read_text_file(path));
    if (!j.is_array()) fail(ErrorKind::ParseError, path.string() + ": expected a JSON array of prompts");
    std::vector<Prompt> prompts;
    for (const auto& item : j) prompts.push_back(prompt_from_json(item));
    return PromptSet(std::move(prompts));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

void save_prompts(const fs::path& path, const PromptSet& prompts) {
  Json j = Json::array();
  for (const auto& p : prompts) j.push_back(to_json(p));
  write_text_atomic(path, j.dump(2) + "\n");
}

ResponseSpace load_responses(const fs::path& path, std::size_t cap) {
  try {
    const Json j = Json::parse(read_text_file(path));
    return ResponseSpace(j.get<std::vector<std::string>>(), cap);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

void save_responses(const fs::path& path, const ResponseSpace& space) {
  Json j = Json::array();
  for (const auto& r : space.items()) j.push_back(r);
  write_text_atomic(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Manifest pieces

std::size_t DatasetSummary::skipped_total() const {
  std::size_t n = 0;
  for (const auto& [reason, count] : skipped) n += count;
  return n;
}

Json to_json(const DatasetSummary& s) {
  Json j;
  j["pairs_written"] = s.pairs_written;
  Json skipped = Json::object();
  for (const auto& [reason, count] : s.skipped) skipped[reason] = count;
  j["skipped"] = std::move(skipped);
  return j;
}

DatasetSummary summary_from_json(const Json& j) {
  DatasetSummary s;
  s.pairs_written = j.at("pairs_written").get<std::size_t>();
  for (const auto& [reason, count] : j.at("skipped").items()) s.skipped[reason] = count.get<std::size_t>();
  return s;
}

namespace {

Json to_json(const IterationMetrics& m) {
  Json j;
  j["mean_chosen_reward"] = m.mean_chosen_reward;
  j["mean_rejected_reward"] = m.mean_rejected_reward;
  j["gap"] = m.gap;
  j["policy_expected_reward"] = m.policy_expected_reward;
  j["greedy_reward"] = m.greedy_reward;
  j["dpo_loss_final"] = m.dpo_loss_final;
  return j;
}

IterationMetrics metrics_from_json(const Json& j) {
  IterationMetrics m;
  m.mean_chosen_reward = j.at("mean_chosen_reward").get<double>();
  m.mean_rejected_reward = j.at("mean_rejected_reward").get<double>();
  m.gap = j.at("gap").get<double>();
  m.policy_expected_reward = j.at("policy_expected_reward").get<double>();
  m.greedy_reward = j.at("greedy_reward").get<double>();
  m.dpo_loss_final = j.at("dpo_loss_final").get<double>();
  return m;
}

}  // namespace

Json to_json(const IterationRecord& r) {
  Json j;
  j["iteration"] = r.iteration;
  j["rejected_score"] = r.rejected_score;
  j["dataset_path"] = r.dataset_path;
  j["dataset"] = to_json(r.dataset);
  j["loss_initial"] = r.loss_initial;
  j["loss_final"] = r.loss_final;
  j["loss_trace"] = r.loss_trace;
  j["snapshot_path"] = r.snapshot_path;
  j["snapshot_hash"] = r.snapshot_hash;
  j["metrics"] = to_json(r.metrics);
  return j;
}

IterationRecord iteration_record_from_json(const Json& j) {
  IterationRecord r;
  r.iteration = j.at("iteration").get<int>();
  r.rejected_score = j.at("rejected_score").get<int>();
  r.dataset_path = j.at("dataset_path").get<std::string>();
  r.dataset = summary_from_json(j.at("dataset"));
  r.loss_initial = j.at("loss_initial").get<double>();
  r.loss_final = j.at("loss_final").get<double>();
  r.loss_trace = j.at("loss_trace").get<std::vector<double>>();
  r.snapshot_path = j.at("snapshot_path").get<std::string>();
  r.snapshot_hash = j.at("snapshot_hash").get<std::string>();
  r.metrics = metrics_from_json(j.at("metrics"));
  return r;
}

Json to_json(const InitRecord& r) {
  Json j;
  j["snapshot_path"] = r.snapshot_path;
  j["snapshot_hash"] = r.snapshot_hash;
  j["sft_steps"] = r.sft_steps;
  j["sft_loss_trace"] = r.sft_loss_trace;
  j["offline_pairs"] = r.offline_pairs;
  j["pref_loss_initial"] = r.pref_loss_initial;
  j["pref_loss_final"] = r.pref_loss_final;
  j["greedy_reward"] = r.greedy_reward;
  j["policy_expected_reward"] = r.policy_expected_reward;
  return j;
}

InitRecord init_record_from_json(const Json& j) {
  InitRecord r;
  r.snapshot_path = j.at("snapshot_path").get<std::string>();
  r.snapshot_hash = j.at("snapshot_hash").get<std::string>();
  r.sft_steps = j.at("sft_steps").get<int>();
  r.sft_loss_trace = j.at("sft_loss_trace").get<std::vector<double>>();
  r.offline_pairs = j.at("offline_pairs").get<std::size_t>();
  r.pref_loss_initial = j.at("pref_loss_initial").get<double>();
  r.pref_loss_final = j.at("pref_loss_final").get<double>();
  r.greedy_reward = j.at("greedy_reward").get<double>();
  r.policy_expected_reward = j.at("policy_expected_reward").get<double>();
  return r;
}

Json to_json(const RunManifest& m) {
  Json j;
  j["tool_version"] = m.tool_version;
  j["master_seed"] = m.master_seed;
  j["config"] = m.config;
  j["init"] = m.init ? to_json(*m.init) : Json(nullptr);
  Json iters = Json::array();
  for (const auto& r : m.iterations) iters.push_back(to_json(r));
  j["iterations"] = std::move(iters);
  j["status"] = m.status;
  j["error"] = m.error;
  return j;
}

RunManifest manifest_from_json(const Json& j) {
  try {
    RunManifest m;
    m.tool_version = j.at("tool_version").get<std::string>();
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    m.config = j.at("config");
    if (!j.at("init").is_null()) m.init = init_record_from_json(j.at("init"));
    for (const auto& r : j.at("iterations")) m.iterations.push_back(iteration_record_from_json(r));
    m.status = j.at("status").get<std::string>();
    m.error = j.value("error", std::string{});
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, std::string("malformed manifest: ") + e.what());
  }
}

void save_manifest(const fs::path& path, const RunManifest& m) {
  write_text_atomic(path, to_json(m).dump(2) + "\n");
}

RunManifest load_manifest(const fs::path& path) {
  try {
    return manifest_from_json(Json::parse(read_text_file(path)));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

}  // namespace srlab
