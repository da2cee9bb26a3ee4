#include "srlab/datagen.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <mutex>
#include <sstream>
#include <thread>

#include "srlab/io.hpp"
#include "srlab/logging.hpp"

namespace srlab {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Templates

namespace {

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

void replace_once(std::string& text, std::string_view needle, std::string_view value) {
  const auto pos = text.find(needle);
  if (pos != std::string::npos) text.replace(pos, needle.size(), value);
}

}  // namespace

void validate_template(const PrefixTemplate& t) {
  if (count_occurrences(t.chosen_template, kPromptPlaceholder) != 1) {
    fail(ErrorKind::PlaceholderMissing, "chosen template must contain [prompt] exactly once");
  }
  if (count_occurrences(t.rejected_template, kPromptPlaceholder) != 1) {
    fail(ErrorKind::PlaceholderMissing, "rejected template must contain [prompt] exactly once");
  }
  if (count_occurrences(t.rejected_template, kScorePlaceholder) != 1) {
    fail(ErrorKind::PlaceholderMissing, "rejected template must contain [rejected score] exactly once");
  }
}

std::string render_prefix(const PrefixTemplate& t, Side side, int score, const Prompt& prompt) {
  validate_template(t);
  if (side == Side::Chosen) {
    std::string out = t.chosen_template;
    replace_once(out, kPromptPlaceholder, prompt.text);
    return out;
  }
  if (score < 1 || score > 9) {
    fail(ErrorKind::ScoreOutOfRange, "rejected prefix score " + std::to_string(score) + " outside [1, 9]");
  }
  std::string out = t.rejected_template;
  // score first: the prompt text may itself contain placeholder-like strings
  replace_once(out, kScorePlaceholder, std::to_string(score));
  const auto pos = out.rfind(kPromptPlaceholder);
  out.replace(pos, kPromptPlaceholder.size(), prompt.text);
  return out;
}

// ---------------------------------------------------------------------------
// Cleaning

namespace {

// Preambles only ever sit at the head of a response; bounding the window keeps
// std::regex's recursive matcher away from long bodies.
constexpr std::size_t kStripWindow = 512;

std::regex compile_rule(const std::string& id, const std::string& pattern) {
  try {
    return std::regex(pattern, std::regex::ECMAScript | std::regex::icase);
  } catch (const std::regex_error& e) {
    fail(ErrorKind::ParseError, "cleaning rule '" + id + "' does not compile: " + e.what());
  }
}

}  // namespace

void CleaningRuleSet::add(std::string id, std::string pattern, CleaningRule::Action action) {
  CleaningRule rule;
  rule.compiled = compile_rule(id, pattern);
  rule.id = std::move(id);
  rule.pattern = std::move(pattern);
  rule.action = action;
  rules_.push_back(std::move(rule));
}

CleaningRuleSet CleaningRuleSet::from_json(const Json& j) {
  try {
    if (!j.is_array()) fail(ErrorKind::ParseError, "cleaning rules must be a JSON array");
    CleaningRuleSet set;
    for (const auto& item : j) {
      const auto action = item.at("action").get<std::string>();
      CleaningRule::Action a;
      if (action == "strip") a = CleaningRule::Action::Strip;
      else if (action == "reject") a = CleaningRule::Action::Reject;
      else fail(ErrorKind::ParseError, "unknown cleaning action '" + action + "'");
      set.add(item.at("id").get<std::string>(), item.at("pattern").get<std::string>(), a);
    }
    return set;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, std::string("malformed cleaning rules: ") + e.what());
  }
}

CleaningRuleSet CleaningRuleSet::load(const fs::path& path) {
  try {
    return from_json(Json::parse(read_text_file(path)));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
}

CleaningRuleSet CleaningRuleSet::defaults() {
  CleaningRuleSet set;
  // "Okay, here is a 10-score answer:" and relatives
  set.add("ack_here_is",
          R"(^\s*(?:(?:okay|ok|sure|certainly|alright|of course)[,!.]?\s+)?here(?:'s| is) (?:a|an|my|the)\b[^\n.:!]*?\b(?:(?:\d{1,2}|ten)(?:-| )?(?:score|point)|(?:\d{1,2}|ten) out of (?:10|ten))[^\n.:!]*(?:[.:!]|\n)\s*)",
          CleaningRule::Action::Strip);
  // "The 10-score answer is as follows."
  set.add("score_answer_follows",
          R"(^\s*(?:(?:okay|ok|sure|certainly|alright|of course)[,!.]?\s+)?(?:the|my|this is (?:a|an|the|my)) (?:\d{1,2}|ten)(?:-| )?(?:score|point) (?:answer|response)\b[^\n.:!]*(?:[.:!]|\n)\s*)",
          CleaningRule::Action::Strip);
  set.add("preamble_only", R"(^\s*$)", CleaningRule::Action::Reject);
  set.add("meta_score_mention", R"(\b(?:\d{1,2}|ten)-(?:score|point) (?:answer|response)\b)",
          CleaningRule::Action::Reject);
  return set;
}

Json CleaningRuleSet::to_json() const {
  Json j = Json::array();
  for (const auto& r : rules_) {
    Json item;
    item["id"] = r.id;
    item["pattern"] = r.pattern;
    item["action"] = r.action == CleaningRule::Action::Strip ? "strip" : "reject";
    j.push_back(std::move(item));
  }
  return j;
}

CleanResult clean_response(const CleaningRuleSet& rules, std::string_view raw) {
  std::string text(raw);
  bool stripped = true;
  while (stripped) {
    stripped = false;
    for (const auto& rule : rules.rules()) {
      if (rule.action != CleaningRule::Action::Strip) continue;
      const std::string head = text.substr(0, kStripWindow);
      std::smatch m;
      if (std::regex_search(head, m, rule.compiled, std::regex_constants::match_continuous) && m.length(0) > 0) {
        text.erase(0, static_cast<std::size_t>(m.length(0)));
        stripped = true;
      }
    }
  }
  for (const auto& rule : rules.rules()) {
    if (rule.action != CleaningRule::Action::Reject) continue;
    if (std::regex_search(text, rule.compiled)) return CleanResult{true, {}, rule.id};
  }
  return CleanResult{false, std::move(text), {}};
}

// ---------------------------------------------------------------------------
// Exact backend

ExactBackend::ExactBackend(const PromptSet& prompts, ResponseSpace space, const TabularPolicy& reference,
                           const RewardMatrix& rewards, double gamma, double alpha)
    : prompts_(prompts), space_(std::move(space)), reference_(reference), rewards_(rewards), gamma_(gamma),
      alpha_(alpha) {
  if (reference_.prompts() != prompts.size() || reference_.responses() != space_.size()) {
    fail(ErrorKind::InvalidArgument, "reference policy does not match prompts x responses");
  }
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    if (reference_.prompt_ids()[p] != prompts[p].id) {
      fail(ErrorKind::InvalidArgument, "reference policy prompt order differs from the prompt set");
    }
  }
  set_score_map(score_map_);
}

void ExactBackend::set_score_map(const std::array<double, 10>& map) {
  score_map_ = map;
  by_score_.clear();
  for (int s = 1; s <= 10; ++s) {
    by_score_.push_back(conditional_distribution(ConditionalPolicy{&reference_, reward_for_score(s), gamma_, alpha_},
                                                 rewards_));
  }
}

double ExactBackend::reward_for_score(int score) const {
  if (score < 1 || score > 10) fail(ErrorKind::ScoreOutOfRange, "prefix score outside [1, 10]");
  return score_map_[static_cast<std::size_t>(score - 1)];
}

const Distribution& ExactBackend::conditional(int score) const {
  if (score < 1 || score > 10) fail(ErrorKind::ScoreOutOfRange, "prefix score outside [1, 10]");
  return by_score_[static_cast<std::size_t>(score - 1)];
}

std::string ExactBackend::generate(const Prompt& prompt, int score, Rng& rng) const {
  const std::size_t p = prompts_.index_of(prompt.id);
  return space_[sample(conditional(score), p, rng)];
}

// ---------------------------------------------------------------------------
// HTTP backend

namespace {

std::string excerpt(const std::string& body, std::size_t n = 200) {
  return body.size() <= n ? body : body.substr(0, n) + "...";
}

}  // namespace

HttpBackend::HttpBackend(HttpBackendConfig config, PrefixTemplate templates, std::shared_ptr<spdlog::logger> log)
    : config_(std::move(config)), templates_(std::move(templates)), log_(log ? std::move(log) : null_logger()),
      sleeper_([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {
  validate_template(templates_);
  if (config_.endpoint.empty()) fail(ErrorKind::InvalidConfig, "http backend needs an endpoint");
  if (config_.model.empty()) fail(ErrorKind::InvalidConfig, "http backend needs a model name");
  if (config_.max_concurrency == 0) config_.max_concurrency = 1;
  if (config_.max_retries < 0) fail(ErrorKind::InvalidConfig, "max_retries must be >= 0");

  const auto scheme_end = config_.endpoint.find("://");
  if (scheme_end == std::string::npos) {
    fail(ErrorKind::InvalidConfig, "endpoint must start with http:// or https://");
  }
  const auto path_start = config_.endpoint.find('/', scheme_end + 3);
  scheme_host_port_ = config_.endpoint.substr(0, path_start);
  std::string base = path_start == std::string::npos ? std::string{} : config_.endpoint.substr(path_start);
  while (!base.empty() && base.back() == '/') base.pop_back();
  path_ = base + "/chat/completions";

  if (!config_.auth_env.empty()) {
    const char* value = std::getenv(config_.auth_env.c_str());
    if (value == nullptr || *value == '\0') {
      fail(ErrorKind::Backend, "environment variable " + config_.auth_env + " is not set");
    }
    token_ = value;
  }
}

std::string HttpBackend::redact(std::string text) const {
  if (token_.empty()) return text;
  for (auto pos = text.find(token_); pos != std::string::npos; pos = text.find(token_, pos)) {
    text.replace(pos, token_.size(), "[redacted]");
  }
  return text;
}

std::string HttpBackend::generate(const Prompt& prompt, int score, Rng& /*rng*/) const {
  if (score < 1 || score > 10) fail(ErrorKind::ScoreOutOfRange, "prefix score outside [1, 10]");
  const Side side = score == kChosenScore ? Side::Chosen : Side::Rejected;
  return complete(render_prefix(templates_, side, score, prompt));
}

std::string HttpBackend::complete(const std::string& user_message) const {
  Json body;
  body["model"] = config_.model;
  Json message;
  message["role"] = "user";
  message["content"] = user_message;
  body["messages"] = Json::array({message});
  body["temperature"] = config_.temperature;
  body["max_tokens"] = config_.max_tokens;
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

  std::string last_error;
  ErrorKind last_kind = ErrorKind::Http;
  for (int attempt = 0;; ++attempt) {
    httplib::Client client(scheme_host_port_);
    const auto timeout = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout).count();
    client.set_connection_timeout(static_cast<time_t>(timeout), 0);
    client.set_read_timeout(static_cast<time_t>(timeout), 0);
    client.set_write_timeout(static_cast<time_t>(timeout), 0);

    auto res = client.Post(path_, headers, payload, "application/json");
    bool retryable = false;
    if (!res) {
      const auto err = res.error();
      last_kind = (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout) ? ErrorKind::Timeout
                                                                                           : ErrorKind::Http;
      last_error = "request to " + scheme_host_port_ + path_ + " failed: " + httplib::to_string(err);
      retryable = true;
    } else if (res->status == 200) {
      try {
        const Json reply = Json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Http, redact("malformed chat-completions reply: " + std::string(e.what())));
      }
    } else {
      last_kind = ErrorKind::Http;
      last_error = "HTTP " + std::to_string(res->status) + ": " + excerpt(res->body);
      retryable = res->status == 429 || res->status >= 500;
    }

    last_error = redact(last_error);
    if (!retryable || attempt >= config_.max_retries) {
      if (retryable) last_error += " (gave up after " + std::to_string(attempt) + " retries)";
      fail(last_kind, last_error);
    }
    const auto delay = config_.backoff_initial * (std::int64_t{1} << attempt);
    log_->warn("{}; retry {}/{} in {} ms", last_error, attempt + 1, config_.max_retries, delay.count());
    sleeper_(delay);
  }
}

// ---------------------------------------------------------------------------
// Pairs and datasets

PairOutcome generate_pair(const GenerationBackend& backend, const CleaningRuleSet& rules, const Prompt& prompt,
                          int rejected_score, int iteration, std::uint64_t seed) {
  if (rejected_score < 1 || rejected_score > 9) {
    fail(ErrorKind::ScoreOutOfRange, "rejected score " + std::to_string(rejected_score) + " outside [1, 9]");
  }
  Rng chosen_rng(derive_seed(seed, "chosen"));
  Rng rejected_rng(derive_seed(seed, "rejected"));
  const std::string chosen_raw = backend.generate(prompt, kChosenScore, chosen_rng);
  const std::string rejected_raw = backend.generate(prompt, rejected_score, rejected_rng);

  const CleanResult chosen = clean_response(rules, chosen_raw);
  const CleanResult rejected = clean_response(rules, rejected_raw);
  if (chosen.rejected || rejected.rejected) return PairOutcome{std::nullopt, "cleaning"};
  if (chosen.text == rejected.text) return PairOutcome{std::nullopt, "duplicate"};

  PreferencePair pair;
  pair.prompt_id = prompt.id;
  pair.prompt = prompt.text;
  pair.chosen = chosen.text;
  pair.rejected = rejected.text;
  pair.chosen_score = kChosenScore;
  pair.rejected_score = rejected_score;
  pair.iteration = iteration;
  return PairOutcome{std::move(pair), {}};
}

DatasetResult build_dataset(const GenerationBackend& backend, const CleaningRuleSet& rules, const PromptSet& prompts,
                            const ScoreSchedule& schedule, int iteration, std::uint64_t seed,
                            const fs::path& out_path) {
  if (iteration < 1 || static_cast<std::size_t>(iteration) > schedule.rejected_scores.size()) {
    fail(ErrorKind::InvalidArgument, "iteration " + std::to_string(iteration) + " outside the schedule");
  }
  const int rejected_score = schedule.rejected_scores[static_cast<std::size_t>(iteration - 1)];
  const std::vector<std::size_t> order = prompts.sorted_by_id();

  struct Slot {
    PairOutcome outcome;
    bool failed = false;
    ErrorKind kind = ErrorKind::Internal;
    std::string error;
  };
  std::vector<Slot> slots(order.size());
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (std::size_t i = next.fetch_add(1); i < order.size(); i = next.fetch_add(1)) {
      const Prompt& prompt = prompts[order[i]];
      Slot& slot = slots[i];
      try {
        slot.outcome = generate_pair(backend, rules, prompt, rejected_score, iteration, derive_seed(seed, prompt.id));
      } catch (const Error& e) {
        slot.failed = true;
        slot.kind = e.kind();
        slot.error = e.what();
      } catch (const std::exception& e) {
        slot.failed = true;
        slot.error = e.what();
      }
    }
  };

  const std::size_t workers = std::min(backend.max_concurrency(), order.size());
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  std::size_t failures = 0;
  std::string message;
  ErrorKind kind = ErrorKind::Backend;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i].failed) continue;
    if (failures == 0) kind = slots[i].kind;
    if (failures < 10) message += "\n  prompt '" + prompts[order[i]].id + "': " + slots[i].error;
    ++failures;
  }
  if (failures > 0) {
    fail(kind, std::to_string(failures) + " of " + std::to_string(slots.size()) +
                   " prompts failed during generation:" + message);
  }

  DatasetResult result;
  for (auto& slot : slots) {
    if (slot.outcome.pair) {
      result.pairs.push_back(std::move(*slot.outcome.pair));
    } else {
      ++result.summary.skipped[slot.outcome.skip_reason];
    }
  }
  result.summary.pairs_written = result.pairs.size();
  write_pairs_jsonl(out_path, result.pairs);
  return result;
}

std::vector<std::pair<std::string, std::string>> read_sft_jsonl(const fs::path& path) {
  const std::string text = read_text_file(path);
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      out.emplace_back(j.at("prompt_id").get<std::string>(), j.at("response").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::ParseError, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_sft_jsonl(const fs::path& path, std::span<const std::pair<std::string, std::string>> data) {
  std::string out;
  for (const auto& [pid, response] : data) {
    Json j;
    j["prompt_id"] = pid;
    j["response"] = response;
    out += j.dump() + "\n";
  }
  write_text_atomic(path, out);
}

}  // namespace srlab
