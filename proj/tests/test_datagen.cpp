#include <gtest/gtest.h>

#include <cstdlib>
#include <map>
#include <sstream>

#include "cleaning_corpus.hpp"
#include "instances.hpp"
#include "srlab/datagen.hpp"
#include "srlab/logging.hpp"
#include "support.hpp"

using namespace srlab;
using testing_support::ChatStub;
using testing_support::TempDir;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Internal;
}

// Backend returning fixed strings per score, for pair-level tests.
class ScriptedBackend final : public GenerationBackend {
 public:
  explicit ScriptedBackend(std::map<int, std::string> replies) : replies_(std::move(replies)) {}
  std::string_view kind() const noexcept override { return "scripted"; }
  std::string generate(const Prompt& prompt, int score, Rng&) const override {
    return replies_.at(score) + " " + prompt.id;
  }

 private:
  std::map<int, std::string> replies_;
};

struct SmallWorld {
  PromptSet prompts;
  ResponseSpace space;
  TabularPolicy reference;
  RewardMatrix rewards;

  SmallWorld() {
    std::vector<Prompt> ps;
    for (int i = 0; i < 12; ++i) ps.push_back({"p" + std::to_string(100 - i), "prompt " + std::to_string(i)});
    prompts = PromptSet(ps);
    std::vector<std::string> rs;
    for (int i = 0; i < 10; ++i) rs.push_back("resp " + std::to_string(i));
    space = ResponseSpace(rs);
    Rng rng(42);
    std::vector<std::string> ids;
    for (const auto& p : prompts) ids.push_back(p.id);
    std::vector<double> logits(12 * 10);
    for (double& v : logits) v = rng.uniform(-1, 1);
    reference = TabularPolicy(ids, 10, logits);
    rewards = instances::random_rewards(rng, 12, 10);
  }
};

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) { setenv(name, value, 1); }
  ~ScopedEnv() { unsetenv(name_); }

 private:
  const char* name_;
};

}  // namespace

TEST(TemplateTest, RendersBothSides) {
  PrefixTemplate t;
  const Prompt p{"p", "Name a colour."};
  EXPECT_EQ(render_prefix(t, Side::Chosen, 0, p),
            "Please produce a top-notch response that merits a perfect score of 10 out of 10. Name a colour.");
  EXPECT_EQ(render_prefix(t, Side::Rejected, 3, p),
            "Please produce a good response that merits a perfect score of 3 out of 10. Name a colour.");
  EXPECT_EQ(kind_of([&] { render_prefix(t, Side::Rejected, 10, p); }), ErrorKind::ScoreOutOfRange);
  EXPECT_EQ(kind_of([&] { render_prefix(t, Side::Rejected, 0, p); }), ErrorKind::ScoreOutOfRange);
}

TEST(TemplateTest, PromptTextIsNotReinterpreted) {
  PrefixTemplate t;
  const Prompt p{"p", "What does [rejected score] mean?"};
  EXPECT_EQ(render_prefix(t, Side::Rejected, 5, p),
            "Please produce a good response that merits a perfect score of 5 out of 10. What does [rejected score] "
            "mean?");
}

TEST(TemplateTest, PlaceholdersRequiredExactlyOnce) {
  PrefixTemplate t;
  t.rejected_template = "score [rejected score] only";
  EXPECT_EQ(kind_of([&] { validate_template(t); }), ErrorKind::PlaceholderMissing);
  t = PrefixTemplate{};
  t.chosen_template = "[prompt] and [prompt]";
  EXPECT_EQ(kind_of([&] { validate_template(t); }), ErrorKind::PlaceholderMissing);
  t = PrefixTemplate{};
  t.rejected_template = "[prompt] without a score";
  EXPECT_EQ(kind_of([&] { validate_template(t); }), ErrorKind::PlaceholderMissing);
}

TEST(CleaningTest, CorpusPreamblesStripped) {
  const auto rules = CleaningRuleSet::defaults();
  for (const auto& c : cleaning_corpus::cases()) {
    const CleanResult r = clean_response(rules, c.raw);
    ASSERT_FALSE(r.rejected) << c.raw;
    EXPECT_EQ(r.text, c.expected) << c.raw;
  }
}

TEST(CleaningTest, PlainTextUntouchedAndMetaRejected) {
  const auto rules = CleaningRuleSet::defaults();
  EXPECT_EQ(clean_response(rules, "Here is what I think: yes.").text, "Here is what I think: yes.");
  EXPECT_EQ(clean_response(rules, "a b c").text, "a b c");
  EXPECT_TRUE(clean_response(rules, "Okay, here is a 10-score answer:").rejected);
  const CleanResult meta = clean_response(rules, "Text, then this 10-score answer appears.");
  EXPECT_TRUE(meta.rejected);
  EXPECT_EQ(meta.rule_id, "meta_score_mention");
}

TEST(CleaningTest, IdempotentOnFuzz) {
  const auto rules = CleaningRuleSet::defaults();
  Rng rng(99);
  for (int i = 0; i < 2000; ++i) {
    const std::string s = cleaning_corpus::fuzz_string(rng);
    const CleanResult once = clean_response(rules, s);
    if (once.rejected) continue;
    const CleanResult twice = clean_response(rules, once.text);
    ASSERT_FALSE(twice.rejected) << s;
    ASSERT_EQ(twice.text, once.text) << s;
  }
}

TEST(CleaningTest, JsonRoundTripAndBadPattern) {
  const auto rules = CleaningRuleSet::defaults();
  const auto back = CleaningRuleSet::from_json(rules.to_json());
  ASSERT_EQ(back.rules().size(), rules.rules().size());
  EXPECT_EQ(back.to_json(), rules.to_json());
  const Json bad = Json::parse(R"([{"id":"x","pattern":"(unclosed","action":"strip"}])");
  EXPECT_EQ(kind_of([&] { CleaningRuleSet::from_json(bad); }), ErrorKind::ParseError);
  const Json bad_action = Json::parse(R"([{"id":"x","pattern":"a","action":"drop"}])");
  EXPECT_EQ(kind_of([&] { CleaningRuleSet::from_json(bad_action); }), ErrorKind::ParseError);
}

TEST(ExactBackendTest, SamplesFollowConditional) {
  SmallWorld w;
  ExactBackend backend(w.prompts, w.space, w.reference, w.rewards, 1.0, 2.0);
  const Distribution& cond = backend.conditional(7);
  Rng rng(1);
  std::vector<int> counts(10);
  const int n = 30000;
  for (int i = 0; i < n; ++i) ++counts[w.space.index_of(backend.generate(w.prompts[3], 7, rng))];
  for (std::size_t y = 0; y < 10; ++y) EXPECT_NEAR(counts[y] / double(n), cond.at(3, y), 0.012);
  EXPECT_EQ(backend.reward_for_score(4), 4.0);
  EXPECT_EQ(kind_of([&] { backend.conditional(11); }), ErrorKind::ScoreOutOfRange);
}

TEST(ExactBackendTest, ScoreMapRemapsConditioning) {
  SmallWorld w;
  ExactBackend backend(w.prompts, w.space, w.reference, w.rewards, 1.0, 2.0);
  std::array<double, 10> map{};
  map.fill(5.0);
  backend.set_score_map(map);
  EXPECT_EQ(backend.conditional(1), backend.conditional(10));
}

TEST(ExactBackendTest, ShapeChecked) {
  SmallWorld w;
  TabularPolicy wrong(instances::prompt_ids(12), 10, std::vector<double>(120, 0.0));
  EXPECT_THROW(ExactBackend(w.prompts, w.space, wrong, w.rewards, 1.0, 2.0), Error);
}

TEST(GeneratePairTest, SkipReasons) {
  const auto rules = CleaningRuleSet::defaults();
  const Prompt p{"p1", "text"};
  ScriptedBackend dup({{10, "same"}, {3, "same"}});
  EXPECT_EQ(generate_pair(dup, rules, p, 3, 1, 0).skip_reason, "duplicate");
  ScriptedBackend meta({{10, "my 10-score answer"}, {3, "fine"}});
  EXPECT_EQ(generate_pair(meta, rules, p, 3, 1, 0).skip_reason, "cleaning");
  ScriptedBackend ok({{10, "Okay, here is a 10-score answer: good"}, {4, "weak"}});
  const PairOutcome o = generate_pair(ok, rules, p, 4, 2, 0);
  ASSERT_TRUE(o.pair);
  EXPECT_EQ(o.pair->chosen, "good p1");
  EXPECT_EQ(o.pair->rejected, "weak p1");
  EXPECT_EQ(o.pair->rejected_score, 4);
  EXPECT_EQ(o.pair->iteration, 2);
  EXPECT_EQ(kind_of([&] { generate_pair(ok, rules, p, 10, 1, 0); }), ErrorKind::ScoreOutOfRange);
}

TEST(BuildDatasetTest, SortedAndIndependentOfWorkerCount) {
  SmallWorld w;
  TempDir dir;
  const ScoreSchedule schedule{{3, 5, 7}};
  std::string first;
  for (std::size_t workers : {1u, 3u, 8u}) {
    ExactBackend backend(w.prompts, w.space, w.reference, w.rewards, 1.0, 2.0);
    backend.set_max_concurrency(workers);
    const auto path = dir / ("d" + std::to_string(workers) + ".jsonl");
    const DatasetResult r = build_dataset(backend, CleaningRuleSet::defaults(), w.prompts, schedule, 2, 77, path);
    EXPECT_EQ(r.summary.pairs_written + r.summary.skipped_total(), 12u);
    for (std::size_t i = 1; i < r.pairs.size(); ++i) EXPECT_LT(r.pairs[i - 1].prompt_id, r.pairs[i].prompt_id);
    for (const auto& pair : r.pairs) EXPECT_EQ(pair.rejected_score, 5);
    const std::string text = testing_support::slurp(path);
    if (first.empty()) first = text;
    EXPECT_EQ(text, first);
  }
}

TEST(BuildDatasetTest, IterationOutsideSchedule) {
  SmallWorld w;
  TempDir dir;
  ExactBackend backend(w.prompts, w.space, w.reference, w.rewards, 1.0, 2.0);
  EXPECT_EQ(kind_of([&] {
              build_dataset(backend, CleaningRuleSet::defaults(), w.prompts, ScoreSchedule{{3}}, 2, 1, dir / "x");
            }),
            ErrorKind::InvalidArgument);
}

TEST(SftJsonlTest, RoundTrip) {
  TempDir dir;
  const std::vector<std::pair<std::string, std::string>> data{{"p0", "a b"}, {"p1", "c \"d\""}};
  write_sft_jsonl(dir / "sft.jsonl", data);
  EXPECT_EQ(read_sft_jsonl(dir / "sft.jsonl"), data);
  testing_support::slurp(dir / "sft.jsonl");
  std::ofstream(dir / "bad.jsonl") << "{\"prompt_id\": 1}\n";
  EXPECT_EQ(kind_of([&] { read_sft_jsonl(dir / "bad.jsonl"); }), ErrorKind::ParseError);
}

// ---------------------------------------------------------------------------
// HTTP backend against the local stub

namespace {

HttpBackendConfig stub_config(const ChatStub& stub) {
  HttpBackendConfig c;
  c.endpoint = stub.endpoint();
  c.model = "stub-model";
  c.auth_env = "SRLAB_TEST_TOKEN";
  c.max_concurrency = 2;
  c.max_retries = 3;
  c.backoff_initial = std::chrono::milliseconds(20);
  c.timeout = std::chrono::seconds(5);
  return c;
}

}  // namespace

TEST(HttpBackendTest, SendsChatCompletionRequest) {
  ScopedEnv env("SRLAB_TEST_TOKEN", "tok-secret-123");
  ChatStub stub;
  HttpBackend backend(stub_config(stub), PrefixTemplate{}, nullptr);
  Rng rng(0);
  const std::string reply = backend.generate(Prompt{"p", "Say hi to item 7."}, 4, rng);
  EXPECT_EQ(reply, "a plain answer for item 7.");
  const auto reqs = stub.requests();
  ASSERT_EQ(reqs.size(), 1u);
  EXPECT_EQ(reqs[0].authorization, "Bearer tok-secret-123");
  EXPECT_EQ(reqs[0].body["model"], "stub-model");
  EXPECT_EQ(reqs[0].body["messages"][0]["role"], "user");
  EXPECT_NE(reqs[0].body["messages"][0]["content"].get<std::string>().find("score of 4 out of 10"),
            std::string::npos);
  EXPECT_EQ(reqs[0].body["max_tokens"], 1024);
}

TEST(HttpBackendTest, RetriesRateLimitWithDoublingBackoff) {
  ScopedEnv env("SRLAB_TEST_TOKEN", "tok-secret-123");
  ChatStub stub(2, 429);
  std::ostringstream logs;
  HttpBackend backend(stub_config(stub), PrefixTemplate{}, stream_logger(logs, "http-test"));
  std::vector<std::chrono::milliseconds> delays;
  backend.set_sleeper([&](std::chrono::milliseconds d) {
    delays.push_back(d);
    std::this_thread::sleep_for(d);
  });
  EXPECT_EQ(backend.complete("hello item 1."), "a plain answer for item 1.");
  EXPECT_EQ(delays, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(20),
                                                            std::chrono::milliseconds(40)}));
  const auto reqs = stub.requests();
  ASSERT_EQ(reqs.size(), 3u);
  EXPECT_GE(reqs[1].at - reqs[0].at, std::chrono::milliseconds(20));
  EXPECT_GE(reqs[2].at - reqs[1].at, std::chrono::milliseconds(40));
  EXPECT_NE(logs.str().find("429"), std::string::npos);
  EXPECT_EQ(logs.str().find("tok-secret-123"), std::string::npos);
}

TEST(HttpBackendTest, GivesUpAfterMaxRetries) {
  ScopedEnv env("SRLAB_TEST_TOKEN", "tok-secret-123");
  ChatStub stub(-1, 503);
  auto config = stub_config(stub);
  config.max_retries = 2;
  HttpBackend backend(config, PrefixTemplate{}, nullptr);
  backend.set_sleeper([](std::chrono::milliseconds) {});
  EXPECT_EQ(kind_of([&] { backend.complete("x"); }), ErrorKind::Http);
  EXPECT_EQ(stub.requests().size(), 3u);
}

TEST(HttpBackendTest, UnauthorizedIsNotRetried) {
  ScopedEnv env("SRLAB_TEST_TOKEN", "tok-secret-123");
  ChatStub stub(-1, 401);
  HttpBackend backend(stub_config(stub), PrefixTemplate{}, nullptr);
  backend.set_sleeper([](std::chrono::milliseconds) { FAIL() << "no retry expected"; });
  try {
    backend.complete("x");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Http);
    EXPECT_EQ(exit_code_for(e.kind()), 3);
    EXPECT_EQ(std::string(e.what()).find("tok-secret-123"), std::string::npos);
  }
  EXPECT_EQ(stub.requests().size(), 1u);
}

TEST(HttpBackendTest, TransportFailureIsRetried) {
  ScopedEnv env("SRLAB_TEST_TOKEN", "tok");
  HttpBackendConfig c;
  c.endpoint = "http://127.0.0.1:1/v1";
  c.model = "m";
  c.auth_env = "SRLAB_TEST_TOKEN";
  c.max_retries = 2;
  c.timeout = std::chrono::seconds(1);
  HttpBackend backend(c, PrefixTemplate{}, nullptr);
  int sleeps = 0;
  backend.set_sleeper([&](std::chrono::milliseconds) { ++sleeps; });
  EXPECT_THROW(backend.complete("x"), Error);
  EXPECT_EQ(sleeps, 2);
}

TEST(HttpBackendTest, ConfigurationErrors) {
  unsetenv("SRLAB_TEST_TOKEN_MISSING");
  HttpBackendConfig c;
  c.endpoint = "http://127.0.0.1:9/v1";
  c.model = "m";
  c.auth_env = "SRLAB_TEST_TOKEN_MISSING";
  EXPECT_EQ(kind_of([&] { HttpBackend(c, PrefixTemplate{}, nullptr); }), ErrorKind::Backend);
  c.auth_env.clear();
  c.endpoint = "127.0.0.1:9";
  EXPECT_EQ(kind_of([&] { HttpBackend(c, PrefixTemplate{}, nullptr); }), ErrorKind::InvalidConfig);
  c.endpoint = "http://x";
  c.model.clear();
  EXPECT_EQ(kind_of([&] { HttpBackend(c, PrefixTemplate{}, nullptr); }), ErrorKind::InvalidConfig);
}

TEST(HttpBackendTest, RedactsToken) {
  ScopedEnv env("SRLAB_TEST_TOKEN", "abc123");
  HttpBackendConfig c;
  c.endpoint = "http://127.0.0.1:9";
  c.model = "m";
  c.auth_env = "SRLAB_TEST_TOKEN";
  HttpBackend backend(c, PrefixTemplate{}, nullptr);
  EXPECT_EQ(backend.redact("key=abc123; again abc123"), "key=[redacted]; again [redacted]");
}

TEST(HttpBackendTest, DatasetThroughStubIsCleanedAndSorted) {
  ScopedEnv env("SRLAB_TEST_TOKEN", "tok-secret-123");
  ChatStub stub;
  HttpBackend backend(stub_config(stub), PrefixTemplate{}, nullptr);
  std::vector<Prompt> ps;
  for (int i = 0; i < 6; ++i) ps.push_back({"q" + std::to_string(5 - i), "Write about item " + std::to_string(i) + "."});
  TempDir dir;
  const DatasetResult r =
      build_dataset(backend, CleaningRuleSet::defaults(), PromptSet(ps), ScoreSchedule{{3, 5, 7}}, 1, 5, dir / "d.jsonl");
  ASSERT_EQ(r.pairs.size(), 6u);
  EXPECT_EQ(r.pairs.front().prompt_id, "q0");
  for (const auto& pair : r.pairs) {
    EXPECT_EQ(pair.chosen.rfind("the best answer for", 0), 0u) << pair.chosen;
    EXPECT_EQ(pair.rejected.rfind("a plain answer for", 0), 0u);
  }
  EXPECT_EQ(read_pairs_jsonl(dir / "d.jsonl"), r.pairs);
}
