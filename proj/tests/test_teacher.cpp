#include <doctest.h>

#include <set>
#include <thread>

#include "repairlab/errors.hpp"
#include "repairlab/teacher.hpp"
#include "support.hpp"

// After Eigen: resolv.h defines a macro named _res.
#include <httplib.h>

using namespace repairlab;
using testsupport::TempDir;

namespace {

RepairTask sample_task() {
  RepairTask t;
  t.id = "t1";
  t.source_benchmark = "bench";
  t.prompt = "Print the sum.";
  t.buggy_code = "a-b";
  t.language_tag = "toyexpr";
  return t;
}

TeacherRequest request_with(double temperature) {
  TeacherRequest r;
  r.model_name = "m";
  r.temperature = temperature;
  r.max_tokens = 64;
  r.messages.push_back({"user", "hello"});
  return r;
}

std::shared_ptr<TeacherBackend> fixed_reply(std::string text, std::atomic<int>* calls = nullptr) {
  return std::make_shared<FunctionBackend>([text, calls](const TeacherRequest&) {
    if (calls) ++*calls;
    TeacherReply r;
    r.text = text;
    r.usage = {10, 5};
    return r;
  });
}

}  // namespace

TEST_CASE("reasoning and code split from a single block") {
  const auto [reasoning, code] = split_reasoning_and_code("reason text\n```\nfixed\n```");
  CHECK(reasoning == "reason text");
  CHECK(code == "fixed");
}

TEST_CASE("two code blocks: solution is the last, reasoning keeps the rest") {
  const std::string reply = "look here\n```\nold\n```\nso instead\n```python\nnew\n```\n";
  const auto [reasoning, code] = split_reasoning_and_code(reply);
  CHECK(code == "new");
  CHECK(reasoning == "look here\n```\nold\n```\nso instead");
}

TEST_CASE("reply without a fenced block is an extraction error") {
  CHECK_THROWS_AS(split_reasoning_and_code("no code at all"), ExtractionError);
  CHECK_THROWS_AS(split_reasoning_and_code("```\nunterminated"), ExtractionError);
  CHECK_FALSE(last_code_block("plain").has_value());
}

TEST_CASE("verdict parsing") {
  CHECK(parse_verdict("A is cleaner.\nA") == 'A');
  CHECK(parse_verdict("Reasons.\n\nB\n") == 'B');
  CHECK(parse_verdict("**B**") == 'B');
  CHECK_THROWS_AS(parse_verdict("both equal"), JudgmentParseError);
  CHECK_THROWS_AS(parse_verdict(""), JudgmentParseError);
  CHECK_THROWS_AS(parse_verdict("A or B"), JudgmentParseError);
}

TEST_CASE("judge_pair maps verdicts to labels through the presentation order") {
  TempDir dir;
  for (const char verdict : {'A', 'B'}) {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      auto seen = std::make_shared<std::string>();
      auto backend = std::make_shared<FunctionBackend>([seen, verdict](const TeacherRequest& r) {
        *seen = r.messages.front().content;
        TeacherReply rep;
        rep.text = std::string("thinking\n") + verdict;
        return rep;
      });
      TeacherClient client(backend, nullptr, CacheMode::live);
      Rng rng(seed);
      const PreferencePair p = judge_pair(client, sample_task(), "first-cand", "second-cand", {}, rng);
      const bool swapped = p.extra.at("presented_swapped").get<bool>();
      const bool a_shown_first = seen->find("first-cand") < seen->find("second-cand");
      CHECK(a_shown_first == !swapped);
      // The verdict names a display slot; the label names the stored candidate.
      const bool stored_a_won = (verdict == 'A') == a_shown_first;
      CHECK(p.label == (stored_a_won ? 1 : 0));
    }
  }
}

TEST_CASE("mock verdict lines map to labels when presentation is not swapped") {
  for (const auto& [verdict, label] : std::vector<std::pair<std::string, int>>{{"A", 1}, {"B", 0}}) {
    TeacherClient client(fixed_reply(verdict), nullptr, CacheMode::live);
    // Find a seed whose first draw keeps the stored order.
    for (std::uint64_t seed = 0;; ++seed) {
      Rng probe(seed);
      if (probe.below(2) != 0) continue;
      Rng rng(seed);
      CHECK(judge_pair(client, sample_task(), "x", "y", {}, rng).label == label);
      break;
    }
  }
}

TEST_CASE("ranking parse and expansion") {
  const auto order = parse_ranking("I prefer the second.\n2,1,3", 3);
  REQUIRE(order == std::vector<std::size_t>{1, 0, 2});
  const std::vector<std::string> cands = {"c1", "c2", "c3"};
  const auto pairs = expand_ranking("t", cands, order, "judge");
  REQUIRE(pairs.size() == 3);
  // Winner of every pair, by enumeration of the ranking 2 > 1 > 3.
  std::set<std::pair<std::string, std::string>> wins;
  for (const auto& p : pairs) {
    if (p.label == 1)
      wins.insert({p.candidate_a, p.candidate_b});
    else
      wins.insert({p.candidate_b, p.candidate_a});
  }
  CHECK(wins == std::set<std::pair<std::string, std::string>>{{"c2", "c1"}, {"c2", "c3"}, {"c1", "c3"}});

  CHECK(expand_ranking("t", {"x", "y"}, parse_ranking("1,2", 2), "j").size() == 1);
  CHECK_THROWS_AS(parse_ranking("1,1,3", 3), JudgmentParseError);
  CHECK_THROWS_AS(parse_ranking("1,2", 3), JudgmentParseError);
  CHECK_THROWS_AS(parse_ranking("1,2,4", 3), JudgmentParseError);
  CHECK_THROWS_AS(parse_ranking("first, second", 2), JudgmentParseError);
}

TEST_CASE("request digests cover every field of the canonical form") {
  CHECK(request_with(0.2).digest() == request_with(0.2).digest());
  CHECK(request_with(0.2).digest() != request_with(0.3).digest());
  TeacherRequest other_model = request_with(0.2);
  other_model.model_name = "n";
  CHECK(other_model.digest() != request_with(0.2).digest());
  CHECK(request_with(0.2).digest().size() == 64);
}

TEST_CASE("record then replay returns the identical reply; unseen requests miss") {
  TempDir dir;
  auto cache = std::make_shared<ReplyCache>(dir.path);
  std::atomic<int> calls{0};
  TeacherReply recorded;
  {
    TeacherClient rec(fixed_reply("why\n```\ncode\n```", &calls), cache, CacheMode::record);
    recorded = rec.cached_call(request_with(0.0));
    // A second record-mode call is served from the cache.
    CHECK(rec.cached_call(request_with(0.0)) == recorded);
    CHECK(rec.backend_calls() == 1);
  }
  TeacherClient replay(nullptr, cache, CacheMode::replay);
  CHECK(replay.cached_call(request_with(0.0)) == recorded);
  CHECK(replay.backend_calls() == 0);
  CHECK(calls == 1);

  const std::string missing = request_with(0.5).digest();
  try {
    replay.cached_call(request_with(0.5));
    FAIL("expected a cache miss");
  } catch (const CacheMissError& e) {
    CHECK(e.digest() == missing);
  }
}

TEST_CASE("live mode calls every time and stores nothing") {
  TempDir dir;
  std::atomic<int> calls{0};
  TeacherClient live(fixed_reply("x", &calls), nullptr, CacheMode::live);
  live.cached_call(request_with(0.0));
  live.cached_call(request_with(0.0));
  CHECK(calls == 2);
  CHECK(live.usage() == TokenUsage{20, 10});
}

TEST_CASE("transport failures are retried with doubling backoff, then surface") {
  std::vector<long> sleeps;
  RetryPolicy retry;
  retry.attempts = 3;
  retry.initial_backoff = std::chrono::milliseconds(100);
  retry.sleep = [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); };

  int failures_left = 2;
  auto flaky = std::make_shared<FunctionBackend>([&](const TeacherRequest&) {
    if (failures_left-- > 0) throw TransportError("connection reset");
    TeacherReply r;
    r.text = "ok";
    return r;
  });
  TeacherClient client(flaky, nullptr, CacheMode::live, retry);
  CHECK(client.cached_call(request_with(0.0)).text == "ok");
  CHECK(sleeps == std::vector<long>{100, 200});
  CHECK(client.backend_calls() == 3);

  sleeps.clear();
  auto dead = std::make_shared<FunctionBackend>(
      [](const TeacherRequest&) -> TeacherReply { throw TransportError("unreachable"); });
  TeacherClient failing(dead, nullptr, CacheMode::live, retry);
  CHECK_THROWS_AS(failing.cached_call(request_with(0.0)), TransportError);
  CHECK(sleeps == std::vector<long>{100, 200});
}

TEST_CASE("non-transport errors are not retried") {
  int calls = 0;
  auto bad = std::make_shared<FunctionBackend>([&](const TeacherRequest&) -> TeacherReply {
    ++calls;
    throw ValidationError("bad");
  });
  RetryPolicy retry;
  retry.sleep = [](std::chrono::milliseconds) {};
  TeacherClient client(bad, nullptr, CacheMode::live, retry);
  CHECK_THROWS_AS(client.cached_call(request_with(0.0)), ValidationError);
  CHECK(calls == 1);
}

TEST_CASE("elicit_trace renders the task and records usage") {
  std::string prompt_seen;
  auto backend = std::make_shared<FunctionBackend>([&](const TeacherRequest& r) {
    prompt_seen = r.messages.front().content;
    TeacherReply rep;
    rep.text = "The bug flips the sign.\n```\na+b\n```";
    rep.usage = {30, 7};
    return rep;
  });
  TeacherClient client(backend, nullptr, CacheMode::live);
  const ReasoningExample e = elicit_trace(client, sample_task(), {});
  CHECK(prompt_seen.find("Please fix the bug in this code.") != std::string::npos);
  CHECK(prompt_seen.find("a-b") != std::string::npos);
  CHECK(e.reasoning == "The bug flips the sign.");
  CHECK(e.solution == "a+b");
  CHECK_FALSE(e.verified);
  CHECK(e.extra.at("usage").at("input_tokens") == 30);
}

TEST_CASE("HTTP backend speaks the chat wire format and sends the credential") {
  httplib::Server server;
  std::string body_seen, auth_seen;
  server.Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
    body_seen = req.body;
    auth_seen = req.get_header_value("Authorization");
    res.set_content(R"({"content":"fine\n```\nx\n```","usage":{"input_tokens":12,"output_tokens":3}})",
                    "application/json");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 503; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  HttpTeacherBackend backend(base + "/v1/chat", "secret-key");
  const TeacherReply r = backend.complete(request_with(0.2));
  CHECK(r.text == "fine\n```\nx\n```");
  CHECK(r.usage == TokenUsage{12, 3});
  CHECK(auth_seen == "Bearer secret-key");
  const Json sent = Json::parse(body_seen);
  CHECK(sent.at("model") == "m");
  CHECK(sent.at("temperature") == 0.2);
  CHECK(sent.at("messages").at(0).at("content") == "hello");
  CHECK(body_seen.find("secret-key") == std::string::npos);

  HttpTeacherBackend broken(base + "/broken", "k");
  CHECK_THROWS_AS(broken.complete(request_with(0.2)), TransportError);

  server.stop();
  t.join();
}

TEST_CASE("default prompt templates carry the required instructions") {
  const PromptTemplates t = PromptTemplates::defaults();
  CHECK_NOTHROW(t.check());
  PromptTemplates broken = t;
  broken.compare_template = "no placeholders";
  CHECK_THROWS_AS(broken.check(), ValidationError);
}
