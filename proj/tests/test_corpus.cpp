#include <doctest.h>

#include <map>
#include <set>

#include "repairlab/corpus.hpp"
#include "repairlab/errors.hpp"
#include "support.hpp"

using namespace repairlab;
using testsupport::TempDir;
using testsupport::write_text;

namespace {

std::string task_line(const std::string& id) {
  return R"({"id":")" + id +
         R"(","source_benchmark":"b","prompt":"p","buggy_code":"x","language_tag":"py","tests":[{"kind":"command","command":"true"}]})";
}

std::vector<ReasoningExample> examples_with_strata(int a, int b) {
  std::vector<ReasoningExample> v;
  for (int i = 0; i < a + b; ++i) {
    ReasoningExample e;
    e.task_id = (i < a ? "a-" : "b-") + std::to_string(i);
    e.solution = "s" + std::to_string(i);
    e.verified = true;
    v.push_back(e);
  }
  return v;
}

std::string prefix_key(const ReasoningExample& e) { return e.task_id.substr(0, 1); }

}  // namespace

TEST_CASE("load_tasks handles empty and small files") {
  TempDir dir;
  write_text(dir / "empty.jsonl", "");
  CHECK(load_tasks(dir / "empty.jsonl").size() == 0);
  write_text(dir / "two.jsonl", task_line("t1") + "\n" + task_line("t2") + "\n");
  const TaskSet two = load_tasks(dir / "two.jsonl");
  CHECK(two.size() == 2);
  CHECK(two[1].id == "t2");
  CHECK(two[0].tests.front().command == std::string("true"));
}

TEST_CASE("duplicate id names the offending line") {
  TempDir dir;
  write_text(dir / "dup.jsonl", task_line("t1") + "\n" + task_line("t1") + "\n");
  try {
    load_tasks(dir / "dup.jsonl");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("malformed line raises a parse error with its line number") {
  TempDir dir;
  write_text(dir / "bad.jsonl", task_line("t1") + "\n{not json\n");
  try {
    load_tasks(dir / "bad.jsonl");
    FAIL("expected a parse error");
  } catch (const LineParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("test spec invariants") {
  TestSpec t;
  t.kind = TestKind::command;
  CHECK_THROWS_AS(t.check(), ValidationError);
  t.command = "true";
  CHECK_NOTHROW(t.check());
  t.timeout_seconds = 0;
  CHECK_THROWS_AS(t.check(), ValidationError);
  TestSpec io;
  io.kind = TestKind::io_pair;
  io.stdin_text = "1";
  CHECK_THROWS_AS(io.check(), ValidationError);
}

TEST_CASE("serialization round-trips every field and keeps unknown ones") {
  TempDir dir;
  RepairTask t;
  t.id = "t\"1";
  t.source_benchmark = "bench";
  t.prompt = "fix it\nplease";
  t.buggy_code = "print(1)\n";
  t.context = {{"util.py", "x = 1\n"}};
  TestSpec s;
  s.kind = TestKind::io_pair;
  s.stdin_text = "1 2\n";
  s.expected_stdout = "3\n";
  s.timeout_seconds = 2.5;
  t.tests = {s};
  t.ground_truth = "print(3)\n";
  t.language_tag = "python";
  t.extra["difficulty"] = "hard";
  TaskSet set;
  set.add(t);
  write_tasks(dir / "t.jsonl", set);
  const RepairTask back = load_tasks(dir / "t.jsonl")[0];
  CHECK(to_json(back) == to_json(t));
  CHECK(back.extra["difficulty"] == "hard");

  ReasoningExample e{"t1", "because", "code", "m", true, Json{{"k", 1}}};
  write_traces(dir / "r.jsonl", {e});
  CHECK(to_json(load_traces(dir / "r.jsonl")[0]) == to_json(e));

  PreferencePair p{"t1", "a", "b", 0, "judge", Json::object()};
  write_prefs(dir / "p.jsonl", {p});
  CHECK(to_json(load_prefs(dir / "p.jsonl")[0]) == to_json(p));
}

TEST_CASE("preference pair invariants") {
  PreferencePair p{"t", "same", "same", 1, "j", {}};
  CHECK_THROWS_AS(p.check(), ValidationError);
  p.candidate_b = "other";
  p.label = 2;
  CHECK_THROWS_AS(p.check(), ValidationError);
}

TEST_CASE("split sizes, determinism and partition") {
  TaskSet tasks;
  for (int i = 0; i < 100; ++i) {
    RepairTask t;
    t.id = "t" + std::to_string(i);
    tasks.add(t);
  }
  const DatasetSplit s = split_dataset(tasks, SplitSpec{});
  CHECK(s.train.size() == 70);
  CHECK(s.val.size() == 15);
  CHECK(s.test.size() == 15);
  std::set<std::string> all;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (const auto& t : *part) CHECK(all.insert(t.id).second);
  CHECK(all.size() == 100);

  const DatasetSplit again = split_dataset(tasks, SplitSpec{});
  for (std::size_t i = 0; i < s.test.size(); ++i) CHECK(again.test[i].id == s.test[i].id);

  TaskSet ten;
  for (int i = 0; i < 10; ++i) {
    RepairTask t;
    t.id = std::to_string(i);
    ten.add(t);
  }
  const DatasetSplit all_train = split_dataset(ten, SplitSpec{1.0, 0.0, 0.0});
  CHECK(all_train.train.size() == 10);
  CHECK(all_train.test.size() == 0);
  CHECK_THROWS_AS(split_dataset(ten, SplitSpec{0.5, 0.2, 0.2}), ValidationError);
}

TEST_CASE("split partition holds for many sizes") {
  for (int n = 0; n <= 40; ++n) {
    TaskSet tasks;
    for (int i = 0; i < n; ++i) {
      RepairTask t;
      t.id = std::to_string(i);
      tasks.add(t);
    }
    const DatasetSplit s = split_dataset(tasks, SplitSpec{0.6, 0.25, 0.15, 7});
    CHECK(s.train.size() + s.val.size() + s.test.size() == static_cast<std::size_t>(n));
    CHECK(s.val.size() == static_cast<std::size_t>(std::lround(n * 0.25)));
  }
}

TEST_CASE("cap keeps ceil(f N) with proportional strata") {
  const auto ex = examples_with_strata(80, 20);
  const auto kept = cap_dataset(ex, 0.2, prefix_key);
  REQUIRE(kept.size() == 20);
  std::map<std::string, int> counts;
  for (const auto& e : kept) ++counts[prefix_key(e)];
  CHECK(counts["a"] == 16);
  CHECK(counts["b"] == 4);

  const auto five_hundred = examples_with_strata(500, 0);
  CHECK(cap_dataset(five_hundred, 0.2, prefix_key).size() == 100);
  CHECK(cap_dataset(examples_with_strata(50, 0), 0.2, prefix_key).size() == 10);
  CHECK(cap_dataset(examples_with_strata(7, 0), 0.2, prefix_key).size() == 2);
}

TEST_CASE("cap with fraction 1 is the identity and order is stable") {
  const auto ex = examples_with_strata(5, 3);
  const auto same = cap_dataset(ex, 1.0, prefix_key);
  REQUIRE(same.size() == ex.size());
  for (std::size_t i = 0; i < ex.size(); ++i) CHECK(same[i].task_id == ex[i].task_id);

  const auto kept = cap_dataset(examples_with_strata(30, 30), 0.5, prefix_key, 9);
  std::vector<std::string> ids;
  for (const auto& e : kept) ids.push_back(e.task_id);
  std::vector<std::size_t> positions;
  const auto all = examples_with_strata(30, 30);
  for (const auto& id : ids)
    for (std::size_t i = 0; i < all.size(); ++i)
      if (all[i].task_id == id) positions.push_back(i);
  CHECK(std::is_sorted(positions.begin(), positions.end()));
  const auto again = cap_dataset(examples_with_strata(30, 30), 0.5, prefix_key, 9);
  for (std::size_t i = 0; i < kept.size(); ++i) CHECK(again[i].task_id == kept[i].task_id);
}

TEST_CASE("cap rejects fractions outside (0, 1]") {
  const auto ex = examples_with_strata(4, 0);
  CHECK_THROWS_AS(cap_dataset(ex, 0.0, prefix_key), ValidationError);
  CHECK_THROWS_AS(cap_dataset(ex, 1.5, prefix_key), ValidationError);
}

TEST_CASE("stratum by source benchmark") {
  TaskSet tasks;
  RepairTask t;
  t.id = "x";
  t.source_benchmark = "mbpp";
  tasks.add(t);
  ReasoningExample e;
  e.task_id = "x";
  CHECK(by_source_benchmark(tasks)(e) == "mbpp");
}
