#include <doctest.h>

#include "repairlab/errors.hpp"
#include "repairlab/patch.hpp"
#include "repairlab/process.hpp"
#include "repairlab/toy_family.hpp"
#include "repairlab/verifier.hpp"
#include "support.hpp"

using namespace repairlab;

namespace {

// Shell-script tasks: the candidate is a POSIX sh program run by io tests.
VerifierConfig sh_config() {
  VerifierConfig c;
  c.run_commands["sh"] = "sh {file}";
  c.compile_commands["sh"] = "sh -n {file}";
  c.extensions["sh"] = "sh";
  c.parallelism = 2;
  return c;
}

RepairTask adder_task(const std::string& id = "adder") {
  RepairTask t;
  t.id = id;
  t.source_benchmark = "sh";
  t.prompt = "Add two numbers.";
  t.buggy_code = "read a b; echo $((a-b))";
  t.ground_truth = "read a b; echo $((a+b))";
  t.language_tag = "sh";
  TestSpec s;
  s.kind = TestKind::io_pair;
  s.stdin_text = "3 4\n";
  s.expected_stdout = "7\n";
  t.tests.push_back(s);
  return t;
}

ExecutionResult toyexpr(const std::vector<std::string>& args, const std::string& stdin_text = "") {
  ProcessSpec p;
  p.argv = {default_toyexpr_path()};
  p.argv.insert(p.argv.end(), args.begin(), args.end());
  p.stdin_text = stdin_text;
  return run_process(p);
}

}  // namespace

TEST_CASE("run_process reports exit codes and captures both streams") {
  ProcessSpec p;
  p.argv = {"sh", "-c", "cat; echo err >&2; exit 3"};
  p.stdin_text = "in\n";
  const ExecutionResult r = run_process(p);
  CHECK(r.exit_code == 3);
  CHECK(r.stdout_text == "in\n");
  CHECK(r.stderr_text == "err\n");
  CHECK_FALSE(r.timed_out);
}

TEST_CASE("run_process kills the whole group on timeout") {
  ProcessSpec p;
  p.argv = {"sh", "-c", "sleep 5 & sleep 5; wait"};
  p.timeout_seconds = 0.3;
  const ExecutionResult r = run_process(p);
  CHECK(r.timed_out);
  CHECK(r.exit_code == ExecutionResult::kTimedOutExitCode);
  CHECK(r.wall_time_ms < 3000.0);
}

TEST_CASE("unstartable programs are sandbox errors, not test failures") {
  ProcessSpec p;
  p.argv = {"/nonexistent/program"};
  CHECK_THROWS_AS(run_process(p), SandboxError);
}

TEST_CASE("expand_command groups quotes and fills placeholders") {
  const auto argv = expand_command("python3 -c 'print(1 + 2)' {file} {unknown}", {{"file", "/tmp/x.py"}});
  CHECK(argv == std::vector<std::string>{"python3", "-c", "print(1 + 2)", "/tmp/x.py", "{unknown}"});
}

TEST_CASE("outputs_match ignores trailing whitespace only") {
  CHECK(outputs_match("7\n", "7"));
  CHECK(outputs_match("a  \nb\n\n", "a\nb"));
  CHECK_FALSE(outputs_match("7", "8"));
  CHECK_FALSE(outputs_match(" 7", "7"));
}

TEST_CASE("io_pair test against a correct adder passes; the buggy one fails") {
  const Verifier v(sh_config());
  const RepairTask t = adder_task();
  const VerificationReport good = v.validate(t, *t.ground_truth);
  CHECK(good.valid);
  REQUIRE(good.per_test.size() == 1);
  CHECK(good.per_test[0].pass);
  CHECK(good.per_test[0].result.stdout_text == "7\n");
  CHECK_FALSE(v.validate(t, t.buggy_code).valid);
  CHECK(v.pass_fraction(t, *t.ground_truth) == 1.0);
}

TEST_CASE("empty candidate fails every command test") {
  Verifier v(sh_config());
  RepairTask t = adder_task();
  TestSpec c;
  c.kind = TestKind::command;
  c.command = "sh -c 'test -s {file}'";
  t.tests.push_back(c);
  const VerificationReport r = v.validate(t, "");
  CHECK_FALSE(r.valid);
  for (const auto& o : r.per_test) CHECK_FALSE(o.pass);
}

TEST_CASE("a timed-out test counts as failed") {
  Verifier v(sh_config());
  RepairTask t = adder_task();
  t.tests[0].timeout_seconds = 0.2;
  const VerificationReport r = v.validate(t, "sleep 5");
  CHECK_FALSE(r.valid);
  CHECK(r.per_test[0].result.timed_out);
}

TEST_CASE("context files are materialized next to the candidate") {
  Verifier v(sh_config());
  RepairTask t = adder_task();
  t.context.push_back({"offset.txt", "100"});
  t.tests[0].expected_stdout = "107\n";
  CHECK(v.validate(t, "read a b; echo $((a+b+$(cat offset.txt)))").valid);
}

TEST_CASE("allowlist rejects commands outside it") {
  VerifierConfig c = sh_config();
  c.allowlist = {"python3"};
  const Verifier v(c);
  CHECK_THROWS_AS(v.validate(adder_task(), "echo 7"), SandboxError);
  c.allowlist = {"sh"};
  CHECK(Verifier(c).validate(adder_task(), "echo 7").valid);
}

TEST_CASE("filter_verified keeps exactly the examples that validate") {
  const Verifier v(sh_config());
  TaskSet tasks;
  tasks.add(adder_task("t1"));
  tasks.add(adder_task("t2"));
  tasks.add(adder_task("t3"));
  std::vector<ReasoningExample> ex(3);
  ex[0].task_id = "t1";
  ex[0].solution = "read a b; echo $((a+b))";
  ex[1].task_id = "t2";
  ex[1].solution = "echo 8";
  ex[2].task_id = "t3";
  ex[2].solution = "read a b; echo $((b+a))";

  // Oracle: validate each example on its own.
  std::size_t expected = 0;
  for (const auto& e : ex) expected += v.validate(tasks.at(e.task_id), e.solution).valid ? 1 : 0;
  const auto kept = v.filter_verified(ex, tasks);
  CHECK(kept.size() == 2);
  CHECK(kept.size() == expected);
  CHECK(kept[0].task_id == "t1");
  CHECK(kept[1].task_id == "t3");
  for (const auto& e : kept) CHECK(e.verified);

  CHECK(v.filter_verified({}, tasks).empty());
  std::vector<ReasoningExample> all_good = {ex[0], ex[2]};
  const auto same = v.filter_verified(all_good, tasks);
  REQUIRE(same.size() == 2);
  CHECK(same[0].solution == all_good[0].solution);
  CHECK(same[1].solution == all_good[1].solution);

  ReasoningExample orphan;
  orphan.task_id = "missing";
  CHECK_THROWS_AS(v.filter_verified({orphan}, tasks), ValidationError);
}

TEST_CASE("compile checks on the toy language") {
  const Verifier v(toy_verifier_config());
  CHECK(v.compile_check("max(a, b) + 1", "toyexpr"));
  CHECK_FALSE(v.compile_check("max(a, b", "toyexpr"));
  CHECK_FALSE(v.compile_check("(a + b))", "toyexpr"));
  CHECK_THROWS_AS(v.compile_check("a", "cobol"), ConfigError);
}

TEST_CASE("compile timeout is a failure with timed_out recorded") {
  VerifierConfig c = sh_config();
  c.compile_timeout_seconds = 0.2;
  const Verifier v(c);
  ExecutionResult r;
  CHECK_FALSE(v.compile_check("x", "sh", "sh -c 'sleep 5' {file}", &r));
  CHECK(r.timed_out);
  CHECK_THROWS_AS(v.compile_check("x", "sh", "sh -n", &r), ConfigError);
}

TEST_CASE("toy tasks validate their ground truth and reject their bug") {
  const Verifier v(toy_verifier_config());
  const TaskSet tasks = make_toy_tasks();
  CHECK(tasks.size() == 20);
  for (const auto& t : tasks) {
    CHECK_MESSAGE(v.validate(t, *t.ground_truth).valid, t.id);
    CHECK_MESSAGE(!v.validate(t, t.buggy_code).valid, t.id);
  }
}

TEST_CASE("toyexpr evaluates expressions and signals errors by exit code") {
  testsupport::TempDir dir;
  testsupport::write_text(dir / "p.txt", "max(a, b) * 2 - abs(-a) % 3");
  const ExecutionResult ok = toyexpr({(dir / "p.txt").string()}, "3 4\n");
  CHECK(ok.exit_code == 0);
  CHECK(ok.stdout_text == "8\n");

  testsupport::write_text(dir / "div.txt", "a / (b - b)");
  CHECK(toyexpr({(dir / "div.txt").string()}, "1 2\n").exit_code == 2);
  testsupport::write_text(dir / "bad.txt", "a +");
  CHECK(toyexpr({"--check", (dir / "bad.txt").string()}).exit_code == 1);
  CHECK(toyexpr({"--check", (dir / "p.txt").string()}).exit_code == 0);
  CHECK(toyexpr({(dir / "p.txt").string()}, "three four\n").exit_code == 65);
  CHECK(toyexpr({(dir / "none.txt").string()}).exit_code == 66);
  CHECK(toyexpr({}).exit_code == 64);
}

TEST_CASE("patch application") {
  const FileSet base = {{"main.py", "a = 1\nb = 2\nc = 3\n"}, {"other.py", "x\n"}};
  CHECK(apply_patch(base, "") == base);

  const std::string one_line =
      "--- a/main.py\n+++ b/main.py\n@@ -1,3 +1,3 @@\n a = 1\n-b = 2\n+b = 20\n c = 3\n";
  REQUIRE(looks_like_unified_diff(one_line));
  const FileSet patched = apply_patch(base, one_line);
  CHECK(patched.at("main.py") == "a = 1\nb = 20\nc = 3\n");
  CHECK(patched.at("other.py") == base.at("other.py"));
  CHECK(reverse_patch(patched, one_line) == base);

  const std::string stale = "--- a/main.py\n+++ b/main.py\n@@ -1,3 +1,3 @@\n a = 1\n-b = 5\n+b = 20\n c = 3\n";
  try {
    apply_patch(base, stale);
    FAIL("stale context should not apply");
  } catch (const PatchApplyError& e) {
    CHECK(std::string(e.what()).find("main.py") != std::string::npos);
    CHECK(std::string(e.what()).find("hunk 1") != std::string::npos);
  }
  const std::string unknown = "--- a/nope.py\n+++ b/nope.py\n@@ -1 +1 @@\n-x\n+y\n";
  CHECK_THROWS_AS(apply_patch(base, unknown), PatchApplyError);
  CHECK_FALSE(looks_like_unified_diff("a+b"));
}
