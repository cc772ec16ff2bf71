#include "repairlab/toy_family.hpp"

#include <array>
#include <cstdlib>

namespace repairlab {

namespace {

struct ToyOp {
  const char* name;
  const char* noun;
  const char* expr;
  const char* benchmark;
  std::array<const char*, 3> outputs;  // for inputs "3 4", "10 2", "-5 7"
};

constexpr std::array<ToyOp, 5> kOps{{
    {"add", "sum", "a+b", "toy-arith", {"7", "12", "2"}},
    {"sub", "difference", "a-b", "toy-arith", {"-1", "8", "-12"}},
    {"mul", "product", "a*b", "toy-arith", {"12", "20", "-35"}},
    {"max", "larger", "max(a,b)", "toy-compare", {"4", "10", "7"}},
    {"min", "smaller", "min(a,b)", "toy-compare", {"3", "2", "-5"}},
}};

constexpr std::array<const char*, 3> kInputs{"3 4", "10 2", "-5 7"};

}  // namespace

TaskSet make_toy_tasks() {
  TaskSet set;
  for (const auto& want : kOps) {
    for (const auto& bug : kOps) {
      if (&want == &bug) continue;
      RepairTask t;
      t.id = std::string("toy-") + want.name + "-" + bug.name;
      t.source_benchmark = want.benchmark;
      t.prompt = std::string("Given a and b, print the ") + want.noun + ".";
      t.buggy_code = bug.expr;
      t.ground_truth = want.expr;
      t.language_tag = "toyexpr";
      for (std::size_t i = 0; i < kInputs.size(); ++i) {
        TestSpec s;
        s.kind = TestKind::io_pair;
        s.stdin_text = std::string(kInputs[i]) + "\n";
        s.expected_stdout = std::string(want.outputs[i]) + "\n";
        t.tests.push_back(std::move(s));
      }
      t.extra["teacher_reasoning"] =
          std::string("The ") + want.noun + " is " + want.expr + ".";
      // Two tasks where the scripted teacher answers with the buggy code.
      if ((want.name == std::string("mul") && bug.name == std::string("add")) ||
          (want.name == std::string("min") && bug.name == std::string("max")))
        t.extra["teacher_fault"] = true;
      set.add(std::move(t));
    }
  }
  return set;
}

std::string default_toyexpr_path() {
  if (const char* env = std::getenv("REPAIRLAB_TOYEXPR"); env && *env) return env;
#ifdef REPAIRLAB_TOYEXPR_PATH
  return REPAIRLAB_TOYEXPR_PATH;
#else
  return "toyexpr";
#endif
}

VerifierConfig toy_verifier_config(const std::string& toyexpr_path) {
  VerifierConfig c;
  c.run_commands["toyexpr"] = "{toyexpr} {file}";
  c.compile_commands["toyexpr"] = "{toyexpr} --check {file}";
  c.extensions["toyexpr"] = "txt";
  c.variables["toyexpr"] = toyexpr_path;
  c.allowlist = {"toyexpr"};
  return c;
}

}  // namespace repairlab
