#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "repairlab/corpus.hpp"
#include "repairlab/process.hpp"

namespace repairlab {

struct TestOutcome {
  std::size_t test_index = 0;
  bool pass = false;
  ExecutionResult result;
};

struct VerificationReport {
  std::string task_id;
  std::string candidate_digest;
  std::vector<TestOutcome> per_test;
  bool valid = false;
};

Json to_json(const VerificationReport& r);

struct VerifierConfig {
  // Per language tag: how io_pair tests run the candidate, e.g. "python3 {file}".
  std::map<std::string, std::string> run_commands;
  // Per language tag: syntax/compile check, e.g. "toyexpr --check {file}".
  std::map<std::string, std::string> compile_commands;
  // Per language tag: file extension for the materialized candidate.
  std::map<std::string, std::string> extensions;
  // Extra placeholders available to every command template.
  std::map<std::string, std::string> variables;
  // When non-empty, argv[0] of every command must be one of these (basename or full path).
  std::vector<std::string> allowlist;
  double default_timeout_seconds = 10.0;
  double compile_timeout_seconds = 10.0;
  unsigned parallelism = 0;  // 0: hardware concurrency
};

class Verifier {
 public:
  explicit Verifier(VerifierConfig config = {});

  const VerifierConfig& config() const { return config_; }

  // Materializes the candidate plus the task's context files in a fresh
  // directory, runs every test, removes the directory. Valid iff every test passes.
  VerificationReport validate(const RepairTask& task, const std::string& candidate) const;

  // Validates many (task, candidate) pairs on up to `parallelism` threads; output order matches input.
  std::vector<VerificationReport> validate_many(
      const std::vector<std::pair<const RepairTask*, std::string>>& jobs) const;

  // Keeps the examples whose solution validates, with verified set to true.
  std::vector<ReasoningExample> filter_verified(const std::vector<ReasoningExample>& examples,
                                                const TaskSet& tasks) const;

  // True iff the configured compile command exits 0 within the timeout.
  bool compile_check(const std::string& candidate, const std::string& language_tag,
                     ExecutionResult* result_out = nullptr) const;

  // Explicit-template variant; compile_command must contain {file}.
  bool compile_check(const std::string& candidate, const std::string& language_tag,
                     const std::string& compile_command, ExecutionResult* result_out = nullptr) const;

  // Fraction of tests passed; the reward signal for toy RL runs.
  double pass_fraction(const RepairTask& task, const std::string& candidate) const;

  std::string candidate_file_name(const std::string& language_tag) const;

 private:
  bool allowed(const std::string& program) const;
  TestOutcome run_test(const RepairTask& task, std::size_t index, const std::filesystem::path& dir,
                       const std::string& file_name) const;

  VerifierConfig config_;
};

// Trailing whitespace on each line and at the end of the text is ignored.
bool outputs_match(const std::string& actual, const std::string& expected);

}  // namespace repairlab
