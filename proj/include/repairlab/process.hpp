#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace repairlab {

struct ExecutionResult {
  // Reported instead of a real status when the deadline fired. Real statuses
  // are 0..255 for normal exits and 128+signal for signalled children.
  static constexpr int kTimedOutExitCode = -1;

  int exit_code = 0;
  std::string stdout_text;
  std::string stderr_text;
  double wall_time_ms = 0.0;
  bool timed_out = false;
};

struct ProcessSpec {
  std::vector<std::string> argv;
  std::filesystem::path working_dir;
  std::string stdin_text;
  double timeout_seconds = 10.0;
};

// Runs argv[0] (PATH lookup) without a shell in its own process group, feeding
// stdin and collecting both output streams. The whole group is killed on timeout.
// SandboxError when the process cannot be started at all.
ExecutionResult run_process(const ProcessSpec& spec);

// Whitespace tokenizer with single/double quote grouping. Each token has
// `{name}` placeholders replaced from vars; unknown placeholders are kept.
std::vector<std::string> expand_command(const std::string& command_template,
                                        const std::map<std::string, std::string>& vars);

}  // namespace repairlab
