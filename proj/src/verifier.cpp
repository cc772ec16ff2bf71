#include "repairlab/verifier.hpp"

#include <stdlib.h>

#include <algorithm>
#include <atomic>
#include <mutex>
#include <fstream>
#include <thread>

#include "repairlab/errors.hpp"

namespace repairlab {

namespace {

// Owns a mkdtemp directory; removed on destruction.
class ScratchDir {
 public:
  ScratchDir() {
    std::string pattern = (std::filesystem::temp_directory_path() / "repairlab-XXXXXX").string();
    if (::mkdtemp(pattern.data()) == nullptr) throw SandboxError("cannot create scratch directory");
    path_ = pattern;
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

  void write(const std::string& relative, const std::string& text) const {
    const auto target = (path_ / relative).lexically_normal();
    if (relative.empty() || std::filesystem::path(relative).is_absolute() ||
        !target.string().starts_with(path_.string()))
      throw SandboxError("file name escapes the sandbox: " + relative);
    std::filesystem::create_directories(target.parent_path());
    std::ofstream out(target, std::ios::binary);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw SandboxError("cannot materialize " + relative);
  }

 private:
  std::filesystem::path path_;
};

std::string rstrip_lines(const std::string& s) {
  std::string out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto nl = s.find('\n', pos);
    if (nl == std::string::npos) nl = s.size();
    std::string line = s.substr(pos, nl - pos);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    out += line;
    out += '\n';
    pos = nl + 1;
  }
  while (!out.empty() && std::isspace(static_cast<unsigned char>(out.back()))) out.pop_back();
  return out;
}

}  // namespace

bool outputs_match(const std::string& actual, const std::string& expected) {
  return rstrip_lines(actual) == rstrip_lines(expected);
}

Json to_json(const VerificationReport& r) {
  Json tests = Json::array();
  for (const auto& t : r.per_test) {
    tests.push_back({{"test_index", t.test_index},
                     {"pass", t.pass},
                     {"exit_code", t.result.exit_code},
                     {"stdout", t.result.stdout_text},
                     {"stderr", t.result.stderr_text},
                     {"wall_time_ms", t.result.wall_time_ms},
                     {"timed_out", t.result.timed_out}});
  }
  return {{"task_id", r.task_id}, {"candidate_digest", r.candidate_digest}, {"per_test", tests}, {"valid", r.valid}};
}

Verifier::Verifier(VerifierConfig config) : config_(std::move(config)) {}

std::string Verifier::candidate_file_name(const std::string& language_tag) const {
  auto it = config_.extensions.find(language_tag);
  const std::string ext = it != config_.extensions.end() ? it->second : (language_tag.empty() ? "txt" : language_tag);
  return "solution." + ext;
}

bool Verifier::allowed(const std::string& program) const {
  if (config_.allowlist.empty()) return true;
  const std::string base = std::filesystem::path(program).filename().string();
  return std::any_of(config_.allowlist.begin(), config_.allowlist.end(),
                     [&](const std::string& a) { return a == program || a == base; });
}

TestOutcome Verifier::run_test(const RepairTask& task, std::size_t index, const std::filesystem::path& dir,
                               const std::string& file_name) const {
  const TestSpec& test = task.tests[index];
  std::map<std::string, std::string> vars = config_.variables;
  vars["file"] = (dir / file_name).string();
  vars["dir"] = dir.string();

  std::string command_template;
  if (test.command) {
    command_template = *test.command;
  } else {
    auto it = config_.run_commands.find(task.language_tag);
    if (it == config_.run_commands.end())
      throw ConfigError("no run command configured for language '" + task.language_tag + "'");
    command_template = it->second;
  }
  ProcessSpec spec;
  spec.argv = expand_command(command_template, vars);
  if (spec.argv.empty()) throw ConfigError("empty test command for task " + task.id);
  if (!allowed(spec.argv[0])) throw SandboxError("command not in allowlist: " + spec.argv[0]);
  spec.working_dir = dir;
  spec.stdin_text = test.stdin_text.value_or("");
  spec.timeout_seconds = test.timeout_seconds > 0 ? test.timeout_seconds : config_.default_timeout_seconds;

  TestOutcome outcome;
  outcome.test_index = index;
  outcome.result = run_process(spec);
  outcome.pass = !outcome.result.timed_out && outcome.result.exit_code == 0;
  if (outcome.pass && test.expected_stdout) outcome.pass = outputs_match(outcome.result.stdout_text, *test.expected_stdout);
  return outcome;
}

VerificationReport Verifier::validate(const RepairTask& task, const std::string& candidate) const {
  if (task.tests.empty()) throw ValidationError("task " + task.id + " has no tests");
  ScratchDir dir;
  const std::string file_name = candidate_file_name(task.language_tag);
  for (const auto& f : task.context) dir.write(f.name, f.text);
  dir.write(file_name, candidate);

  VerificationReport report;
  report.task_id = task.id;
  report.candidate_digest = sha256_hex(candidate);
  report.valid = true;
  for (std::size_t i = 0; i < task.tests.size(); ++i) {
    report.per_test.push_back(run_test(task, i, dir.path(), file_name));
    report.valid = report.valid && report.per_test.back().pass;
  }
  return report;
}

std::vector<VerificationReport> Verifier::validate_many(
    const std::vector<std::pair<const RepairTask*, std::string>>& jobs) const {
  std::vector<VerificationReport> out(jobs.size());
  unsigned workers = config_.parallelism ? config_.parallelism : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, jobs.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) out[i] = validate(*jobs[i].first, jobs[i].second);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < jobs.size();) {
        try {
          out[i] = validate(*jobs[i].first, jobs[i].second);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::vector<ReasoningExample> Verifier::filter_verified(const std::vector<ReasoningExample>& examples,
                                                        const TaskSet& tasks) const {
  std::vector<std::pair<const RepairTask*, std::string>> jobs;
  for (const auto& e : examples) jobs.emplace_back(&tasks.at(e.task_id), e.solution);
  const auto reports = validate_many(jobs);
  std::vector<ReasoningExample> kept;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (!reports[i].valid) continue;
    kept.push_back(examples[i]);
    kept.back().verified = true;
  }
  return kept;
}

bool Verifier::compile_check(const std::string& candidate, const std::string& language_tag,
                             ExecutionResult* result_out) const {
  auto it = config_.compile_commands.find(language_tag);
  if (it == config_.compile_commands.end())
    throw ConfigError("no compile command configured for language '" + language_tag + "'");
  return compile_check(candidate, language_tag, it->second, result_out);
}

bool Verifier::compile_check(const std::string& candidate, const std::string& language_tag,
                             const std::string& compile_command, ExecutionResult* result_out) const {
  if (compile_command.find("{file}") == std::string::npos)
    throw ConfigError("compile command template lacks a {file} placeholder");
  ScratchDir dir;
  const std::string file_name = candidate_file_name(language_tag);
  dir.write(file_name, candidate);
  std::map<std::string, std::string> vars = config_.variables;
  vars["file"] = (dir.path() / file_name).string();
  vars["dir"] = dir.path().string();
  ProcessSpec spec;
  spec.argv = expand_command(compile_command, vars);
  if (spec.argv.empty() || !allowed(spec.argv[0]))
    throw SandboxError("compile command not permitted: " + compile_command);
  spec.working_dir = dir.path();
  spec.timeout_seconds = config_.compile_timeout_seconds;
  ExecutionResult r = run_process(spec);
  const bool ok = !r.timed_out && r.exit_code == 0;
  if (result_out) *result_out = std::move(r);
  return ok;
}

double Verifier::pass_fraction(const RepairTask& task, const std::string& candidate) const {
  const auto report = validate(task, candidate);
  const auto passed = std::count_if(report.per_test.begin(), report.per_test.end(),
                                    [](const TestOutcome& t) { return t.pass; });
  return static_cast<double>(passed) / static_cast<double>(report.per_test.size());
}

}  // namespace repairlab
