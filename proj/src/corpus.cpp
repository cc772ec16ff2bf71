#include "repairlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "repairlab/errors.hpp"

namespace repairlab {

namespace {

template <typename T>
T required(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("field '") + key + "': " + e.what());
  }
}

template <typename T>
std::optional<T> optional_field(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  try {
    return it->get<T>();
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("field '") + key + "': " + e.what());
  }
}

Json leftovers(const Json& j, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw ValidationError("record is not a JSON object");
  Json extra = j;
  for (const char* k : known) extra.erase(k);
  return extra;
}

void put_optional(Json& j, const char* key, const std::optional<std::string>& v) {
  if (v) j[key] = *v;
}

}  // namespace

void TestSpec::check() const {
  if (!(timeout_seconds > 0.0)) throw ValidationError("test timeout_seconds must be positive");
  if (kind == TestKind::command && !command) throw ValidationError("command test requires 'command'");
  if (kind == TestKind::io_pair && (!stdin_text || !expected_stdout))
    throw ValidationError("io_pair test requires 'stdin' and 'expected_stdout'");
}

void PreferencePair::check() const {
  if (candidate_a == candidate_b) throw ValidationError("preference pair compares identical candidates");
  if (label != 0 && label != 1) throw ValidationError("preference label must be 0 or 1");
}

void SplitSpec::check() const {
  for (double f : {train_fraction, val_fraction, test_fraction})
    if (f < 0.0 || f > 1.0) throw ValidationError("split fractions must lie in [0, 1]");
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
    throw ValidationError("split fractions must sum to 1");
}

void TaskSet::add(RepairTask task) {
  if (index_.contains(task.id)) throw ValidationError("duplicate task id '" + task.id + "'");
  index_.emplace(task.id, tasks_.size());
  tasks_.push_back(std::move(task));
}

const RepairTask* TaskSet::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &tasks_[it->second];
}

const RepairTask& TaskSet::at(std::string_view id) const {
  if (const auto* t = find(id)) return *t;
  throw ValidationError("unknown task id '" + std::string(id) + "'");
}

Json to_json(const TestSpec& t) {
  Json j = t.extra;
  j["kind"] = t.kind == TestKind::command ? "command" : "io_pair";
  put_optional(j, "command", t.command);
  put_optional(j, "stdin", t.stdin_text);
  put_optional(j, "expected_stdout", t.expected_stdout);
  j["timeout_seconds"] = t.timeout_seconds;
  return j;
}

TestSpec test_spec_from_json(const Json& j) {
  TestSpec t;
  t.extra = leftovers(j, {"kind", "command", "stdin", "expected_stdout", "timeout_seconds"});
  const auto kind = required<std::string>(j, "kind");
  if (kind == "command") {
    t.kind = TestKind::command;
  } else if (kind == "io_pair") {
    t.kind = TestKind::io_pair;
  } else {
    throw ValidationError("unknown test kind '" + kind + "'");
  }
  t.command = optional_field<std::string>(j, "command");
  t.stdin_text = optional_field<std::string>(j, "stdin");
  t.expected_stdout = optional_field<std::string>(j, "expected_stdout");
  t.timeout_seconds = optional_field<double>(j, "timeout_seconds").value_or(10.0);
  t.check();
  return t;
}

Json to_json(const RepairTask& t) {
  Json j = t.extra;
  j["id"] = t.id;
  j["source_benchmark"] = t.source_benchmark;
  j["prompt"] = t.prompt;
  j["buggy_code"] = t.buggy_code;
  j["context"] = Json::array();
  for (const auto& f : t.context) j["context"].push_back({{"name", f.name}, {"text", f.text}});
  j["tests"] = Json::array();
  for (const auto& test : t.tests) j["tests"].push_back(to_json(test));
  put_optional(j, "ground_truth", t.ground_truth);
  j["language_tag"] = t.language_tag;
  return j;
}

RepairTask task_from_json(const Json& j) {
  RepairTask t;
  t.extra = leftovers(j, {"id", "source_benchmark", "prompt", "buggy_code", "context", "tests",
                          "ground_truth", "language_tag"});
  t.id = required<std::string>(j, "id");
  if (t.id.empty()) throw ValidationError("task id must be non-empty");
  t.source_benchmark = optional_field<std::string>(j, "source_benchmark").value_or("");
  t.prompt = required<std::string>(j, "prompt");
  t.buggy_code = required<std::string>(j, "buggy_code");
  if (auto it = j.find("context"); it != j.end() && !it->is_null()) {
    for (const auto& f : *it)
      t.context.push_back({required<std::string>(f, "name"), required<std::string>(f, "text")});
  }
  if (auto it = j.find("tests"); it != j.end() && !it->is_null()) {
    for (const auto& test : *it) t.tests.push_back(test_spec_from_json(test));
  }
  t.ground_truth = optional_field<std::string>(j, "ground_truth");
  t.language_tag = optional_field<std::string>(j, "language_tag").value_or("");
  return t;
}

Json to_json(const ReasoningExample& e) {
  Json j = e.extra;
  j["task_id"] = e.task_id;
  j["reasoning"] = e.reasoning;
  j["solution"] = e.solution;
  j["teacher_model"] = e.teacher_model;
  j["verified"] = e.verified;
  return j;
}

ReasoningExample example_from_json(const Json& j) {
  ReasoningExample e;
  e.extra = leftovers(j, {"task_id", "reasoning", "solution", "teacher_model", "verified"});
  e.task_id = required<std::string>(j, "task_id");
  e.reasoning = required<std::string>(j, "reasoning");
  e.solution = required<std::string>(j, "solution");
  e.teacher_model = optional_field<std::string>(j, "teacher_model").value_or("");
  e.verified = optional_field<bool>(j, "verified").value_or(false);
  return e;
}

Json to_json(const PreferencePair& p) {
  Json j = p.extra;
  j["task_id"] = p.task_id;
  j["candidate_a"] = p.candidate_a;
  j["candidate_b"] = p.candidate_b;
  j["label"] = p.label;
  j["judge_model"] = p.judge_model;
  return j;
}

PreferencePair pair_from_json(const Json& j) {
  PreferencePair p;
  p.extra = leftovers(j, {"task_id", "candidate_a", "candidate_b", "label", "judge_model"});
  p.task_id = required<std::string>(j, "task_id");
  p.candidate_a = required<std::string>(j, "candidate_a");
  p.candidate_b = required<std::string>(j, "candidate_b");
  const double label = required<double>(j, "label");
  if (label != 0.0 && label != 1.0) throw ValidationError("preference label must be 0 or 1");
  p.label = static_cast<int>(label);
  p.judge_model = optional_field<std::string>(j, "judge_model").value_or("");
  p.check();
  return p;
}

TaskSet load_tasks(const std::filesystem::path& path) {
  TaskSet set;
  read_jsonl(path, [&](const Json& j, std::size_t line) {
    RepairTask task;
    try {
      task = task_from_json(j);
    } catch (const ValidationError& e) {
      throw LineParseError(line, e.what());
    }
    if (set.contains(task.id))
      throw ValidationError("line " + std::to_string(line) + ": duplicate task id '" + task.id + "'");
    set.add(std::move(task));
  });
  return set;
}

void write_tasks(const std::filesystem::path& path, const TaskSet& tasks) {
  std::vector<Json> rows;
  for (const auto& t : tasks) rows.push_back(to_json(t));
  write_jsonl(path, rows);
}

std::vector<ReasoningExample> load_traces(const std::filesystem::path& path) {
  std::vector<ReasoningExample> out;
  read_jsonl(path, [&](const Json& j, std::size_t line) {
    try {
      out.push_back(example_from_json(j));
    } catch (const ValidationError& e) {
      throw LineParseError(line, e.what());
    }
  });
  return out;
}

void write_traces(const std::filesystem::path& path, const std::vector<ReasoningExample>& examples) {
  std::vector<Json> rows;
  for (const auto& e : examples) rows.push_back(to_json(e));
  write_jsonl(path, rows);
}

std::vector<PreferencePair> load_prefs(const std::filesystem::path& path) {
  std::vector<PreferencePair> out;
  read_jsonl(path, [&](const Json& j, std::size_t line) {
    try {
      out.push_back(pair_from_json(j));
    } catch (const ValidationError& e) {
      throw LineParseError(line, e.what());
    }
  });
  return out;
}

void write_prefs(const std::filesystem::path& path, const std::vector<PreferencePair>& pairs) {
  std::vector<Json> rows;
  for (const auto& p : pairs) rows.push_back(to_json(p));
  write_jsonl(path, rows);
}

DatasetSplit split_dataset(const TaskSet& tasks, const SplitSpec& spec) {
  spec.check();
  const std::size_t n = tasks.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(spec.seed);
  rng.shuffle(std::span(order));

  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.val_fraction));
  auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.test_fraction));
  n_test = std::min(n_test, n - std::min(n_val, n));

  DatasetSplit out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& task = tasks[order[i]];
    if (i < n_val) {
      out.val.add(task);
    } else if (i < n_val + n_test) {
      out.test.add(task);
    } else {
      out.train.add(task);
    }
  }
  return out;
}

StratumKey by_source_benchmark(const TaskSet& tasks) {
  return [&tasks](const ReasoningExample& e) {
    const auto* t = tasks.find(e.task_id);
    return t ? t->source_benchmark : std::string();
  };
}

std::vector<ReasoningExample> cap_dataset(const std::vector<ReasoningExample>& examples, double fraction,
                                          const StratumKey& stratum, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("cap fraction must lie in (0, 1]");
  const std::size_t n = examples.size();
  if (fraction == 1.0 || n == 0) return examples;

  const auto target = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));

  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[stratum ? stratum(examples[i]) : std::string()].push_back(i);

  // Largest-remainder allocation of `target` across strata.
  struct Quota {
    std::string key;
    std::size_t take;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t allocated = 0;
  for (const auto& [key, members] : groups) {
    const double exact = static_cast<double>(target) * static_cast<double>(members.size()) / static_cast<double>(n);
    const auto base = static_cast<std::size_t>(std::floor(exact + 1e-9));
    quotas.push_back({key, base, exact - static_cast<double>(base)});
    allocated += base;
  }
  std::vector<std::size_t> by_remainder(quotas.size());
  std::iota(by_remainder.begin(), by_remainder.end(), 0);
  std::stable_sort(by_remainder.begin(), by_remainder.end(),
                   [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
  for (std::size_t k = 0; allocated < target && k < by_remainder.size(); ++k) {
    auto& q = quotas[by_remainder[k]];
    if (q.take < groups[q.key].size()) {
      ++q.take;
      ++allocated;
    }
  }

  Rng rng(seed);
  std::vector<char> keep(n, 0);
  for (const auto& q : quotas) {
    auto members = groups[q.key];
    rng.shuffle(std::span(members));
    for (std::size_t k = 0; k < q.take; ++k) keep[members[k]] = 1;
  }
  std::vector<ReasoningExample> out;
  out.reserve(target);
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) out.push_back(examples[i]);
  return out;
}

}  // namespace repairlab
