#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "repairlab/jsonl.hpp"
#include "repairlab/rng.hpp"

namespace repairlab {

enum class TestKind { command, io_pair };

struct TestSpec {
  TestKind kind = TestKind::command;
  std::optional<std::string> command;
  std::optional<std::string> stdin_text;
  std::optional<std::string> expected_stdout;
  double timeout_seconds = 10.0;
  Json extra = Json::object();

  void check() const;
};

struct NamedFile {
  std::string name;
  std::string text;
  bool operator==(const NamedFile&) const = default;
};

struct RepairTask {
  std::string id;
  std::string source_benchmark;
  std::string prompt;
  std::string buggy_code;
  std::vector<NamedFile> context;
  std::vector<TestSpec> tests;
  std::optional<std::string> ground_truth;
  std::string language_tag;
  Json extra = Json::object();
};

struct ReasoningExample {
  std::string task_id;
  std::string reasoning;
  std::string solution;
  std::string teacher_model;
  bool verified = false;
  Json extra = Json::object();
};

struct PreferencePair {
  std::string task_id;
  std::string candidate_a;
  std::string candidate_b;
  int label = 1;  // 1: a preferred, 0: b preferred
  std::string judge_model;
  Json extra = Json::object();

  void check() const;
};

struct SplitSpec {
  double train_fraction = 0.70;
  double val_fraction = 0.15;
  double test_fraction = 0.15;
  std::uint64_t seed = kDefaultSeed;

  void check() const;
};

// Ordered collection of tasks with unique ids.
class TaskSet {
 public:
  TaskSet() = default;

  void add(RepairTask task);  // ValidationError on duplicate id
  const RepairTask* find(std::string_view id) const;
  const RepairTask& at(std::string_view id) const;  // ValidationError when absent
  bool contains(std::string_view id) const { return find(id) != nullptr; }

  std::size_t size() const { return tasks_.size(); }
  bool empty() const { return tasks_.empty(); }
  const RepairTask& operator[](std::size_t i) const { return tasks_[i]; }
  auto begin() const { return tasks_.begin(); }
  auto end() const { return tasks_.end(); }
  const std::vector<RepairTask>& tasks() const { return tasks_; }

 private:
  std::vector<RepairTask> tasks_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct DatasetSplit {
  TaskSet train;
  TaskSet val;
  TaskSet test;
};

Json to_json(const TestSpec& t);
Json to_json(const RepairTask& t);
Json to_json(const ReasoningExample& e);
Json to_json(const PreferencePair& p);
TestSpec test_spec_from_json(const Json& j);
RepairTask task_from_json(const Json& j);
ReasoningExample example_from_json(const Json& j);
PreferencePair pair_from_json(const Json& j);

TaskSet load_tasks(const std::filesystem::path& path);
void write_tasks(const std::filesystem::path& path, const TaskSet& tasks);
std::vector<ReasoningExample> load_traces(const std::filesystem::path& path);
void write_traces(const std::filesystem::path& path, const std::vector<ReasoningExample>& examples);
std::vector<PreferencePair> load_prefs(const std::filesystem::path& path);
void write_prefs(const std::filesystem::path& path, const std::vector<PreferencePair>& pairs);

// Seeded partition. val/test sizes are round(N * fraction); train takes the rest.
DatasetSplit split_dataset(const TaskSet& tasks, const SplitSpec& spec);

using StratumKey = std::function<std::string(const ReasoningExample&)>;

// Stratum key that groups examples by the source_benchmark of their task.
StratumKey by_source_benchmark(const TaskSet& tasks);

// Keeps ceil(fraction * N) examples with per-stratum counts allocated by
// largest remainder. Survivors keep their input order.
std::vector<ReasoningExample> cap_dataset(const std::vector<ReasoningExample>& examples, double fraction,
                                          const StratumKey& stratum, std::uint64_t seed = kDefaultSeed);

}  // namespace repairlab
