#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "repairlab/corpus.hpp"
#include "repairlab/policy.hpp"
#include "repairlab/reward.hpp"
#include "repairlab/rllf.hpp"
#include "repairlab/sft.hpp"
#include "repairlab/teacher.hpp"
#include "repairlab/verifier.hpp"

namespace repairlab {

struct TeacherSettings {
  std::string backend = "scripted";  // scripted | http
  std::string endpoint;
  std::string model_name = "teacher";
  double trace_temperature = 0.0;
  double judge_temperature = 0.2;
  int max_tokens = 1024;
  int max_in_flight = 4;
  int retry_attempts = 3;
  int retry_backoff_ms = 1000;
  std::string judge_protocol = "rank";  // rank | pairwise
};

struct CandidateSettings {
  int per_task = 3;
  double temperature = 0.8;
  int max_len = 128;
  std::string split = "val";  // which task split the preference data is drawn from
};

struct EvalSettings {
  int samples_per_task = 5;
  double temperature = 0.2;
  int max_len = 128;
  int pass_k = 1;
  std::string split = "test";
  bool include_teacher = true;
};

struct PipelineConfig {
  std::filesystem::path tasks_path;
  std::filesystem::path cache_dir;
  std::filesystem::path output_dir;
  CacheMode mode = CacheMode::record;
  std::uint64_t seed = kDefaultSeed;

  ModelShape shape;
  AdapterSpec adapter;
  double head_init_scale = 1.0;
  SplitSpec split;
  double cap_fraction = 0.2;
  SftConfig sft;
  RmConfig rm;
  PpoConfig ppo;
  std::string ppo_reward = "reward_model";  // reward_model | verifier
  TeacherSettings teacher;
  CandidateSettings candidates;
  EvalSettings eval;
  VerifierConfig verifier;

  // Every component seed follows the global one.
  void set_seed(std::uint64_t s);
  void check() const;
  // Everything that influences outputs; the cache mode is excluded.
  Json to_json() const;
  std::string digest() const;
};

// Relative paths resolve against base_dir. Unknown keys are a ConfigError.
PipelineConfig config_from_json(const Json& j, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);

}  // namespace repairlab
