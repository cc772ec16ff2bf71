#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "repairlab/config.hpp"
#include "repairlab/errors.hpp"
#include "repairlab/metrics.hpp"
#include "repairlab/teacher.hpp"

namespace repairlab {

enum class Stage { collect, filter, sft, gen_candidates, judge, train_rm, ppo, eval };

const std::vector<Stage>& stage_order();
std::string stage_name(Stage s);
Stage parse_stage(const std::string& name);

enum class StageStatus { pending, done, failed };
std::string to_string(StageStatus s);

struct StageRecord {
  StageStatus status = StageStatus::pending;
  std::string input_digest;
  std::string output_digest;
  std::string started_at;
  std::string finished_at;
  std::string error;
};

struct RunManifest {
  std::string run_id;
  std::string config_digest;
  std::map<std::string, StageRecord> stages;

  Json to_json() const;
  static RunManifest from_json(const Json& j);
  static RunManifest fresh(const std::string& config_digest, std::uint64_t seed);
};

// Thrown (with the module error nested) when a stage fails.
class StageFailure : public Error {
 public:
  StageFailure(Stage stage, const std::string& cause)
      : Error("stage " + stage_name(stage) + " failed: " + cause), stage_(stage) {}
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

// Extracts the program text from a model or teacher response: the last fenced
// block when there is one, otherwise the trimmed text.
std::string extract_candidate_code(const std::string& text);

class Pipeline {
 public:
  // A null backend is built from the config (scripted teacher or HTTP endpoint).
  explicit Pipeline(PipelineConfig config, std::shared_ptr<TeacherBackend> backend = nullptr);

  // Runs one stage behind the ordering gate. Returns false when the stage was
  // already done under the same config digest and its outputs are intact.
  bool run_stage(Stage s);
  void run_all();

  const PipelineConfig& config() const { return config_; }
  const RunManifest& manifest() const { return manifest_; }
  std::filesystem::path artifact(const std::string& name) const { return config_.output_dir / name; }
  std::uint64_t teacher_calls() const;
  TokenUsage teacher_usage() const;

  static std::vector<std::string> stage_outputs(Stage s);

 private:
  void stage_collect();
  void stage_filter();
  void stage_sft();
  void stage_gen_candidates();
  void stage_judge();
  void stage_train_rm();
  void stage_ppo();
  void stage_eval();

  TeacherClient& client();
  const TaskSet& tasks();
  TaskSet split_tasks(const std::string& split_name);
  std::string outputs_digest(Stage s) const;
  std::string inputs_digest(Stage s) const;
  void save_manifest() const;

  PipelineConfig config_;
  std::shared_ptr<TeacherBackend> backend_;
  std::unique_ptr<TeacherClient> client_;
  std::optional<TaskSet> tasks_;
  RunManifest manifest_;
};

}  // namespace repairlab
