#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "repairlab/config.hpp"
#include "repairlab/pipeline.hpp"
#include "repairlab/toy_family.hpp"

using namespace repairlab;

namespace {

void print_nested(const std::exception& e, int depth) {
  try {
    std::rethrow_if_nested(e);
  } catch (const std::exception& inner) {
    std::cerr << std::string(2 * depth, ' ') << "caused by: " << inner.what() << "\n";
    print_nested(inner, depth + 1);
  }
}

int run_stages(const std::string& config_path, const std::optional<std::string>& mode,
               const std::optional<std::uint64_t>& seed, const std::vector<Stage>& stages) {
  std::string current = stages.empty() ? "run" : stage_name(stages.front());
  try {
    PipelineConfig cfg = load_config(config_path);
    if (mode) cfg.mode = parse_cache_mode(*mode);
    if (seed) cfg.set_seed(*seed);
    Pipeline pipeline(std::move(cfg));
    for (Stage s : stages) {
      current = stage_name(s);
      const bool ran = pipeline.run_stage(s);
      std::cerr << "[" << current << "] " << (ran ? "done" : "up to date") << "\n";
    }
    if (pipeline.teacher_calls() > 0) std::cerr << "teacher calls: " << pipeline.teacher_calls() << "\n";
    return 0;
  } catch (const StageFailure& e) {
    std::cerr << "repairlab: stage " << stage_name(e.stage()) << " failed\n  " << e.what() << "\n";
    print_nested(e, 1);
    return 1;
  } catch (const OrderingError& e) {
    std::cerr << "repairlab: stage " << current << " cannot start: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "repairlab: stage " << current << " failed: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"repairlab: teacher-guided program repair training pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> only_stage;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "pipeline configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--mode", mode, "teacher cache mode")->check(CLI::IsMember({"record", "replay", "live"}));
    sub->add_option("--seed", seed, "global seed");
  };

  std::vector<std::pair<CLI::App*, Stage>> stage_cmds;
  for (Stage s : stage_order()) {
    CLI::App* sub = app.add_subcommand(stage_name(s), "run the " + stage_name(s) + " stage");
    add_common(sub);
    stage_cmds.emplace_back(sub, s);
  }
  CLI::App* run = app.add_subcommand("run", "run every stage in order (or one with --stage)");
  add_common(run);
  run->add_option("--stage", only_stage, "run only this stage");

  std::string toy_out;
  CLI::App* toy = app.add_subcommand("make-toy-tasks", "write the bundled toy task family");
  toy->add_option("--out", toy_out, "output JSONL path")->required();

  CLI11_PARSE(app, argc, argv);

  if (toy->parsed()) {
    try {
      write_tasks(toy_out, make_toy_tasks());
      return 0;
    } catch (const std::exception& e) {
      std::cerr << "repairlab: " << e.what() << "\n";
      return 2;
    }
  }
  for (const auto& [sub, s] : stage_cmds)
    if (sub->parsed()) return run_stages(config_path, mode, seed, {s});
  if (only_stage) {
    try {
      return run_stages(config_path, mode, seed, {parse_stage(*only_stage)});
    } catch (const std::exception& e) {
      std::cerr << "repairlab: " << e.what() << "\n";
      return 2;
    }
  }
  return run_stages(config_path, mode, seed, stage_order());
}
