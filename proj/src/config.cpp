#include "repairlab/config.hpp"

#include <set>

#include "repairlab/errors.hpp"
#include "repairlab/toy_family.hpp"

namespace repairlab {

namespace {

void only_keys(const Json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError("section '" + section + "' must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!allowed.contains(k)) throw ConfigError("unknown key '" + k + "' in section '" + section + "'");
}

template <class T>
void get(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

Json verifier_json(const VerifierConfig& v) {
  // The interpreter location is machine-specific and left out of the digest.
  auto vars = v.variables;
  vars.erase("toyexpr");
  return {{"run_commands", v.run_commands},
          {"compile_commands", v.compile_commands},
          {"extensions", v.extensions},
          {"variables", vars},
          {"allowlist", v.allowlist},
          {"default_timeout_seconds", v.default_timeout_seconds},
          {"compile_timeout_seconds", v.compile_timeout_seconds}};
}

}  // namespace

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  split.seed = s;
  sft.seed = s;
  rm.seed = s;
  ppo.seed = s;
}

void PipelineConfig::check() const {
  if (tasks_path.empty()) throw ConfigError("paths.tasks is required");
  if (output_dir.empty()) throw ConfigError("paths.output is required");
  split.check();
  sft.check();
  rm.check();
  ppo.check();
  if (!(cap_fraction > 0.0 && cap_fraction <= 1.0)) throw ConfigError("filter.cap_fraction must lie in (0, 1]");
  if (ppo_reward != "reward_model" && ppo_reward != "verifier")
    throw ConfigError("ppo.reward must be reward_model or verifier");
  if (teacher.backend != "scripted" && teacher.backend != "http")
    throw ConfigError("teacher.backend must be scripted or http");
  if (teacher.backend == "http" && teacher.endpoint.empty()) throw ConfigError("teacher.endpoint is required for http");
  if (teacher.judge_protocol != "rank" && teacher.judge_protocol != "pairwise")
    throw ConfigError("teacher.judge_protocol must be rank or pairwise");
  for (const auto& s : {candidates.split, eval.split})
    if (s != "train" && s != "val" && s != "test") throw ConfigError("unknown split name '" + s + "'");
  if (candidates.per_task < 2) throw ConfigError("candidates.per_task must be at least 2");
  if (eval.samples_per_task < 1 || eval.pass_k < 1 || eval.pass_k > eval.samples_per_task)
    throw ConfigError("eval.pass_k must lie in [1, samples_per_task]");
  if (!(eval.temperature > 0.0) || !(candidates.temperature > 0.0)) throw ConfigError("temperatures must be > 0");
}

Json PipelineConfig::to_json() const {
  Json j;
  j["paths"] = {{"tasks", tasks_path.string()}};
  j["seed"] = seed;
  j["model"] = {{"shape", shape.to_json()}, {"adapter", adapter.to_json()}, {"head_init_scale", head_init_scale}};
  j["split"] = {{"train", split.train_fraction}, {"val", split.val_fraction}, {"test", split.test_fraction}};
  j["filter"] = {{"cap_fraction", cap_fraction}};
  j["sft"] = {{"learning_rate", sft.learning_rate}, {"weight_decay", sft.weight_decay},
              {"warmup_steps", sft.warmup_steps},   {"total_steps", sft.total_steps},
              {"micro_batch", sft.micro_batch},     {"grad_accum_steps", sft.grad_accum_steps},
              {"epochs", sft.epochs},               {"mode", to_string(sft.mode)}};
  if (sft.kd) j["sft"]["kd"] = {{"alpha", sft.kd->alpha}, {"temperature", sft.kd->temperature_tau}};
  j["reward"] = {{"learning_rate", rm.learning_rate}, {"epochs", rm.epochs},
                 {"micro_batch", rm.micro_batch},     {"grad_accum_steps", rm.grad_accum_steps},
                 {"weight_decay", rm.weight_decay},   {"heldout_fraction", rm.heldout_fraction}};
  j["ppo"] = {{"beta_kl", ppo.beta_kl},
              {"clip_epsilon", ppo.clip_epsilon},
              {"gamma", ppo.gamma},
              {"lambda_gae", ppo.lambda_gae},
              {"ppo_epochs_per_batch", ppo.ppo_epochs_per_batch},
              {"rollout_temperature", ppo.rollout_temperature},
              {"candidates_per_prompt", ppo.candidates_per_prompt},
              {"value_loss_coefficient", ppo.value_loss_coefficient},
              {"policy_learning_rate", ppo.policy_learning_rate},
              {"value_learning_rate", ppo.value_learning_rate},
              {"rounds", ppo.rounds},
              {"prompts_per_round", ppo.prompts_per_round},
              {"max_response_len", ppo.max_response_len},
              {"kl_ceiling", ppo.kl_ceiling},
              {"normalize_advantages", ppo.normalize_advantages},
              {"kl_mode", to_string(ppo.kl_mode)},
              {"reward", ppo_reward}};
  j["teacher"] = {{"backend", teacher.backend},
                  {"endpoint", teacher.endpoint},
                  {"model_name", teacher.model_name},
                  {"trace_temperature", teacher.trace_temperature},
                  {"judge_temperature", teacher.judge_temperature},
                  {"max_tokens", teacher.max_tokens},
                  {"judge_protocol", teacher.judge_protocol}};
  j["candidates"] = {{"per_task", candidates.per_task},
                     {"temperature", candidates.temperature},
                     {"max_len", candidates.max_len},
                     {"split", candidates.split}};
  j["eval"] = {{"samples_per_task", eval.samples_per_task}, {"temperature", eval.temperature},
               {"max_len", eval.max_len},                   {"pass_k", eval.pass_k},
               {"split", eval.split},                       {"include_teacher", eval.include_teacher}};
  j["verifier"] = verifier_json(verifier);
  return j;
}

std::string PipelineConfig::digest() const { return sha256_hex(dump_json(to_json())); }

PipelineConfig config_from_json(const Json& j, const std::filesystem::path& base_dir) {
  only_keys(j, "root",
            {"paths", "seed", "mode", "model", "split", "filter", "sft", "reward", "ppo", "teacher", "candidates",
             "eval", "verifier", "toy"});
  PipelineConfig c;
  if (j.contains("paths")) {
    const Json& p = j["paths"];
    only_keys(p, "paths", {"tasks", "cache", "output"});
    std::string tasks, cache, output;
    get(p, "tasks", tasks);
    get(p, "cache", cache);
    get(p, "output", output);
    c.tasks_path = resolve(base_dir, tasks);
    c.output_dir = resolve(base_dir, output);
    c.cache_dir = cache.empty() ? c.output_dir / "cache" : resolve(base_dir, cache);
  }
  if (j.contains("mode")) c.mode = parse_cache_mode(j["mode"].get<std::string>());

  if (j.contains("model")) {
    const Json& m = j["model"];
    only_keys(m, "model", {"shape", "adapter", "head_init_scale"});
    if (m.contains("shape")) c.shape = ModelShape::from_json(m["shape"]);
    if (m.contains("adapter")) c.adapter = AdapterSpec::from_json(m["adapter"]);
    get(m, "head_init_scale", c.head_init_scale);
  }
  if (j.contains("split")) {
    only_keys(j["split"], "split", {"train", "val", "test"});
    get(j["split"], "train", c.split.train_fraction);
    get(j["split"], "val", c.split.val_fraction);
    get(j["split"], "test", c.split.test_fraction);
  }
  if (j.contains("filter")) {
    only_keys(j["filter"], "filter", {"cap_fraction"});
    get(j["filter"], "cap_fraction", c.cap_fraction);
  }
  if (j.contains("sft")) {
    const Json& s = j["sft"];
    only_keys(s, "sft",
              {"learning_rate", "weight_decay", "warmup_steps", "total_steps", "micro_batch", "grad_accum_steps",
               "epochs", "mode", "kd"});
    get(s, "learning_rate", c.sft.learning_rate);
    get(s, "weight_decay", c.sft.weight_decay);
    get(s, "warmup_steps", c.sft.warmup_steps);
    get(s, "total_steps", c.sft.total_steps);
    get(s, "micro_batch", c.sft.micro_batch);
    get(s, "grad_accum_steps", c.sft.grad_accum_steps);
    get(s, "epochs", c.sft.epochs);
    if (s.contains("mode")) c.sft.mode = parse_sft_mode(s["mode"].get<std::string>());
    if (s.contains("kd") && !s["kd"].is_null()) {
      only_keys(s["kd"], "sft.kd", {"alpha", "temperature"});
      KdConfig kd;
      get(s["kd"], "alpha", kd.alpha);
      get(s["kd"], "temperature", kd.temperature_tau);
      c.sft.kd = kd;
    }
  }
  if (j.contains("reward")) {
    const Json& r = j["reward"];
    only_keys(r, "reward",
              {"learning_rate", "epochs", "micro_batch", "grad_accum_steps", "weight_decay", "heldout_fraction"});
    get(r, "learning_rate", c.rm.learning_rate);
    get(r, "epochs", c.rm.epochs);
    get(r, "micro_batch", c.rm.micro_batch);
    get(r, "grad_accum_steps", c.rm.grad_accum_steps);
    get(r, "weight_decay", c.rm.weight_decay);
    get(r, "heldout_fraction", c.rm.heldout_fraction);
  }
  if (j.contains("ppo")) {
    const Json& p = j["ppo"];
    only_keys(p, "ppo",
              {"beta_kl", "clip_epsilon", "gamma", "lambda_gae", "ppo_epochs_per_batch", "rollout_temperature",
               "candidates_per_prompt", "value_loss_coefficient", "policy_learning_rate", "value_learning_rate",
               "rounds", "prompts_per_round", "max_response_len", "kl_ceiling", "normalize_advantages", "kl_mode",
               "reward"});
    get(p, "beta_kl", c.ppo.beta_kl);
    get(p, "clip_epsilon", c.ppo.clip_epsilon);
    get(p, "gamma", c.ppo.gamma);
    get(p, "lambda_gae", c.ppo.lambda_gae);
    get(p, "ppo_epochs_per_batch", c.ppo.ppo_epochs_per_batch);
    get(p, "rollout_temperature", c.ppo.rollout_temperature);
    get(p, "candidates_per_prompt", c.ppo.candidates_per_prompt);
    get(p, "value_loss_coefficient", c.ppo.value_loss_coefficient);
    get(p, "policy_learning_rate", c.ppo.policy_learning_rate);
    get(p, "value_learning_rate", c.ppo.value_learning_rate);
    get(p, "rounds", c.ppo.rounds);
    get(p, "prompts_per_round", c.ppo.prompts_per_round);
    get(p, "max_response_len", c.ppo.max_response_len);
    get(p, "kl_ceiling", c.ppo.kl_ceiling);
    get(p, "normalize_advantages", c.ppo.normalize_advantages);
    if (p.contains("kl_mode")) c.ppo.kl_mode = parse_kl_mode(p["kl_mode"].get<std::string>());
    get(p, "reward", c.ppo_reward);
  }
  if (j.contains("teacher")) {
    const Json& t = j["teacher"];
    only_keys(t, "teacher",
              {"backend", "endpoint", "model_name", "trace_temperature", "judge_temperature", "max_tokens",
               "max_in_flight", "retry_attempts", "retry_backoff_ms", "judge_protocol"});
    get(t, "backend", c.teacher.backend);
    get(t, "endpoint", c.teacher.endpoint);
    get(t, "model_name", c.teacher.model_name);
    get(t, "trace_temperature", c.teacher.trace_temperature);
    get(t, "judge_temperature", c.teacher.judge_temperature);
    get(t, "max_tokens", c.teacher.max_tokens);
    get(t, "max_in_flight", c.teacher.max_in_flight);
    get(t, "retry_attempts", c.teacher.retry_attempts);
    get(t, "retry_backoff_ms", c.teacher.retry_backoff_ms);
    get(t, "judge_protocol", c.teacher.judge_protocol);
  }
  if (j.contains("candidates")) {
    const Json& k = j["candidates"];
    only_keys(k, "candidates", {"per_task", "temperature", "max_len", "split"});
    get(k, "per_task", c.candidates.per_task);
    get(k, "temperature", c.candidates.temperature);
    get(k, "max_len", c.candidates.max_len);
    get(k, "split", c.candidates.split);
  }
  if (j.contains("eval")) {
    const Json& e = j["eval"];
    only_keys(e, "eval", {"samples_per_task", "temperature", "max_len", "pass_k", "split", "include_teacher"});
    get(e, "samples_per_task", c.eval.samples_per_task);
    get(e, "temperature", c.eval.temperature);
    get(e, "max_len", c.eval.max_len);
    get(e, "pass_k", c.eval.pass_k);
    get(e, "split", c.eval.split);
    get(e, "include_teacher", c.eval.include_teacher);
  }
  // "toy": true wires the toyexpr interpreter; an explicit verifier section adds to it.
  if (j.value("toy", false)) c.verifier = toy_verifier_config();
  if (j.contains("verifier")) {
    const Json& v = j["verifier"];
    only_keys(v, "verifier",
              {"run_commands", "compile_commands", "extensions", "variables", "allowlist", "default_timeout_seconds",
               "compile_timeout_seconds", "parallelism"});
    auto merge = [&](const char* key, std::map<std::string, std::string>& dst) {
      if (v.contains(key))
        for (const auto& [k, val] : v[key].items()) dst[k] = val.get<std::string>();
    };
    merge("run_commands", c.verifier.run_commands);
    merge("compile_commands", c.verifier.compile_commands);
    merge("extensions", c.verifier.extensions);
    merge("variables", c.verifier.variables);
    if (v.contains("allowlist"))
      for (const auto& a : v["allowlist"]) c.verifier.allowlist.push_back(a.get<std::string>());
    get(v, "default_timeout_seconds", c.verifier.default_timeout_seconds);
    get(v, "compile_timeout_seconds", c.verifier.compile_timeout_seconds);
    get(v, "parallelism", c.verifier.parallelism);
  }
  std::uint64_t seed = kDefaultSeed;
  get(j, "seed", seed);
  c.set_seed(seed);
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

}  // namespace repairlab
