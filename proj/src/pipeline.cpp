#include "repairlab/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "repairlab/mock_teacher.hpp"
#include "repairlab/patch.hpp"
#include "repairlab/policy.hpp"
#include "repairlab/reward.hpp"
#include "repairlab/rllf.hpp"
#include "repairlab/sft.hpp"

namespace repairlab {

namespace {

constexpr const char* kTraces = "traces.jsonl";
constexpr const char* kUsage = "usage.json";
constexpr const char* kSftData = "sft_data.jsonl";
constexpr const char* kSplits = "splits.json";
constexpr const char* kFilterReport = "filter_report.json";
constexpr const char* kBaseCkpt = "policy_base.ckpt";
constexpr const char* kSftCkpt = "policy_sft.ckpt";
constexpr const char* kSftHistory = "sft_history.jsonl";
constexpr const char* kCandidates = "candidates.jsonl";
constexpr const char* kPrefs = "prefs.jsonl";
constexpr const char* kRewardCkpt = "reward.ckpt";
constexpr const char* kRmReport = "rm_report.json";
constexpr const char* kPpoCkpt = "policy_ppo.ckpt";
constexpr const char* kValueCkpt = "value.ckpt";
constexpr const char* kPpoReport = "ppo_report.jsonl";
constexpr const char* kMetrics = "metrics.json";
constexpr const char* kManifest = "run_manifest.json";

// Distinct streams per stage, all derived from the global seed.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) { return Rng::splitmix(seed ^ (stream * 0x9E3779B97F4A7C15ULL)); }

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string dump_pretty(const Json& j) { return dump_json(j, 2) + "\n"; }

TokenIds strip_eos(const TokenIds& t) {
  TokenIds out = t;
  if (!out.empty() && out.back() == Vocabulary::kEos) out.pop_back();
  return out;
}

class ReplayOnlyBackend : public TeacherBackend {
 public:
  TeacherReply complete(const TeacherRequest&) override {
    throw StateError("teacher backend unavailable; only cached replies can be served");
  }
};

// Traces written so far; a torn final line from an interrupted run is ignored.
std::vector<ReasoningExample> read_partial_traces(const std::filesystem::path& path) {
  std::vector<ReasoningExample> out;
  if (!std::filesystem::exists(path)) return out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(example_from_json(Json::parse(line)));
    } catch (const std::exception&) {
      break;
    }
  }
  return out;
}

struct CodeCheck {
  bool applied = true;
  bool valid = false;
  bool compiled = false;
};

}  // namespace

const std::vector<Stage>& stage_order() {
  static const std::vector<Stage> order{Stage::collect, Stage::filter,   Stage::sft, Stage::gen_candidates,
                                        Stage::judge,   Stage::train_rm, Stage::ppo, Stage::eval};
  return order;
}

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::collect: return "collect";
    case Stage::filter: return "filter";
    case Stage::sft: return "sft";
    case Stage::gen_candidates: return "gen-candidates";
    case Stage::judge: return "judge";
    case Stage::train_rm: return "train-rm";
    case Stage::ppo: return "ppo";
    case Stage::eval: return "eval";
  }
  return "unknown";
}

Stage parse_stage(const std::string& name) {
  for (Stage s : stage_order())
    if (stage_name(s) == name) return s;
  throw ConfigError("unknown stage '" + name + "'");
}

std::string to_string(StageStatus s) {
  switch (s) {
    case StageStatus::pending: return "pending";
    case StageStatus::done: return "done";
    case StageStatus::failed: return "failed";
  }
  return "pending";
}

Json RunManifest::to_json() const {
  Json st = Json::object();
  for (const auto& [name, r] : stages)
    st[name] = {{"status", repairlab::to_string(r.status)}, {"input_digest", r.input_digest},
                {"output_digest", r.output_digest},         {"started_at", r.started_at},
                {"finished_at", r.finished_at},             {"error", r.error}};
  return {{"run_id", run_id}, {"config_digest", config_digest}, {"stages", st}};
}

RunManifest RunManifest::from_json(const Json& j) {
  RunManifest m;
  m.run_id = j.at("run_id").get<std::string>();
  m.config_digest = j.at("config_digest").get<std::string>();
  for (const auto& [name, r] : j.at("stages").items()) {
    StageRecord rec;
    const std::string status = r.at("status").get<std::string>();
    rec.status = status == "done" ? StageStatus::done : status == "failed" ? StageStatus::failed : StageStatus::pending;
    rec.input_digest = r.value("input_digest", "");
    rec.output_digest = r.value("output_digest", "");
    rec.started_at = r.value("started_at", "");
    rec.finished_at = r.value("finished_at", "");
    rec.error = r.value("error", "");
    m.stages[name] = rec;
  }
  return m;
}

RunManifest RunManifest::fresh(const std::string& config_digest, std::uint64_t seed) {
  RunManifest m;
  m.run_id = config_digest.substr(0, 12) + "-s" + std::to_string(seed);
  m.config_digest = config_digest;
  for (Stage s : stage_order()) m.stages[stage_name(s)] = StageRecord{};
  return m;
}

std::string extract_candidate_code(const std::string& text) {
  if (auto code = last_code_block(text)) return *code;
  const auto b = text.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = text.find_last_not_of(" \t\r\n");
  return text.substr(b, e - b + 1);
}

std::vector<std::string> Pipeline::stage_outputs(Stage s) {
  switch (s) {
    case Stage::collect: return {kTraces, kUsage};
    case Stage::filter: return {kSftData, kSplits, kFilterReport};
    case Stage::sft: return {kBaseCkpt, kSftCkpt, kSftHistory};
    case Stage::gen_candidates: return {kCandidates};
    case Stage::judge: return {kPrefs};
    case Stage::train_rm: return {kRewardCkpt, kRmReport};
    case Stage::ppo: return {kPpoCkpt, kValueCkpt, kPpoReport};
    case Stage::eval: return {kMetrics};
  }
  return {};
}

Pipeline::Pipeline(PipelineConfig config, std::shared_ptr<TeacherBackend> backend)
    : config_(std::move(config)), backend_(std::move(backend)) {
  config_.check();
  std::filesystem::create_directories(config_.output_dir);
  const std::string digest = config_.digest();
  const auto path = artifact(kManifest);
  manifest_ = RunManifest::fresh(digest, config_.seed);
  if (std::filesystem::exists(path)) {
    try {
      RunManifest old = RunManifest::from_json(Json::parse(read_file(path)));
      if (old.config_digest == digest) manifest_ = std::move(old);
    } catch (const std::exception&) {
      // An unreadable manifest starts the run over.
    }
  }
  save_manifest();
}

void Pipeline::save_manifest() const { write_file_atomic(artifact(kManifest), dump_pretty(manifest_.to_json())); }

const TaskSet& Pipeline::tasks() {
  if (!tasks_) tasks_ = load_tasks(config_.tasks_path);
  return *tasks_;
}

TeacherClient& Pipeline::client() {
  if (!client_) {
    if (!backend_) {
      if (config_.mode == CacheMode::replay) {
        backend_ = std::make_shared<ReplayOnlyBackend>();
      } else if (config_.teacher.backend == "scripted") {
        backend_ = std::make_shared<ScriptedTeacher>(tasks(), Verifier(config_.verifier));
      } else {
        backend_ = std::make_shared<HttpTeacherBackend>(config_.teacher.endpoint);
      }
    }
    RetryPolicy retry;
    retry.attempts = config_.teacher.retry_attempts;
    retry.initial_backoff = std::chrono::milliseconds(config_.teacher.retry_backoff_ms);
    client_ = std::make_unique<TeacherClient>(backend_, std::make_shared<ReplyCache>(config_.cache_dir), config_.mode,
                                              retry, config_.teacher.max_in_flight);
  }
  return *client_;
}

std::uint64_t Pipeline::teacher_calls() const { return client_ ? client_->backend_calls() : 0; }
TokenUsage Pipeline::teacher_usage() const { return client_ ? client_->usage() : TokenUsage{}; }

TaskSet Pipeline::split_tasks(const std::string& split_name) {
  const Json splits = Json::parse(read_file(artifact(kSplits)));
  TaskSet out;
  for (const auto& id : splits.at(split_name)) out.add(tasks().at(id.get<std::string>()));
  return out;
}

std::string Pipeline::outputs_digest(Stage s) const {
  std::string acc;
  for (const auto& name : stage_outputs(s)) {
    const auto p = artifact(name);
    if (!std::filesystem::exists(p)) return {};
    acc += name + ":" + sha256_hex(read_file(p)) + "\n";
  }
  return sha256_hex(acc);
}

std::string Pipeline::inputs_digest(Stage s) const {
  std::string acc = manifest_.config_digest + "\n";
  if (std::filesystem::exists(config_.tasks_path)) acc += sha256_hex(read_file(config_.tasks_path)) + "\n";
  for (Stage p : stage_order()) {
    if (p == s) break;
    acc += manifest_.stages.at(stage_name(p)).output_digest + "\n";
  }
  return sha256_hex(acc);
}

bool Pipeline::run_stage(Stage s) {
  const std::string name = stage_name(s);
  for (Stage p : stage_order()) {
    if (p == s) break;
    if (manifest_.stages.at(stage_name(p)).status != StageStatus::done)
      throw OrderingError("stage " + name + " needs " + stage_name(p) + " to be done first");
  }
  StageRecord& rec = manifest_.stages.at(name);
  const std::string in_digest = inputs_digest(s);
  if (rec.status == StageStatus::done && rec.input_digest == in_digest && !rec.output_digest.empty() &&
      rec.output_digest == outputs_digest(s))
    return false;

  rec.status = StageStatus::pending;
  rec.input_digest = in_digest;
  rec.started_at = utc_now();
  rec.finished_at.clear();
  rec.error.clear();
  // Downstream results are stale once a stage re-runs.
  bool after = false;
  for (Stage p : stage_order()) {
    if (after) manifest_.stages.at(stage_name(p)) = StageRecord{};
    if (p == s) after = true;
  }
  save_manifest();
  try {
    switch (s) {
      case Stage::collect: stage_collect(); break;
      case Stage::filter: stage_filter(); break;
      case Stage::sft: stage_sft(); break;
      case Stage::gen_candidates: stage_gen_candidates(); break;
      case Stage::judge: stage_judge(); break;
      case Stage::train_rm: stage_train_rm(); break;
      case Stage::ppo: stage_ppo(); break;
      case Stage::eval: stage_eval(); break;
    }
  } catch (const std::exception& e) {
    rec.status = StageStatus::failed;
    rec.error = e.what();
    rec.finished_at = utc_now();
    save_manifest();
    std::throw_with_nested(StageFailure(s, e.what()));
  }
  rec.status = StageStatus::done;
  rec.output_digest = outputs_digest(s);
  rec.finished_at = utc_now();
  save_manifest();
  return true;
}

void Pipeline::run_all() {
  for (Stage s : stage_order()) run_stage(s);
}

void Pipeline::stage_collect() {
  const auto path = artifact(kTraces);
  std::vector<ReasoningExample> done = read_partial_traces(path);
  std::set<std::string> have;
  for (const auto& e : done) have.insert(e.task_id);
  // Rewrite without any torn tail so appends start on a clean line.
  {
    std::vector<Json> recs;
    for (const auto& e : done) recs.push_back(to_json(e));
    write_jsonl(path, recs);
  }

  std::vector<const RepairTask*> todo;
  for (const auto& t : tasks())
    if (!have.contains(t.id)) todo.push_back(&t);

  TraceConfig tc;
  tc.model_name = config_.teacher.model_name;
  tc.temperature = config_.teacher.trace_temperature;
  tc.max_tokens = config_.teacher.max_tokens;
  TeacherClient& cl = client();

  std::mutex mu;
  std::vector<std::string> failures;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      const RepairTask& task = *todo[i];
      try {
        ReasoningExample e;
        try {
          e = elicit_trace(cl, task, tc);
        } catch (const ExtractionError& x) {
          // Kept so a resume does not ask again; the filter drops it.
          e.task_id = task.id;
          e.teacher_model = tc.model_name;
          e.extra["extraction_error"] = x.what();
        }
        std::lock_guard lock(mu);
        append_jsonl(path, to_json(e));
        done.push_back(std::move(e));
      } catch (const std::exception& x) {
        std::lock_guard lock(mu);
        failures.push_back(task.id + ": " + x.what());
      }
    }
  };
  const unsigned n_workers = std::max(1, std::min<int>(config_.teacher.max_in_flight, static_cast<int>(todo.size())));
  {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  }
  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end());
    throw TransportError("teacher failed on " + std::to_string(failures.size()) + " task(s); first: " + failures.front());
  }

  // Final file in task order.
  std::map<std::string, ReasoningExample> by_id;
  for (auto& e : done) by_id[e.task_id] = e;
  std::vector<ReasoningExample> ordered;
  Json calls = Json::array();
  TokenUsage total;
  for (const auto& t : tasks()) {
    const auto& e = by_id.at(t.id);
    ordered.push_back(e);
    TokenUsage u;
    if (e.extra.contains("usage")) {
      u.input_tokens = e.extra["usage"].value("input_tokens", std::uint64_t{0});
      u.output_tokens = e.extra["usage"].value("output_tokens", std::uint64_t{0});
    }
    total += u;
    calls.push_back({{"task_id", t.id}, {"input_tokens", u.input_tokens}, {"output_tokens", u.output_tokens}});
  }
  write_traces(path, ordered);
  write_file_atomic(artifact(kUsage),
                    dump_pretty({{"calls", calls},
                                 {"total", {{"input_tokens", total.input_tokens}, {"output_tokens", total.output_tokens}}}}));
  std::cerr << "collect: " << ordered.size() << " traces, teacher usage " << total.input_tokens << " in / "
            << total.output_tokens << " out tokens\n";
}

void Pipeline::stage_filter() {
  const auto traces = load_traces(artifact(kTraces));
  const Verifier verifier(config_.verifier);
  std::vector<ReasoningExample> candidates;
  for (const auto& e : traces)
    if (!e.solution.empty()) candidates.push_back(e);
  const auto verified = verifier.filter_verified(candidates, tasks());
  std::vector<ReasoningExample> kept;
  if (!verified.empty()) kept = cap_dataset(verified, config_.cap_fraction, by_source_benchmark(tasks()), config_.seed);
  if (kept.empty()) std::cerr << "warning: filter kept no verified traces\n";
  write_traces(artifact(kSftData), kept);

  const DatasetSplit split = split_dataset(tasks(), config_.split);
  auto ids = [](const TaskSet& s) {
    Json a = Json::array();
    for (const auto& t : s) a.push_back(t.id);
    return a;
  };
  write_file_atomic(artifact(kSplits), dump_pretty({{"train", ids(split.train)}, {"val", ids(split.val)}, {"test", ids(split.test)}}));
  write_file_atomic(artifact(kFilterReport), dump_pretty({{"traces", traces.size()},
                                                          {"verified", verified.size()},
                                                          {"retained", kept.size()},
                                                          {"cap_fraction", config_.cap_fraction}}));
}

void Pipeline::stage_sft() {
  if (config_.sft.kd) throw ConfigError("distillation needs a local teacher network, which the pipeline does not have");
  Network policy(config_.shape, HeadKind::lm, config_.adapter, stream_seed(config_.seed, 1), config_.head_init_scale);
  save_checkpoint(artifact(kBaseCkpt), policy, "policy");

  const TaskSet train = split_tasks("train");
  std::vector<EncodedExample> data;
  for (const auto& e : load_traces(artifact(kSftData)))
    if (const RepairTask* t = train.find(e.task_id)) data.push_back(encode_example(*t, e, config_.sft.mode));
  if (data.empty()) throw TrainingError("no verified training-split examples to fine-tune on");

  std::vector<Json> history;
  const SftResult r = train_sft(policy, data, config_.sft, nullptr,
                                [&](const SftStepRecord& rec) { history.push_back(rec.to_json()); });
  if (r.skipped > 0) std::cerr << "sft: skipped " << r.skipped << " example(s) longer than the context window\n";
  write_jsonl(artifact(kSftHistory), history);
  save_checkpoint(artifact(kSftCkpt), policy, "policy");
}

void Pipeline::stage_gen_candidates() {
  const Network policy = load_checkpoint(artifact(kSftCkpt), "policy");
  const TaskSet pool = split_tasks(config_.candidates.split);
  Rng rng(stream_seed(config_.seed, 2));
  std::vector<Json> out;
  for (const auto& t : pool) {
    const TokenIds prompt = Vocabulary::encode(render_student_prompt(t));
    Json cands = Json::array();
    for (int k = 0; k < config_.candidates.per_task; ++k) {
      SampleOptions o;
      o.temperature = config_.candidates.temperature;
      o.max_len = config_.candidates.max_len;
      o.seed = rng.next_u64();
      cands.push_back(Vocabulary::decode(sample(policy, prompt, o).tokens));
    }
    out.push_back({{"task_id", t.id}, {"candidates", cands}});
  }
  write_jsonl(artifact(kCandidates), out);
}

void Pipeline::stage_judge() {
  JudgeConfig jc;
  jc.model_name = config_.teacher.model_name;
  jc.temperature = config_.teacher.judge_temperature;
  jc.max_tokens = config_.teacher.max_tokens;
  TeacherClient& cl = client();
  Rng rng(stream_seed(config_.seed, 3));
  std::vector<PreferencePair> prefs;
  read_jsonl(artifact(kCandidates), [&](const Json& rec, std::size_t) {
    const RepairTask& task = tasks().at(rec.at("task_id").get<std::string>());
    std::vector<std::string> distinct;
    for (const auto& c : rec.at("candidates")) {
      const std::string s = c.get<std::string>();
      if (std::find(distinct.begin(), distinct.end(), s) == distinct.end()) distinct.push_back(s);
    }
    if (distinct.size() < 2) return;
    try {
      if (config_.teacher.judge_protocol == "rank") {
        const auto ranking = rank_candidates(cl, task, distinct, jc);
        for (auto& p : expand_ranking(task.id, distinct, ranking, jc.model_name)) prefs.push_back(std::move(p));
      } else {
        for (std::size_t i = 0; i < distinct.size(); ++i)
          for (std::size_t j = i + 1; j < distinct.size(); ++j)
            prefs.push_back(judge_pair(cl, task, distinct[i], distinct[j], jc, rng));
      }
    } catch (const JudgmentParseError& e) {
      std::cerr << "warning: judge reply for " << task.id << " unusable: " << e.what() << "\n";
    }
  });
  write_prefs(artifact(kPrefs), prefs);
}

void Pipeline::stage_train_rm() {
  std::vector<EncodedPair> pairs;
  std::size_t too_long = 0;
  const auto fits = [&](const EncodedPair& p) {
    return static_cast<int>(1 + p.prompt.size() + std::max(p.a.size(), p.b.size())) <= config_.shape.context_window;
  };
  for (const auto& p : load_prefs(artifact(kPrefs))) {
    EncodedPair e = encode_pair(tasks().at(p.task_id), p);
    if (fits(e)) {
      pairs.push_back(std::move(e));
    } else {
      ++too_long;
    }
  }
  if (too_long > 0) std::cerr << "train-rm: skipped " << too_long << " pair(s) longer than the context window\n";
  if (pairs.empty()) throw TrainingError("no preference pairs");
  RewardModel rm(config_.shape, stream_seed(config_.seed, 4));
  const RmResult r = train_reward_model(rm, pairs, config_.rm);
  save_checkpoint(artifact(kRewardCkpt), rm.net(), "reward");
  write_file_atomic(artifact(kRmReport), dump_pretty(r.to_json()));
}

void Pipeline::stage_ppo() {
  Network policy = load_checkpoint(artifact(kSftCkpt), "policy");
  const Network reference = policy;
  ValueModel value(config_.shape, stream_seed(config_.seed, 5));
  const TaskSet train = split_tasks("train");
  std::vector<RolloutPrompt> prompts;
  for (const auto& t : train) prompts.push_back({t.id, Vocabulary::encode(render_student_prompt(t))});

  RewardFn reward;
  std::optional<RewardModel> rm;
  const Verifier verifier(config_.verifier);
  std::map<std::pair<std::string, std::string>, double> memo;
  if (config_.ppo_reward == "reward_model") {
    rm.emplace(load_checkpoint(artifact(kRewardCkpt), "reward"));
    reward = [&](const std::string&, const TokenIds& prompt, const TokenIds& response) {
      return rm->score(prompt, strip_eos(response));
    };
  } else {
    reward = [&](const std::string& id, const TokenIds&, const TokenIds& response) {
      const std::string code = extract_candidate_code(Vocabulary::decode(response));
      auto key = std::make_pair(id, code);
      auto it = memo.find(key);
      if (it != memo.end()) return it->second;
      const double v = code.empty() ? 0.0 : verifier.pass_fraction(tasks().at(id), code);
      memo.emplace(key, v);
      return v;
    };
  }
  std::vector<Json> report;
  train_ppo(policy, value, reference, prompts, reward, config_.ppo,
            [&](const PpoRoundReport& r) { report.push_back(r.to_json()); });
  write_jsonl(artifact(kPpoReport), report);
  save_checkpoint(artifact(kValueCkpt), value.net(), "value");
  save_checkpoint(artifact(kPpoCkpt), policy, "policy");
}

void Pipeline::stage_eval() {
  const TaskSet test = split_tasks(config_.eval.split);
  if (test.empty()) throw ValidationError("evaluation split '" + config_.eval.split + "' is empty");
  const Verifier verifier(config_.verifier);
  std::map<std::pair<std::string, std::string>, CodeCheck> memo;

  auto check = [&](const RepairTask& task, const std::string& code) {
    const auto key = std::make_pair(task.id, code);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    CodeCheck c;
    std::string program = code;
    if (looks_like_unified_diff(code)) {
      try {
        const std::string file = verifier.candidate_file_name(task.language_tag);
        program = apply_patch({{file, task.buggy_code}}, code).at(file);
      } catch (const Error&) {
        c.applied = false;
      }
    }
    if (c.applied && !program.empty()) {
      c.valid = verifier.validate(task, program).valid;
      if (config_.verifier.compile_commands.contains(task.language_tag))
        c.compiled = verifier.compile_check(program, task.language_tag);
    }
    memo.emplace(key, c);
    return c;
  };

  auto summarize = [&](const std::vector<EvalOutcome>& outcomes, int k) {
    Json per_task = Json::array();
    TaskScores scores;
    double bleu_sum = 0.0;
    for (const auto& o : outcomes) {
      const RepairTask& task = test.at(o.task_id);
      const int n = static_cast<int>(o.samples.size());
      const int c = static_cast<int>(std::count_if(o.samples.begin(), o.samples.end(), [](const auto& s) { return s.valid; }));
      const double p = pass_at_k(n, c, std::min(k, n));
      const std::string first_code = extract_candidate_code(o.samples.front().candidate);
      const double b = task.ground_truth ? bleu(first_code, {*task.ground_truth}) : 0.0;
      bleu_sum += b;
      scores.emplace_back(o.task_id, p);
      per_task.push_back({{"task_id", o.task_id},
                          {"n", n},
                          {"correct", c},
                          {"pass_at_k", p},
                          {"first_valid", o.samples.front().valid},
                          {"first_compiled", o.samples.front().compiled},
                          {"bleu", b},
                          {"first_candidate", o.samples.front().candidate}});
    }
    double pass = 0.0;
    for (const auto& [id, v] : scores) pass += v;
    Json arm = {{"pass_at_k", pass / static_cast<double>(scores.size())},
                {"accuracy", accuracy(outcomes)},
                {"resolved", resolved_rate(outcomes)},
                {"bleu", bleu_sum / static_cast<double>(outcomes.size())},
                {"per_task", per_task}};
    arm["compilation_rate"] = config_.verifier.compile_commands.empty() ? Json(nullptr) : Json(compilation_rate(outcomes));
    return std::make_pair(arm, scores);
  };

  const int n = config_.eval.samples_per_task;
  const std::uint64_t eval_seed = stream_seed(config_.seed, 6);
  auto eval_policy = [&](const Network& policy) {
    std::vector<EvalOutcome> outcomes;
    std::size_t ti = 0;
    for (const auto& task : test) {
      const TokenIds prompt = Vocabulary::encode(render_student_prompt(task));
      EvalOutcome o;
      o.task_id = task.id;
      for (int s = 0; s < n; ++s) {
        SampleOptions opt;
        opt.temperature = config_.eval.temperature;
        opt.max_len = config_.eval.max_len;
        // Same draws for every arm.
        opt.seed = Rng::splitmix(eval_seed + ti * 1000003ULL + static_cast<std::uint64_t>(s));
        const std::string text = Vocabulary::decode(sample(policy, prompt, opt).tokens);
        const CodeCheck c = check(task, extract_candidate_code(text));
        o.samples.push_back({text, c.valid, c.compiled, c.applied});
      }
      outcomes.push_back(std::move(o));
      ++ti;
    }
    return outcomes;
  };

  const int k = config_.eval.pass_k;
  Json arms = Json::object();
  std::map<std::string, TaskScores> scores;
  const std::vector<std::pair<std::string, std::string>> policy_arms{
      {"base", kBaseCkpt}, {"sft", kSftCkpt}, {"ppo", kPpoCkpt}};
  for (const auto& [name, file] : policy_arms) {
    auto [arm, s] = summarize(eval_policy(load_checkpoint(artifact(file), "policy")), k);
    arms[name] = arm;
    scores[name] = s;
  }
  if (config_.eval.include_teacher) {
    std::map<std::string, ReasoningExample> traces;
    for (auto& e : load_traces(artifact(kTraces))) traces[e.task_id] = e;
    std::vector<EvalOutcome> outcomes;
    for (const auto& task : test) {
      EvalOutcome o;
      o.task_id = task.id;
      const auto it = traces.find(task.id);
      const std::string text = it == traces.end() ? std::string() : format_response(it->second.reasoning, it->second.solution);
      const CodeCheck c = check(task, extract_candidate_code(text));
      o.samples.push_back({text, c.valid, c.compiled, c.applied});
      outcomes.push_back(std::move(o));
    }
    auto [arm, s] = summarize(outcomes, k);
    arms["teacher"] = arm;
    scores["teacher"] = s;
  }

  Json gaps = Json::array();
  const std::string metric = "pass@" + std::to_string(k);
  auto gap = [&](const std::string& a, const std::string& b) {
    if (!scores.contains(a) || !scores.contains(b)) return;
    Json g = performance_gap(metric, scores[a], scores[b]).to_json();
    g["model_a_name"] = a;
    g["model_b_name"] = b;
    gaps.push_back(g);
  };
  gap("sft", "base");
  gap("ppo", "sft");
  gap("ppo", "base");
  gap("teacher", "base");
  gap("teacher", "sft");
  gap("teacher", "ppo");

  const Json report = {{"bleu_tokenizer", kBleuTokenizer},
                       {"config_digest", manifest_.config_digest},
                       {"seed", config_.seed},
                       {"split", config_.eval.split},
                       {"samples_per_task", n},
                       {"temperature", config_.eval.temperature},
                       {"metric", metric},
                       {"arms", arms},
                       {"gaps", gaps}};
  write_file_atomic(artifact(kMetrics), dump_pretty(report));
}

}  // namespace repairlab
