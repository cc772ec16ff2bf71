#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include "repairlab/corpus.hpp"
#include "repairlab/jsonl.hpp"
#include "repairlab/rng.hpp"

namespace repairlab {

struct PromptTemplates {
  // Placeholders: {task_id} {prompt} {language} {buggy_code} {context}
  std::string trace_template;
  // Placeholders as above plus {candidate_a} {candidate_b}
  std::string compare_template;
  // Placeholders as above plus {candidates}
  std::string rank_template;

  static PromptTemplates defaults();
  void check() const;
};

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string content;
};

struct TeacherRequest {
  std::string model_name;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 1024;

  void check() const;
  // The wire body; keys sorted, so it doubles as the canonical form.
  Json to_json() const;
  std::string digest() const;
};

struct TokenUsage {
  std::uint64_t input_tokens = 0;
  std::uint64_t output_tokens = 0;
  TokenUsage& operator+=(const TokenUsage& o) {
    input_tokens += o.input_tokens;
    output_tokens += o.output_tokens;
    return *this;
  }
  bool operator==(const TokenUsage&) const = default;
};

struct TeacherReply {
  std::string text;
  std::optional<std::string> parsed_reasoning;
  std::optional<std::string> parsed_code;
  TokenUsage usage;

  Json to_json() const;
  static TeacherReply from_json(const Json& j);
  bool operator==(const TeacherReply&) const = default;
};

// Splits a reply into (reasoning, code): code is the body of the last fenced
// block, reasoning is everything else with surrounding whitespace trimmed.
// ExtractionError when there is no complete fenced block.
std::pair<std::string, std::string> split_reasoning_and_code(const std::string& text);

// Body of the last fenced block, or nullopt.
std::optional<std::string> last_code_block(const std::string& text);

class TeacherBackend {
 public:
  virtual ~TeacherBackend() = default;
  virtual TeacherReply complete(const TeacherRequest& request) = 0;
};

// Generic chat endpoint: POST {model, messages, temperature, max_tokens},
// reply {content, usage:{input_tokens, output_tokens}}.
class HttpTeacherBackend : public TeacherBackend {
 public:
  // The credential is read from TEACHER_API_KEY when api_key is empty.
  explicit HttpTeacherBackend(std::string endpoint_url, std::string api_key = {},
                              std::chrono::seconds timeout = std::chrono::seconds(120));
  TeacherReply complete(const TeacherRequest& request) override;

 private:
  std::string scheme_host_port_;
  std::string path_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

class FunctionBackend : public TeacherBackend {
 public:
  using Fn = std::function<TeacherReply(const TeacherRequest&)>;
  explicit FunctionBackend(Fn fn) : fn_(std::move(fn)) {}
  TeacherReply complete(const TeacherRequest& request) override { return fn_(request); }

 private:
  Fn fn_;
};

// One JSON file per request digest holding {request, reply}.
class ReplyCache {
 public:
  explicit ReplyCache(std::filesystem::path dir);
  std::optional<TeacherReply> lookup(const std::string& digest) const;
  void store(const std::string& digest, const TeacherRequest& request, const TeacherReply& reply);
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::mutex write_mu_;
};

enum class CacheMode { record, replay, live };
CacheMode parse_cache_mode(const std::string& s);
std::string to_string(CacheMode m);

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  std::function<void(std::chrono::milliseconds)> sleep;  // defaults to this_thread::sleep_for
};

class TeacherClient {
 public:
  TeacherClient(std::shared_ptr<TeacherBackend> backend, std::shared_ptr<ReplyCache> cache, CacheMode mode,
                RetryPolicy retry = {}, int max_in_flight = 4);

  // record: reuse a cached reply or call and store; replay: cache only;
  // live: always call, never store.
  TeacherReply cached_call(const TeacherRequest& request);

  std::uint64_t backend_calls() const { return backend_calls_; }
  TokenUsage usage() const;
  CacheMode mode() const { return mode_; }

 private:
  TeacherReply call_with_retries(const TeacherRequest& request);

  std::shared_ptr<TeacherBackend> backend_;
  std::shared_ptr<ReplyCache> cache_;
  CacheMode mode_;
  RetryPolicy retry_;
  std::counting_semaphore<64> in_flight_;
  std::atomic<std::uint64_t> backend_calls_{0};
  mutable std::mutex usage_mu_;
  TokenUsage usage_;
};

struct TraceConfig {
  std::string model_name = "teacher";
  double temperature = 0.0;
  int max_tokens = 1024;
};

struct JudgeConfig {
  std::string model_name = "teacher";
  double temperature = 0.2;
  int max_tokens = 1024;
};

std::string render_task_prompt(const std::string& tmpl, const RepairTask& task);

// Unverified trace for the task; token usage recorded under extra["usage"].
ReasoningExample elicit_trace(TeacherClient& client, const RepairTask& task, const TraceConfig& config,
                              const PromptTemplates& templates = PromptTemplates::defaults());

// 'A' or 'B' from the last non-empty line; JudgmentParseError otherwise.
char parse_verdict(const std::string& reply_text);

// Presentation order is drawn from rng and stored in extra["presented_swapped"].
PreferencePair judge_pair(TeacherClient& client, const RepairTask& task, const std::string& a,
                          const std::string& b, const JudgeConfig& config, Rng& rng,
                          const PromptTemplates& templates = PromptTemplates::defaults());

// Parses "2,1,3" (1-based, best first) from the last non-empty line into a
// 0-based permutation of size k.
std::vector<std::size_t> parse_ranking(const std::string& reply_text, std::size_t k);

std::vector<std::size_t> rank_candidates(TeacherClient& client, const RepairTask& task,
                                         const std::vector<std::string>& candidates, const JudgeConfig& config,
                                         const PromptTemplates& templates = PromptTemplates::defaults());

// All k(k-1)/2 pairs implied by a best-first ranking. Pairs are oriented by
// candidate index (a has the lower index) and labelled by rank.
std::vector<PreferencePair> expand_ranking(const std::string& task_id, const std::vector<std::string>& candidates,
                                           const std::vector<std::size_t>& ranking, const std::string& judge_model);

}  // namespace repairlab
