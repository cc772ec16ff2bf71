#include "repairlab/teacher.hpp"

#include <httplib.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "repairlab/errors.hpp"

namespace repairlab {

namespace {

constexpr const char* kCriteria =
    "- Correctness: Does it properly fix the bug?\n"
    "- Efficiency: Is the solution efficient and optimized?\n"
    "- Readability: Is the code clean and easy to understand?\n"
    "- Minimal change: Does it modify only what's necessary to fix the bug?\n";

constexpr const char* kTaskBlock =
    "Task id: {task_id}\n"
    "Task: {prompt}\n\n"
    "Buggy code ({language}):\n```\n{buggy_code}\n```\n{context}";

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size())
    s.replace(pos, from.size(), to);
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string last_nonempty_line(const std::string& text) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line))
    if (!trim(line).empty()) last = trim(line);
  return last;
}

struct Fence {
  std::size_t open_begin;   // offset of the opening ```
  std::size_t body_begin;   // first byte after the opening line
  std::size_t body_end;     // offset of the closing line
  std::size_t close_end;    // first byte after the closing ```
};

std::vector<Fence> find_fences(const std::string& text) {
  std::vector<Fence> fences;
  std::size_t pos = 0;
  while (true) {
    const auto open = text.find("```", pos);
    if (open == std::string::npos) break;
    const auto line_end = text.find('\n', open);
    if (line_end == std::string::npos) break;
    const auto close = text.find("```", line_end + 1);
    if (close == std::string::npos) break;
    // The closing fence must start a line.
    if (close != line_end + 1 && text[close - 1] != '\n') {
      pos = close;
      continue;
    }
    std::size_t body_end = close;
    if (body_end > line_end + 1 && text[body_end - 1] == '\n') --body_end;
    fences.push_back({open, line_end + 1, std::max(body_end, line_end + 1), close + 3});
    pos = close + 3;
  }
  return fences;
}

}  // namespace

PromptTemplates PromptTemplates::defaults() {
  PromptTemplates t;
  t.trace_template = std::string(
                         "Please fix the bug in this code. First analyze the problem, identify the bug, explain "
                         "your reasoning, and then provide the corrected code.\n\n") +
                     kTaskBlock +
                     "\nFinish with the complete corrected code in a single fenced code block.\n";
  t.compare_template = std::string(kTaskBlock) +
                       "\nTwo candidate repairs follow. Decide which repair is better according to:\n" + kCriteria +
                       "\n=== Solution A ===\n{candidate_a}\n\n=== Solution B ===\n{candidate_b}\n\n"
                       "Explain briefly, then write only the letter A or B on the final line.\n";
  t.rank_template = std::string(
                        "I'll show you a programming task and multiple solution attempts. Your job is to evaluate "
                        "each solution carefully, then rank them from best to worst.\n\n") +
                    kTaskBlock + "\nJudge each solution by:\n" + kCriteria + "\n{candidates}\n" +
                    "On the final line write the solution numbers from best to worst separated by commas, "
                    "for example 2,1,3.\n";
  return t;
}

void PromptTemplates::check() const {
  if (trace_template.find("Please fix the bug in this code.") == std::string::npos)
    throw ValidationError("trace template must contain the bug-fix instruction");
  if (rank_template.find("rank them from best to worst") == std::string::npos)
    throw ValidationError("rank template must ask to rank from best to worst");
  if (compare_template.find("{candidate_a}") == std::string::npos ||
      compare_template.find("{candidate_b}") == std::string::npos)
    throw ValidationError("compare template must reference both candidates");
}

void TeacherRequest::check() const {
  if (messages.empty()) throw ValidationError("teacher request has no messages");
  if (messages.front().role != "system" && messages.front().role != "user")
    throw ValidationError("first teacher message must be system or user");
  if (temperature < 0.0) throw ValidationError("temperature must be non-negative");
  if (max_tokens <= 0) throw ValidationError("max_tokens must be positive");
}

Json TeacherRequest::to_json() const {
  Json msgs = Json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", model_name}, {"messages", msgs}, {"temperature", temperature}, {"max_tokens", max_tokens}};
}

std::string TeacherRequest::digest() const { return sha256_hex(dump_json(to_json())); }

Json TeacherReply::to_json() const {
  Json j = {{"content", text},
            {"usage", {{"input_tokens", usage.input_tokens}, {"output_tokens", usage.output_tokens}}}};
  if (parsed_reasoning) j["parsed_reasoning"] = *parsed_reasoning;
  if (parsed_code) j["parsed_code"] = *parsed_code;
  return j;
}

TeacherReply TeacherReply::from_json(const Json& j) {
  TeacherReply r;
  r.text = j.at("content").get<std::string>();
  if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
    r.usage.input_tokens = u->value("input_tokens", std::uint64_t{0});
    r.usage.output_tokens = u->value("output_tokens", std::uint64_t{0});
  }
  if (auto it = j.find("parsed_reasoning"); it != j.end()) r.parsed_reasoning = it->get<std::string>();
  if (auto it = j.find("parsed_code"); it != j.end()) r.parsed_code = it->get<std::string>();
  return r;
}

std::optional<std::string> last_code_block(const std::string& text) {
  const auto fences = find_fences(text);
  if (fences.empty()) return std::nullopt;
  const auto& f = fences.back();
  return text.substr(f.body_begin, f.body_end - f.body_begin);
}

std::pair<std::string, std::string> split_reasoning_and_code(const std::string& text) {
  const auto fences = find_fences(text);
  if (fences.empty()) throw ExtractionError("teacher reply contains no fenced code block");
  const auto& f = fences.back();
  std::string code = text.substr(f.body_begin, f.body_end - f.body_begin);
  std::string reasoning = trim(text.substr(0, f.open_begin));
  const std::string tail = trim(text.substr(f.close_end));
  if (!tail.empty()) reasoning += (reasoning.empty() ? "" : "\n") + tail;
  return {std::move(reasoning), std::move(code)};
}

HttpTeacherBackend::HttpTeacherBackend(std::string endpoint_url, std::string api_key, std::chrono::seconds timeout)
    : api_key_(std::move(api_key)), timeout_(timeout) {
  const auto scheme_end = endpoint_url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("teacher endpoint must be an http(s) URL");
  const auto path_begin = endpoint_url.find('/', scheme_end + 3);
  scheme_host_port_ = endpoint_url.substr(0, path_begin);
  path_ = path_begin == std::string::npos ? "/" : endpoint_url.substr(path_begin);
  if (api_key_.empty()) {
    if (const char* env = std::getenv("TEACHER_API_KEY")) api_key_ = env;
  }
}

TeacherReply HttpTeacherBackend::complete(const TeacherRequest& request) {
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto res = client.Post(path_, headers, dump_json(request.to_json()), "application/json");
  if (!res) throw TransportError("teacher request failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw TransportError("teacher endpoint returned HTTP " + std::to_string(res->status));
  try {
    return TeacherReply::from_json(Json::parse(res->body));
  } catch (const Json::exception& e) {
    throw TransportError(std::string("malformed teacher reply: ") + e.what());
  }
}

ReplyCache::ReplyCache(std::filesystem::path dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

std::optional<TeacherReply> ReplyCache::lookup(const std::string& digest) const {
  const auto path = dir_ / (digest + ".json");
  if (!std::filesystem::exists(path)) return std::nullopt;
  return TeacherReply::from_json(Json::parse(read_file(path)).at("reply"));
}

void ReplyCache::store(const std::string& digest, const TeacherRequest& request, const TeacherReply& reply) {
  std::lock_guard lock(write_mu_);
  write_file_atomic(dir_ / (digest + ".json"), dump_json(Json{{"request", request.to_json()}, {"reply", reply.to_json()}}, 2));
}

CacheMode parse_cache_mode(const std::string& s) {
  if (s == "record") return CacheMode::record;
  if (s == "replay") return CacheMode::replay;
  if (s == "live") return CacheMode::live;
  throw ConfigError("unknown cache mode '" + s + "' (expected record, replay or live)");
}

std::string to_string(CacheMode m) {
  switch (m) {
    case CacheMode::record: return "record";
    case CacheMode::replay: return "replay";
    case CacheMode::live: return "live";
  }
  return "live";
}

TeacherClient::TeacherClient(std::shared_ptr<TeacherBackend> backend, std::shared_ptr<ReplyCache> cache,
                             CacheMode mode, RetryPolicy retry, int max_in_flight)
    : backend_(std::move(backend)),
      cache_(std::move(cache)),
      mode_(mode),
      retry_(std::move(retry)),
      in_flight_(std::clamp(max_in_flight, 1, 64)) {
  if (!retry_.sleep) retry_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  if (mode_ != CacheMode::live && !cache_) throw ConfigError("record/replay modes need a cache directory");
}

TokenUsage TeacherClient::usage() const {
  std::lock_guard lock(usage_mu_);
  return usage_;
}

TeacherReply TeacherClient::call_with_retries(const TeacherRequest& request) {
  if (!backend_) throw TransportError("no teacher backend configured");
  auto backoff = retry_.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    in_flight_.acquire();
    try {
      ++backend_calls_;
      TeacherReply reply = backend_->complete(request);
      in_flight_.release();
      return reply;
    } catch (const TransportError&) {
      in_flight_.release();
      if (attempt >= retry_.attempts) throw;
    } catch (...) {
      in_flight_.release();
      throw;
    }
    retry_.sleep(backoff);
    backoff *= 2;
  }
}

TeacherReply TeacherClient::cached_call(const TeacherRequest& request) {
  request.check();
  const std::string digest = request.digest();
  TeacherReply reply;
  if (mode_ == CacheMode::replay) {
    auto hit = cache_->lookup(digest);
    if (!hit) throw CacheMissError(digest);
    reply = std::move(*hit);
  } else if (mode_ == CacheMode::record) {
    if (auto hit = cache_->lookup(digest)) {
      reply = std::move(*hit);
    } else {
      reply = call_with_retries(request);
      cache_->store(digest, request, reply);
    }
  } else {
    reply = call_with_retries(request);
  }
  std::lock_guard lock(usage_mu_);
  usage_ += reply.usage;
  return reply;
}

std::string render_task_prompt(const std::string& tmpl, const RepairTask& task) {
  std::string context;
  for (const auto& f : task.context) context += "\nFile " + f.name + ":\n```\n" + f.text + "\n```\n";
  std::string s = tmpl;
  // {buggy_code} last-but-one so user text cannot inject other placeholders.
  s = replace_all(s, "{task_id}", task.id);
  s = replace_all(s, "{language}", task.language_tag);
  s = replace_all(s, "{prompt}", task.prompt);
  s = replace_all(s, "{context}", context);
  s = replace_all(s, "{buggy_code}", task.buggy_code);
  return s;
}

ReasoningExample elicit_trace(TeacherClient& client, const RepairTask& task, const TraceConfig& config,
                              const PromptTemplates& templates) {
  if (task.prompt.empty() || task.buggy_code.empty())
    throw ValidationError("task " + task.id + " needs a prompt and buggy code");
  TeacherRequest req;
  req.model_name = config.model_name;
  req.temperature = config.temperature;
  req.max_tokens = config.max_tokens;
  req.messages.push_back({"user", render_task_prompt(templates.trace_template, task)});
  const TeacherReply reply = client.cached_call(req);
  auto [reasoning, code] = split_reasoning_and_code(reply.text);
  ReasoningExample e;
  e.task_id = task.id;
  e.reasoning = std::move(reasoning);
  e.solution = std::move(code);
  e.teacher_model = config.model_name;
  e.verified = false;
  e.extra["usage"] = {{"input_tokens", reply.usage.input_tokens}, {"output_tokens", reply.usage.output_tokens}};
  return e;
}

char parse_verdict(const std::string& reply_text) {
  std::string last = last_nonempty_line(reply_text);
  // Tolerate light decoration such as "**A**" or "Answer: B".
  std::string letters;
  for (char c : last)
    if (std::isalpha(static_cast<unsigned char>(c))) letters += c;
  if (letters == "A" || letters == "AnswerA" || letters == "VerdictA") return 'A';
  if (letters == "B" || letters == "AnswerB" || letters == "VerdictB") return 'B';
  throw JudgmentParseError("no unambiguous A/B verdict on the final line: '" + last + "'");
}

PreferencePair judge_pair(TeacherClient& client, const RepairTask& task, const std::string& a, const std::string& b,
                          const JudgeConfig& config, Rng& rng, const PromptTemplates& templates) {
  if (a == b) throw ValidationError("cannot judge identical candidates");
  const bool swapped = rng.below(2) == 1;
  const std::string& first = swapped ? b : a;
  const std::string& second = swapped ? a : b;
  std::string content = render_task_prompt(templates.compare_template, task);
  content = replace_all(content, "{candidate_a}", first);
  content = replace_all(content, "{candidate_b}", second);

  TeacherRequest req;
  req.model_name = config.model_name;
  req.temperature = config.temperature;
  req.max_tokens = config.max_tokens;
  req.messages.push_back({"user", std::move(content)});
  const char verdict = parse_verdict(client.cached_call(req).text);
  const bool first_wins = verdict == 'A';

  PreferencePair p;
  p.task_id = task.id;
  p.candidate_a = a;
  p.candidate_b = b;
  p.label = (first_wins != swapped) ? 1 : 0;
  p.judge_model = config.model_name;
  p.extra["presented_swapped"] = swapped;
  return p;
}

std::vector<std::size_t> parse_ranking(const std::string& reply_text, std::size_t k) {
  const std::string last = last_nonempty_line(reply_text);
  std::vector<std::size_t> order;
  std::string token;
  auto flush = [&] {
    const std::string t = trim(token);
    token.clear();
    if (t.empty()) return;
    if (!std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      throw JudgmentParseError("ranking entry is not a number: '" + t + "'");
    order.push_back(std::stoul(t));
  };
  for (char c : last) {
    if (c == ',' || c == '>') {
      flush();
    } else {
      token += c;
    }
  }
  flush();
  if (order.size() != k) throw JudgmentParseError("ranking '" + last + "' does not list " + std::to_string(k) + " solutions");
  std::vector<char> seen(k, 0);
  for (auto& idx : order) {
    if (idx < 1 || idx > k || seen[idx - 1]) throw JudgmentParseError("ranking '" + last + "' is not a permutation");
    seen[idx - 1] = 1;
    --idx;
  }
  return order;
}

std::vector<std::size_t> rank_candidates(TeacherClient& client, const RepairTask& task,
                                         const std::vector<std::string>& candidates, const JudgeConfig& config,
                                         const PromptTemplates& templates) {
  if (candidates.size() < 2) throw ValidationError("ranking needs at least two candidates");
  for (std::size_t i = 0; i < candidates.size(); ++i)
    for (std::size_t j = i + 1; j < candidates.size(); ++j)
      if (candidates[i] == candidates[j]) throw ValidationError("ranking candidates must be distinct");
  std::string listing;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    listing += "=== Solution " + std::to_string(i + 1) + " ===\n" + candidates[i] + "\n\n";
  std::string content = replace_all(render_task_prompt(templates.rank_template, task), "{candidates}", listing);

  TeacherRequest req;
  req.model_name = config.model_name;
  req.temperature = config.temperature;
  req.max_tokens = config.max_tokens;
  req.messages.push_back({"user", std::move(content)});
  return parse_ranking(client.cached_call(req).text, candidates.size());
}

std::vector<PreferencePair> expand_ranking(const std::string& task_id, const std::vector<std::string>& candidates,
                                           const std::vector<std::size_t>& ranking, const std::string& judge_model) {
  if (ranking.size() != candidates.size()) throw ValidationError("ranking size does not match candidates");
  std::vector<std::size_t> position(candidates.size());
  for (std::size_t r = 0; r < ranking.size(); ++r) position.at(ranking[r]) = r;
  std::vector<PreferencePair> pairs;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (std::size_t j = i + 1; j < candidates.size(); ++j) {
      PreferencePair p;
      p.task_id = task_id;
      p.candidate_a = candidates[i];
      p.candidate_b = candidates[j];
      p.label = position[i] < position[j] ? 1 : 0;
      p.judge_model = judge_model;
      p.check();
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

}  // namespace repairlab
