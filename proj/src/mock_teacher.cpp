#include "repairlab/mock_teacher.hpp"

#include <algorithm>
#include <numeric>
#include <regex>

#include "repairlab/errors.hpp"

namespace repairlab {

namespace {

std::uint64_t approx_tokens(std::size_t bytes) { return (bytes + 3) / 4; }

// Splits "=== Solution X ===" sections in order of appearance.
std::vector<std::string> solution_sections(const std::string& content) {
  static const std::regex kMarker(R"((?:^|\n)=== Solution ([A-Za-z0-9]+) ===\n)");
  std::vector<std::pair<std::size_t, std::size_t>> marks;  // (marker begin, body begin)
  for (auto it = std::sregex_iterator(content.begin(), content.end(), kMarker); it != std::sregex_iterator(); ++it)
    marks.emplace_back(static_cast<std::size_t>(it->position()), static_cast<std::size_t>(it->position() + it->length()));
  std::vector<std::string> out;
  for (std::size_t i = 0; i < marks.size(); ++i) {
    std::size_t end = i + 1 < marks.size() ? marks[i + 1].first : content.size();
    std::string body = content.substr(marks[i].second, end - marks[i].second);
    if (i + 1 == marks.size()) {
      // The last section runs until the template's closing instruction.
      for (const char* trailer : {"\n\nOn the final line", "\n\nExplain briefly"}) {
        const auto cut = body.rfind(trailer);
        if (cut != std::string::npos) {
          body.resize(cut);
          break;
        }
      }
    }
    while (!body.empty() && (body.back() == '\n' || body.back() == ' ')) body.pop_back();
    out.push_back(std::move(body));
  }
  return out;
}

}  // namespace

ScriptedTeacher::ScriptedTeacher(TaskSet tasks, Verifier verifier)
    : tasks_(std::move(tasks)), verifier_(std::move(verifier)) {}

const RepairTask& ScriptedTeacher::task_for(const std::string& content) const {
  static const std::regex kTaskId(R"(Task id: ([^\n]+)\n)");
  std::smatch m;
  if (!std::regex_search(content, m, kTaskId)) throw TransportError("scripted teacher: request names no task");
  const auto* task = tasks_.find(m[1].str());
  if (!task) throw TransportError("scripted teacher: unknown task " + m[1].str());
  return *task;
}

double ScriptedTeacher::score_candidate(const RepairTask& task, const std::string& candidate) const {
  const auto code = last_code_block(candidate);
  if (!code || code->find_first_not_of(" \t\r\n") == std::string::npos) return 0.0;
  // Tests dominate; a fenced block that at least compiles breaks ties.
  double score = 2.0 + 4.0 * verifier_.pass_fraction(task, *code);
  if (verifier_.config().compile_commands.contains(task.language_tag) &&
      verifier_.compile_check(*code, task.language_tag))
    score += 1.0;
  return score;
}

TeacherReply ScriptedTeacher::complete(const TeacherRequest& request) {
  const std::string& content = request.messages.back().content;
  const RepairTask& task = task_for(content);
  TeacherReply reply;

  if (content.find("rank them from best to worst") != std::string::npos) {
    const auto candidates = solution_sections(content);
    std::vector<double> scores;
    for (const auto& c : candidates) scores.push_back(score_candidate(task, c));
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    reply.text = "Ranked by tests passed, then by whether the answer holds well-formed code.\n";
    for (std::size_t i = 0; i < order.size(); ++i) reply.text += (i ? "," : "") + std::to_string(order[i] + 1);
  } else if (content.find("=== Solution A ===") != std::string::npos) {
    const auto candidates = solution_sections(content);
    if (candidates.size() != 2) throw TransportError("scripted teacher: malformed comparison request");
    const double sa = score_candidate(task, candidates[0]);
    const double sb = score_candidate(task, candidates[1]);
    reply.text = std::string("Compared by tests passed, then by whether the answer holds well-formed code.\n") +
                 (sa >= sb ? "A" : "B");
  } else {
    const bool faulty = task.extra.value("teacher_fault", false);
    const std::string code = faulty ? task.buggy_code : task.ground_truth.value_or(task.buggy_code);
    std::string reasoning = task.extra.value("teacher_reasoning", std::string());
    if (reasoning.empty())
      reasoning = "The code does not do what the task asks. The bug is in `" + task.buggy_code +
                  "`; the fix rewrites it to match the description.";
    reply.text = reasoning + "\n```\n" + code + "\n```";
  }

  std::size_t in_bytes = 0;
  for (const auto& m : request.messages) in_bytes += m.content.size();
  reply.usage = {approx_tokens(in_bytes), approx_tokens(reply.text.size())};
  return reply;
}

}  // namespace repairlab
