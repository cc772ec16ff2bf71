#pragma once

#include <string>

#include "repairlab/corpus.hpp"
#include "repairlab/teacher.hpp"
#include "repairlab/verifier.hpp"

namespace repairlab {

// Offline stand-in for the closed teacher, driven by the task records.
//  - trace requests: replies with the task's `teacher_reasoning` (or a generic
//    analysis) followed by the ground truth in a fenced block. Tasks flagged
//    `teacher_fault: true` get the buggy code back instead.
//  - compare/rank requests: scores every candidate's last code block, preferring
//    more tests passed, then code that compiles, then any fenced block at all.
//    Remaining ties keep presentation order.
class ScriptedTeacher : public TeacherBackend {
 public:
  ScriptedTeacher(TaskSet tasks, Verifier verifier);
  TeacherReply complete(const TeacherRequest& request) override;

  // The judge's scoring rule: 0 without a fenced block, else
  // 2 + 4 * (fraction of tests passed) + (1 if the code compiles).
  double score_candidate(const RepairTask& task, const std::string& candidate) const;

 private:
  const RepairTask& task_for(const std::string& content) const;

  TaskSet tasks_;
  Verifier verifier_;
};

}  // namespace repairlab
