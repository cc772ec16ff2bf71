#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "repairlab/jsonl.hpp"

namespace repairlab {

struct EvalSample {
  std::string candidate;
  bool valid = false;
  bool compiled = false;
  bool applied = true;
};

struct EvalOutcome {
  std::string task_id;
  std::vector<EvalSample> samples;  // samples[0] is the designated one
  Json to_json() const;
};

// 1 - C(n-c, k) / C(n, k) as a running product.
double pass_at_k(int n, int c, int k);
// Mean over tasks of pass_at_k with n = samples per task.
double mean_pass_at_k(std::span<const EvalOutcome> outcomes, int k);

double accuracy(std::span<const EvalOutcome> outcomes);
double compilation_rate(std::span<const EvalOutcome> outcomes);
double resolved_rate(std::span<const EvalOutcome> outcomes);

inline constexpr const char* kBleuTokenizer = "whitespace+punctuation/1";

// Punctuation characters become their own tokens; then split on whitespace.
std::vector<std::string> bleu_tokenize(const std::string& text);

// Clipped n-gram matches and the candidate n-gram count.
std::pair<long, long> modified_precision(const std::vector<std::string>& candidate,
                                         const std::vector<std::vector<std::string>>& references, int n);

// Sentence BLEU, uniform weights, no smoothing, closest reference length.
double bleu(const std::string& candidate, const std::vector<std::string>& references, int max_n = 4);

struct GapReport {
  std::string metric_name;
  double model_a_score = 0.0;
  double model_b_score = 0.0;
  double delta = 0.0;
  Json to_json() const;
};

using TaskScores = std::vector<std::pair<std::string, double>>;

// delta = mean(a) - mean(b); task ids must line up.
GapReport performance_gap(const std::string& metric_name, const TaskScores& a, const TaskScores& b);
GapReport performance_gap(const std::string& metric_name, std::span<const double> a, std::span<const double> b);

}  // namespace repairlab
