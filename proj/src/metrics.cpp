#include "repairlab/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>

#include "repairlab/errors.hpp"

namespace repairlab {

Json EvalOutcome::to_json() const {
  Json s = Json::array();
  for (const auto& x : samples)
    s.push_back({{"candidate", x.candidate}, {"valid", x.valid}, {"compiled", x.compiled}, {"applied", x.applied}});
  return {{"task_id", task_id}, {"samples", s}};
}

double pass_at_k(int n, int c, int k) {
  if (n < 1 || k < 1) throw InputError("pass_at_k needs n >= 1 and k >= 1");
  if (k > n) throw InputError("pass_at_k: k exceeds the number of samples");
  if (c < 0 || c > n) throw InputError("pass_at_k: correct count outside [0, n]");
  if (n - c < k) return 1.0;
  // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (1 - k / i)
  double miss = 1.0;
  for (int i = n - c + 1; i <= n; ++i) miss *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
  return 1.0 - miss;
}

double mean_pass_at_k(std::span<const EvalOutcome> outcomes, int k) {
  if (outcomes.empty()) throw InputError("no outcomes");
  double s = 0.0;
  for (const auto& o : outcomes) {
    const int n = static_cast<int>(o.samples.size());
    const int c = static_cast<int>(std::count_if(o.samples.begin(), o.samples.end(), [](const auto& x) { return x.valid; }));
    s += pass_at_k(n, c, k);
  }
  return s / static_cast<double>(outcomes.size());
}

namespace {

template <class Pred>
double first_sample_rate(std::span<const EvalOutcome> outcomes, Pred pred) {
  if (outcomes.empty()) throw InputError("no outcomes");
  double hits = 0.0;
  for (const auto& o : outcomes) {
    if (o.samples.empty()) throw InputError("outcome for " + o.task_id + " has no samples");
    if (pred(o.samples.front())) hits += 1.0;
  }
  return hits / static_cast<double>(outcomes.size());
}

}  // namespace

double accuracy(std::span<const EvalOutcome> outcomes) {
  return first_sample_rate(outcomes, [](const EvalSample& s) { return s.valid; });
}

double compilation_rate(std::span<const EvalOutcome> outcomes) {
  return first_sample_rate(outcomes, [](const EvalSample& s) { return s.compiled; });
}

double resolved_rate(std::span<const EvalOutcome> outcomes) {
  return first_sample_rate(outcomes, [](const EvalSample& s) { return s.applied && s.valid; });
}

std::vector<std::string> bleu_tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      flush();
    } else if (std::ispunct(ch)) {
      flush();
      out.emplace_back(1, static_cast<char>(ch));
    } else {
      cur.push_back(static_cast<char>(ch));
    }
  }
  flush();
  return out;
}

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, long> count_ngrams(const std::vector<std::string>& toks, int n) {
  std::map<Ngram, long> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[Ngram(toks.begin() + i, toks.begin() + i + n)];
  return counts;
}

}  // namespace

std::pair<long, long> modified_precision(const std::vector<std::string>& candidate,
                                         const std::vector<std::vector<std::string>>& references, int n) {
  const auto cand = count_ngrams(candidate, n);
  std::map<Ngram, long> max_ref;
  for (const auto& r : references)
    for (const auto& [g, c] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
  long matched = 0, total = 0;
  for (const auto& [g, c] : cand) {
    total += c;
    const auto it = max_ref.find(g);
    if (it != max_ref.end()) matched += std::min(c, it->second);
  }
  return {matched, total};
}

double bleu(const std::string& candidate, const std::vector<std::string>& references, int max_n) {
  if (max_n < 1) throw InputError("bleu max_n must be >= 1");
  if (references.empty()) throw InputError("bleu needs at least one reference");
  const auto cand = bleu_tokenize(candidate);
  if (cand.empty()) return 0.0;
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : references) refs.push_back(bleu_tokenize(r));

  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto [m, t] = modified_precision(cand, refs, n);
    if (m == 0 || t == 0) return 0.0;
    log_sum += std::log(static_cast<double>(m) / static_cast<double>(t)) / max_n;
  }
  const auto c = static_cast<long>(cand.size());
  long r = -1;
  for (const auto& ref : refs) {
    const auto len = static_cast<long>(ref.size());
    if (r < 0 || std::labs(len - c) < std::labs(r - c) || (std::labs(len - c) == std::labs(r - c) && len < r)) r = len;
  }
  const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  return bp * std::exp(log_sum);
}

Json GapReport::to_json() const {
  return {{"metric_name", metric_name}, {"model_a_score", model_a_score}, {"model_b_score", model_b_score}, {"delta", delta}};
}

GapReport performance_gap(const std::string& metric_name, const TaskScores& a, const TaskScores& b) {
  if (a.size() != b.size()) throw InputError("score vectors differ in length");
  std::vector<double> va, vb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first) throw InputError("task ids misaligned at index " + std::to_string(i));
    va.push_back(a[i].second);
    vb.push_back(b[i].second);
  }
  return performance_gap(metric_name, va, vb);
}

GapReport performance_gap(const std::string& metric_name, std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("score vectors differ in length");
  if (a.empty()) throw InputError("no scores");
  GapReport g;
  g.metric_name = metric_name;
  g.model_a_score = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
  g.model_b_score = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
  g.delta = g.model_a_score - g.model_b_score;
  return g;
}

}  // namespace repairlab
