// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <string>

#include "repairlab/config.hpp"
#include "repairlab/corpus.hpp"
#include "repairlab/jsonl.hpp"
#include "repairlab/metrics.hpp"
#include "repairlab/pipeline.hpp"
#include "repairlab/reward.hpp"
#include "repairlab/rllf.hpp"
#include "repairlab/sft.hpp"
#include "repairlab/toy_family.hpp"
#include "repairlab/verifier.hpp"
#include "support.hpp"

using namespace repairlab;
using testsupport::max_fd_rel_error;
using testsupport::TempDir;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  failures += pass ? 0 : 1;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ModelShape fd_shape() {
  ModelShape s;
  s.context_window = 48;
  s.embed_dim = 3;
  s.window = 2;
  s.hidden_dim = 5;
  return s;
}

void randomize_head(Network& net, std::uint64_t seed) {
  Rng rng(seed);
  auto w = net.tensor("head.weight");
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
}

// ---------------------------------------------------------------------------

void gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string detail;
  std::size_t largest = 0;
  auto note = [&](const char* name, double err, std::size_t params) {
    worst = std::max(worst, err);
    largest = std::max(largest, params);
    detail += std::string(name) + "=" + fmt("%.2e", err) + " ";
  };

  RepairTask task;
  task.id = "g";
  task.source_benchmark = "b";
  task.prompt = "sum";
  task.buggy_code = "a-b";
  task.language_tag = "toyexpr";
  ReasoningExample ex;
  ex.task_id = "g";
  ex.reasoning = "use plus";
  ex.solution = "a+b";

  {
    Network net(fd_shape(), HeadKind::lm, {}, 1);
    std::vector<double> g(net.parameter_count(), 0.0);
    sft_loss(net, task, ex, &g);
    note("sft", max_fd_rel_error(net.params(), g, [&] { return sft_loss(net, task, ex); }), net.parameter_count());
  }
  {
    Network net(fd_shape(), HeadKind::lm, {}, 2);
    std::vector<double> g(net.parameter_count(), 0.0);
    direct_output_loss(net, task, ex, &g);
    note("do", max_fd_rel_error(net.params(), g, [&] { return direct_output_loss(net, task, ex); }),
         net.parameter_count());
  }
  {
    Network student(fd_shape(), HeadKind::lm, {}, 3);
    const Network teacher(fd_shape(), HeadKind::lm, {}, 4);
    const EncodedExample enc = encode_example(task, ex, SftMode::trace);
    const Eigen::MatrixXd tl = teacher.forward(join_sequence(enc.prompt, enc.target)).out;
    const KdConfig kc{0.5, 2.0};
    std::vector<double> g(student.parameter_count(), 0.0);
    kd_sequence_loss(student, tl, enc, kc, &g);
    note("kd", max_fd_rel_error(student.params(), g, [&] { return kd_sequence_loss(student, tl, enc, kc); }),
         student.parameter_count());
  }
  {
    RewardModel rm(fd_shape(), 5);
    randomize_head(rm.net(), 6);
    std::vector<EncodedPair> batch(2);
    batch[0] = {"t", Vocabulary::encode("p"), Vocabulary::encode("good"), Vocabulary::encode("bad"), 1};
    batch[1] = {"t", Vocabulary::encode("q"), Vocabulary::encode("xy"), Vocabulary::encode(""), 0};
    std::vector<double> g(rm.net().parameter_count(), 0.0);
    rm_loss(rm, batch, &g);
    note("rm", max_fd_rel_error(rm.net().params(), g, [&] { return rm_loss(rm, batch); }),
         rm.net().parameter_count());
  }
  {
    Network policy(fd_shape(), HeadKind::lm, {}, 8);
    PpoConfig c;
    c.candidates_per_prompt = 2;
    c.max_response_len = 6;
    c.rollout_temperature = 0.8;
    const Network reference = policy;
    const std::vector<RolloutPrompt> prompts = {{"p1", Vocabulary::encode("ab")}, {"p2", Vocabulary::encode("cd")}};
    Rng rng(5);
    TrajectoryBatch b = rollout(policy, reference, prompts, c, rng);
    Rng adv(6);
    for (auto& s : b.samples) {
      s.advantages.clear();
      for (std::size_t t = 0; t < s.response.size(); ++t) s.advantages.push_back(adv.normal());
    }
    Rng noise(7);
    for (double& p : policy.params()) p += 0.3 * noise.normal();
    std::vector<double> g(policy.parameter_count(), 0.0);
    PolicyLossStats stats;
    ppo_policy_loss(policy, b, c, &g, &stats);
    note("clip", max_fd_rel_error(policy.params(), g, [&] { return ppo_policy_loss(policy, b, c); }),
         policy.parameter_count());
    detail += "clip_fraction=" + fmt("%.2f", stats.clip_fraction) + " ";
  }
  {
    ValueModel vm(fd_shape(), 9);
    randomize_head(vm.net(), 10);
    TrajectoryBatch b;
    Trajectory s;
    s.prompt = Vocabulary::encode("x");
    s.response = Vocabulary::encode("yz");
    s.returns = {0.4, -1.3};
    b.samples.push_back(s);
    std::vector<double> g(vm.net().parameter_count(), 0.0);
    value_loss(vm, b, &g);
    note("value", max_fd_rel_error(vm.net().params(), g, [&] { return value_loss(vm, b); }),
         vm.net().parameter_count());
  }
  const double secs = seconds_since(t0);
  detail += "params<=" + std::to_string(largest) + " time=" + fmt("%.1fs", secs);
  report(1, worst <= 1e-4 && largest <= 5000 && secs < 60.0, detail);
}

// ---------------------------------------------------------------------------

void gae_oracle() {
  const auto t0 = Clock::now();
  Rng rng(123);
  const double gammas[] = {0.9, 0.99, 1.0};
  const double lambdas[] = {0.0, 0.5, 0.95, 1.0};
  double worst = 0.0;
  for (int ep = 0; ep < 1000; ++ep) {
    const std::size_t T = 1 + rng.below(12);
    const double gamma = gammas[rng.below(3)], lambda = lambdas[rng.below(4)];
    std::vector<double> r(T), v(T + 1);
    for (auto& x : r) x = rng.normal();
    for (std::size_t t = 0; t < T; ++t) v[t] = rng.normal();
    v[T] = 0.0;
    const std::vector<double> d = td_errors(r, v, gamma);
    const std::vector<double> a = gae(d, gamma, lambda);
    for (std::size_t t = 0; t < T; ++t) {
      const double delta = r[t] + gamma * v[t + 1] - v[t];
      worst = std::max(worst, std::abs(d[t] - delta));
      double direct = 0.0;
      for (std::size_t l = 0; t + l < T; ++l) direct += std::pow(gamma * lambda, static_cast<double>(l)) * d[t + l];
      worst = std::max(worst, std::abs(a[t] - direct));
    }
  }
  const double secs = seconds_since(t0);
  report(2, worst <= 1e-12 && secs < 5.0, "max_abs_err=" + fmt("%.1e", worst) + " time=" + fmt("%.2fs", secs));
}

// ---------------------------------------------------------------------------

void clip_algebra() {
  const double eps = 0.2;
  bool ok = ppo_clip_objective(std::vector<double>{1.0}, std::vector<double>{0.5}, eps) == 0.5;
  ok = ok && std::abs(ppo_clip_objective(std::vector<double>{1.5}, std::vector<double>{2.0}, eps) - 2.4) < 1e-15;
  ok = ok && std::abs(ppo_clip_objective(std::vector<double>{0.5}, std::vector<double>{-1.0}, eps) + 0.8) < 1e-15;
  const bool algebra = ok;

  // Outside the band on the clipped side the objective is flat in the ratio.
  double worst_flat = 0.0;
  const double h = 1e-6;
  auto fd = [&](double r, double a) {
    return (ppo_clip_objective(std::vector<double>{r + h}, std::vector<double>{a}, eps) -
            ppo_clip_objective(std::vector<double>{r - h}, std::vector<double>{a}, eps)) /
           (2 * h);
  };
  for (const double r : {1.25, 1.5, 2.0, 3.0})
    for (const double a : {0.3, 2.0}) {
      worst_flat = std::max(worst_flat, std::abs(fd(r, a)));
      worst_flat = std::max(worst_flat, std::abs(ppo_clip_ratio_grad(r, a, eps, 1)));
    }
  for (const double r : {0.1, 0.5, 0.75})
    for (const double a : {-0.3, -2.0}) {
      worst_flat = std::max(worst_flat, std::abs(fd(r, a)));
      worst_flat = std::max(worst_flat, std::abs(ppo_clip_ratio_grad(r, a, eps, 1)));
    }
  report(3, algebra && worst_flat == 0.0,
         std::string("examples=") + (algebra ? "exact" : "mismatch") + " max_flat_grad=" + fmt("%.1e", worst_flat));
}

// ---------------------------------------------------------------------------

std::vector<EncodedPair> separable_pairs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  auto word = [&](std::size_t len) {
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s += static_cast<char>('a' + rng.below(26));
    return s;
  };
  std::vector<EncodedPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string prompt = word(4), stem = word(3);
    const bool a_good = rng.below(2) == 0;
    EncodedPair p;
    p.task_id = "syn-" + std::to_string(i);
    p.prompt = Vocabulary::encode(prompt);
    p.a = Vocabulary::encode(stem + (a_good ? " PASS" : " FAIL"));
    p.b = Vocabulary::encode(stem + (a_good ? " FAIL" : " PASS"));
    p.label = a_good ? 1 : 0;
    out.push_back(std::move(p));
  }
  return out;
}

void bradley_terry() {
  const auto t0 = Clock::now();
  ModelShape shape;
  shape.context_window = 32;
  shape.embed_dim = 8;
  shape.window = 4;
  shape.hidden_dim = 32;
  const RmConfig config;  // lr 5e-5, 3 epochs

  const std::vector<EncodedPair> pairs = separable_pairs(400, 31);
  RewardModel rm(shape, 32);
  const RmResult clean = train_reward_model(rm, pairs, config);

  std::vector<EncodedPair> shuffled = pairs;
  std::vector<int> labels;
  for (const auto& p : shuffled) labels.push_back(p.label);
  Rng rng(33);
  rng.shuffle(std::span(labels));
  for (std::size_t i = 0; i < shuffled.size(); ++i) shuffled[i].label = labels[i];
  RewardModel rm2(shape, 32);
  const RmResult noise = train_reward_model(rm2, shuffled, config);

  const double secs = seconds_since(t0);
  const bool ok = config.learning_rate == 5e-5 && config.epochs == 3 && clean.heldout_accuracy >= 0.95 &&
                  noise.heldout_accuracy >= 0.4 && noise.heldout_accuracy <= 0.6 && secs < 120.0;
  report(4, ok,
         "heldout=" + fmt("%.3f", clean.heldout_accuracy) + " shuffled=" + fmt("%.3f", noise.heldout_accuracy) +
             " pairs=" + std::to_string(clean.train_pairs + clean.heldout_pairs) + " time=" + fmt("%.1fs", secs));
}

// ---------------------------------------------------------------------------

Json toy_config_json() { return Json::parse(read_file("configs/toy.json")); }

void filtering() {
  TempDir dir;
  const Verifier verifier(toy_verifier_config());
  bool revalidates = true;
  std::size_t checked = 0;
  {
    const TaskSet tasks = make_toy_tasks();
    write_tasks(dir / "tasks.jsonl", tasks);
    Json j = toy_config_json();
    j["paths"] = {{"tasks", "tasks.jsonl"}, {"output", "full"}, {"cache", "cache"}};
    Pipeline p(config_from_json(j, dir.path));
    p.run_stage(Stage::collect);
    p.run_stage(Stage::filter);
    for (const auto& e : load_traces(p.artifact("sft_data.jsonl"))) {
      ++checked;
      revalidates = revalidates && verifier.validate(tasks.at(e.task_id), e.solution).valid;
    }
  }

  // 50 tasks whose teacher answers all verify, capped at 20%.
  std::size_t retained = 0, verified = 0;
  {
    const TaskSet base = make_toy_tasks();
    TaskSet fifty;
    for (std::size_t i = 0; fifty.size() < 50; ++i) {
      RepairTask t = base[i % base.size()];
      t.id += "-copy" + std::to_string(i / base.size());
      t.extra.erase("teacher_fault");
      fifty.add(std::move(t));
    }
    write_tasks(dir / "fifty.jsonl", fifty);
    Json j = toy_config_json();
    j["paths"] = {{"tasks", "fifty.jsonl"}, {"output", "capped"}, {"cache", "cache50"}};
    j["filter"]["cap_fraction"] = 0.2;
    Pipeline p(config_from_json(j, dir.path));
    p.run_stage(Stage::collect);
    p.run_stage(Stage::filter);
    const auto kept = load_traces(p.artifact("sft_data.jsonl"));
    retained = kept.size();
    for (const auto& e : kept) revalidates = revalidates && verifier.validate(fifty.at(e.task_id), e.solution).valid;
    verified = Json::parse(read_file(p.artifact("filter_report.json"))).at("verified").get<std::size_t>();
  }
  report(5, revalidates && checked > 0 && verified == 50 && retained == 10,
         "revalidated=" + std::to_string(checked) + (revalidates ? " all valid" : " INVALID FOUND") +
             " cap0.2: " + std::to_string(verified) + "->" + std::to_string(retained));
}

// ---------------------------------------------------------------------------

void metrics_exactness() {
  Rng rng(99);
  double worst = 0.0;
  for (const auto& [n, c, k] : std::vector<std::tuple<int, int, int>>{{10, 3, 1}, {10, 3, 4}, {5, 2, 2}, {7, 1, 3}}) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    int hits = 0;
    const int draws = 100000;
    for (int d = 0; d < draws; ++d) {
      for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
      rng.shuffle(std::span(idx));
      bool any = false;
      for (int i = 0; i < k; ++i) any = any || idx[static_cast<std::size_t>(i)] < c;
      hits += any ? 1 : 0;
    }
    worst = std::max(worst, std::abs(pass_at_k(n, c, k) - static_cast<double>(hits) / draws));
  }
  const auto [matched, total] =
      modified_precision(bleu_tokenize("the the the the the the the"), {bleu_tokenize("the cat is on the mat")}, 1);
  const double identity = bleu("return max(a, b)", {"return max(a, b)"});
  const double gap = performance_gap("pass@1", std::vector<double>{35.8}, std::vector<double>{30.8}).delta;
  const bool ok = worst <= 0.005 && matched == 2 && total == 7 && std::abs(identity - 1.0) < 1e-12 &&
                  std::abs(gap - 5.0) < 1e-9;
  report(7, ok,
         "pass@k_mc_err=" + fmt("%.4f", worst) + " clipped=" + std::to_string(matched) + "/" + std::to_string(total) +
             " bleu_identity=" + fmt("%.3f", identity) + " gap=" + fmt("%.1f", gap));
}

// ---------------------------------------------------------------------------

void kl_machinery() {
  ModelShape shape = fd_shape();
  const Network policy(shape, HeadKind::lm, {}, 12);
  const Network reference = policy;
  PpoConfig c;
  c.candidates_per_prompt = 4;
  c.max_response_len = 10;
  const std::vector<RolloutPrompt> prompts = {{"p1", Vocabulary::encode("ab")}, {"p2", Vocabulary::encode("xyz")}};
  Rng rng(13);
  TrajectoryBatch b = rollout(policy, reference, prompts, c, rng);
  Rng rr(14);
  score_batch(b, [&](const std::string&, const TokenIds&, const TokenIds&) { return rr.normal(); });
  shape_rewards(b, c);
  bool zero = true;
  std::size_t tokens = 0;
  for (const auto& s : b.samples)
    for (std::size_t t = 0; t < s.rewards.size(); ++t) {
      ++tokens;
      const double expected = t + 1 == s.rewards.size() ? s.terminal_reward : 0.0;
      zero = zero && s.rewards[t] == expected;
    }

  Rng draw(2024);
  std::vector<double> lp_p, lp_q;
  for (int i = 0; i < 100000; ++i) {
    const bool first = draw.uniform() < 0.75;
    lp_p.push_back(std::log(first ? 0.75 : 0.25));
    lp_q.push_back(std::log(0.5));
  }
  const double estimate = kl_estimate(lp_p, lp_q);
  report(9, zero && tokens > 0 && std::abs(estimate - 0.13081) <= 0.01,
         std::string("shaping ") + (zero ? "exactly zero" : "NONZERO") + " over " + std::to_string(tokens) +
             " tokens, two-point KL estimate=" + fmt("%.5f", estimate));
}

// ---------------------------------------------------------------------------

double arm_pass(const Json& metrics, const char* arm) { return metrics.at("arms").at(arm).at("pass_at_k").get<double>(); }

void pipeline_claims(const std::filesystem::path& root) {
  const auto t0 = Clock::now();
  const std::uint64_t seeds[] = {42, 1, 2};
  int wins = 0;
  std::string detail;
  for (const std::uint64_t seed : seeds) {
    Json j = toy_config_json();
    const std::string tag = "seed" + std::to_string(seed);
    j["paths"] = {{"tasks", std::filesystem::absolute("data/toy/tasks.jsonl").string()},
                  {"output", (root / tag).string()},
                  {"cache", (root / (tag + "-cache")).string()}};
    j["seed"] = seed;
    j["mode"] = "record";
    Pipeline p(config_from_json(j, root));
    p.run_all();
    const Json m = Json::parse(read_file(p.artifact("metrics.json")));
    const double base = arm_pass(m, "base"), sft = arm_pass(m, "sft"), ppo = arm_pass(m, "ppo");
    const bool win = sft > base && ppo > sft;
    wins += win ? 1 : 0;
    detail += tag + "[base=" + fmt("%.3f", base) + " sft=" + fmt("%.3f", sft) + " ppo=" + fmt("%.3f", ppo) +
              (win ? " ok" : " no") + "] ";
  }
  const double secs = seconds_since(t0);
  detail += "time=" + fmt("%.0fs", secs);
  report(6, wins >= 2 && secs < 900.0, detail);
}

void determinism(const std::filesystem::path& root) {
  std::vector<std::string> digests;
  std::uint64_t calls = 0;
  for (const char* out : {"replay-a", "replay-b"}) {
    Json j = toy_config_json();
    j["paths"] = {{"tasks", std::filesystem::absolute("data/toy/tasks.jsonl").string()},
                  {"output", (root / out).string()},
                  {"cache", (root / "seed42-cache").string()}};
    j["seed"] = 42;
    j["mode"] = "replay";
    Pipeline p(config_from_json(j, root));
    p.run_all();
    calls += p.teacher_calls();
    std::string acc;
    for (const char* a : {"metrics.json", "policy_base.ckpt", "policy_sft.ckpt", "reward.ckpt", "policy_ppo.ckpt",
                          "value.ckpt"})
      acc += sha256_hex(read_file(p.artifact(a))) + ";";
    digests.push_back(acc);
  }
  report(8, digests[0] == digests[1] && calls == 0,
         std::string("metrics and checkpoints ") + (digests[0] == digests[1] ? "byte-identical" : "DIFFER") +
             ", live teacher calls=" + std::to_string(calls));
}

template <class Fn>
void guarded(int id, Fn fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    report(id, false, std::string("exception: ") + e.what());
  }
}

}  // namespace

int main() {
  guarded(1, gradients);
  guarded(2, gae_oracle);
  guarded(3, clip_algebra);
  guarded(4, bradley_terry);
  guarded(5, filtering);
  guarded(7, metrics_exactness);
  guarded(9, kl_machinery);
  TempDir runs;
  guarded(6, [&] { pipeline_claims(runs.path); });
  guarded(8, [&] { determinism(runs.path); });
  std::printf("%s: %d criterion(s) failed\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
