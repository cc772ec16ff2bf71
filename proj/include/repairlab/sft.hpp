#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "repairlab/corpus.hpp"
#include "repairlab/policy.hpp"

namespace repairlab {

enum class SftMode { trace, direct_output };
SftMode parse_sft_mode(const std::string& s);
std::string to_string(SftMode m);

struct KdConfig {
  double alpha = 0.5;
  double temperature_tau = 2.0;
  void check() const;
};

struct SftConfig {
  double learning_rate = 1e-5;
  double weight_decay = 0.01;
  int warmup_steps = -1;  // negative: 10% of total_steps
  int total_steps = 0;    // 0: derived from epochs and the effective batch
  int micro_batch = 1;
  int grad_accum_steps = 8;
  int epochs = 3;
  SftMode mode = SftMode::trace;
  std::uint64_t seed = kDefaultSeed;
  std::optional<KdConfig> kd;  // distill from a local teacher network when set

  void check() const;
};

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

// Decoupled weight decay: theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
// Entries with mask == 0 are left untouched. NumericError on a non-finite gradient.
void adamw_step(std::vector<double>& params, const std::vector<double>& grads, AdamWState& state,
                const AdamWConfig& config, const std::vector<char>* mask = nullptr);

// Linear warmup to peak_lr, then cosine decay to 0 at total_steps.
double lr_schedule(int step, double peak_lr, int warmup_steps, int total_steps);

// Student-side text formats.
std::string render_student_prompt(const RepairTask& task);
// reasoning, a newline, then the solution in a fenced block; no reasoning part when empty.
std::string format_response(const std::string& reasoning, const std::string& solution);

struct EncodedExample {
  std::string task_id;
  TokenIds prompt;
  TokenIds target;  // ends with EOS
};

EncodedExample encode_example(const RepairTask& task, const ReasoningExample& example, SftMode mode);

// -log P(target | prompt), summed over target tokens. Adds scale * gradient into *grad when given.
double sequence_nll(const Network& model, const EncodedExample& example, std::vector<double>* grad = nullptr,
                    double scale = 1.0);

// -log P(r + y | x)
double sft_loss(const Network& model, const RepairTask& task, const ReasoningExample& example,
                std::vector<double>* grad = nullptr, double scale = 1.0);
// -log P(y | x), reasoning dropped from the target
double direct_output_loss(const Network& model, const RepairTask& task, const ReasoningExample& example,
                          std::vector<double>* grad = nullptr, double scale = 1.0);

struct KdTerm {
  double loss = 0.0;
  Eigen::VectorXd d_student;  // gradient with respect to the student logits
};

// alpha * CE(label, softmax(s)) + (1 - alpha) * tau^2 * KL(softmax(t / tau) || softmax(s / tau)).
KdTerm kd_loss(const Eigen::VectorXd& student_logits, const Eigen::VectorXd& teacher_logits, int true_label,
               const KdConfig& config);

// kd_loss summed over the target positions of a sequence.
double kd_sequence_loss(const Network& student, const Eigen::MatrixXd& teacher_logits, const EncodedExample& example,
                        const KdConfig& config, std::vector<double>* grad = nullptr, double scale = 1.0);

struct SftStepRecord {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  SftMode mode = SftMode::trace;
  Json to_json() const;
};

struct SftResult {
  std::vector<SftStepRecord> history;
  std::vector<double> epoch_mean_loss;
  std::size_t skipped = 0;  // examples that did not fit the context window
  int total_steps = 0;
};

// Epochs over seed-shuffled data; each optimizer step averages the gradient of
// micro_batch * grad_accum_steps examples. TrainingError on a non-finite loss,
// with the model left at its last finite parameters.
SftResult train_sft(Network& model, const std::vector<EncodedExample>& data, const SftConfig& config,
                    const Network* kd_teacher = nullptr,
                    const std::function<void(const SftStepRecord&)>& on_step = {});

// Mean gradient of sequence_nll over a batch (the quantity one optimizer step consumes).
std::vector<double> batch_gradient(const Network& model, std::span<const EncodedExample> batch,
                                   std::size_t denominator, double* loss_sum = nullptr);

}  // namespace repairlab
