#include "repairlab/sft.hpp"

#include <cmath>
#include <numeric>

#include "repairlab/errors.hpp"

namespace repairlab {

SftMode parse_sft_mode(const std::string& s) {
  if (s == "trace") return SftMode::trace;
  if (s == "direct_output") return SftMode::direct_output;
  throw ConfigError("unknown SFT mode '" + s + "' (expected trace or direct_output)");
}

std::string to_string(SftMode m) { return m == SftMode::trace ? "trace" : "direct_output"; }

void KdConfig::check() const {
  if (alpha < 0.0 || alpha > 1.0) throw ValidationError("kd alpha must lie in [0, 1]");
  if (!(temperature_tau > 0.0)) throw ValidationError("kd temperature must be positive");
}

void SftConfig::check() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (grad_accum_steps < 1 || micro_batch < 1) throw ValidationError("batch settings must be at least 1");
  if (epochs < 1) throw ValidationError("epochs must be at least 1");
  if (total_steps > 0 && warmup_steps > total_steps) throw ValidationError("warmup_steps exceeds total_steps");
  if (kd) kd->check();
}

void adamw_step(std::vector<double>& params, const std::vector<double>& grads, AdamWState& state,
                const AdamWConfig& config, const std::vector<char>* mask) {
  if (grads.size() != params.size()) throw InputError("gradient and parameter sizes differ");
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i])) throw NumericError("non-finite gradient at parameter " + std::to_string(i));
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grads[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= config.learning_rate * (m_hat / (std::sqrt(v_hat) + config.epsilon) + config.weight_decay * params[i]);
  }
}

double lr_schedule(int step, double peak_lr, int warmup_steps, int total_steps) {
  if (step < warmup_steps) return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return peak_lr;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return peak_lr * 0.5 * (1.0 + std::cos(M_PI * std::min(progress, 1.0)));
}

std::string render_student_prompt(const RepairTask& task) {
  // The instruction sits last, nearest to the answer.
  std::string s = "Code:\n" + task.buggy_code + "\n";
  for (const auto& f : task.context) s += "File " + f.name + ":\n" + f.text + "\n";
  return s + "Task: " + task.prompt + "\nFix:\n";
}

std::string format_response(const std::string& reasoning, const std::string& solution) {
  return (reasoning.empty() ? std::string() : reasoning + "\n") + "```\n" + solution + "\n```";
}

EncodedExample encode_example(const RepairTask& task, const ReasoningExample& example, SftMode mode) {
  EncodedExample e;
  e.task_id = task.id;
  e.prompt = Vocabulary::encode(render_student_prompt(task));
  const std::string reasoning = mode == SftMode::trace ? example.reasoning : std::string();
  e.target = Vocabulary::encode(format_response(reasoning, example.solution));
  e.target.push_back(Vocabulary::kEos);
  return e;
}

double sequence_nll(const Network& model, const EncodedExample& example, std::vector<double>* grad, double scale) {
  if (example.target.empty()) return 0.0;
  const TokenIds seq = join_sequence(example.prompt, example.target);
  const ForwardCache c = model.forward(seq);
  const std::size_t first = example.prompt.size();  // position predicting target[0]
  double nll = 0.0;
  Eigen::MatrixXd d_out;
  if (grad) d_out = Eigen::MatrixXd::Zero(c.out.rows(), c.out.cols());
  for (std::size_t j = 0; j < example.target.size(); ++j) {
    const auto pos = static_cast<Eigen::Index>(first + j);
    const Eigen::VectorXd lp = log_softmax(c.out.col(pos));
    nll -= lp(example.target[j]);
    if (grad) {
      d_out.col(pos) = scale * lp.array().exp().matrix();
      d_out(example.target[j], pos) -= scale;
    }
  }
  if (grad) model.backward(c, d_out, *grad);
  return nll;
}

double sft_loss(const Network& model, const RepairTask& task, const ReasoningExample& example, std::vector<double>* grad,
                double scale) {
  return sequence_nll(model, encode_example(task, example, SftMode::trace), grad, scale);
}

double direct_output_loss(const Network& model, const RepairTask& task, const ReasoningExample& example,
                          std::vector<double>* grad, double scale) {
  return sequence_nll(model, encode_example(task, example, SftMode::direct_output), grad, scale);
}

KdTerm kd_loss(const Eigen::VectorXd& student_logits, const Eigen::VectorXd& teacher_logits, int true_label,
               const KdConfig& config) {
  config.check();
  if (student_logits.size() != teacher_logits.size()) throw InputError("student and teacher logits differ in length");
  if (true_label < 0 || true_label >= student_logits.size()) throw InputError("label outside the logit range");
  const double tau = config.temperature_tau;
  const Eigen::VectorXd ls = log_softmax(student_logits);
  const Eigen::VectorXd ls_tau = log_softmax(student_logits, tau);
  const Eigen::VectorXd lt_tau = log_softmax(teacher_logits, tau);
  const Eigen::VectorXd pt_tau = lt_tau.array().exp();
  const double ce = -ls(true_label);
  const double kl = (pt_tau.array() * (lt_tau - ls_tau).array()).sum();

  KdTerm out;
  out.loss = config.alpha * ce + (1.0 - config.alpha) * tau * tau * kl;
  Eigen::VectorXd d_ce = ls.array().exp();
  d_ce(true_label) -= 1.0;
  const Eigen::VectorXd d_kl = (ls_tau.array().exp() - pt_tau.array()).matrix() / tau;
  out.d_student = config.alpha * d_ce + (1.0 - config.alpha) * tau * tau * d_kl;
  return out;
}

double kd_sequence_loss(const Network& student, const Eigen::MatrixXd& teacher_logits, const EncodedExample& example,
                        const KdConfig& config, std::vector<double>* grad, double scale) {
  const TokenIds seq = join_sequence(example.prompt, example.target);
  const ForwardCache c = student.forward(seq);
  if (teacher_logits.rows() != c.out.rows() || teacher_logits.cols() != c.out.cols())
    throw InputError("teacher logits do not cover the sequence");
  const std::size_t first = example.prompt.size();
  double loss = 0.0;
  Eigen::MatrixXd d_out;
  if (grad) d_out = Eigen::MatrixXd::Zero(c.out.rows(), c.out.cols());
  for (std::size_t j = 0; j < example.target.size(); ++j) {
    const auto pos = static_cast<Eigen::Index>(first + j);
    const KdTerm term = kd_loss(c.out.col(pos), teacher_logits.col(pos), example.target[j], config);
    loss += term.loss;
    if (grad) d_out.col(pos) = scale * term.d_student;
  }
  if (grad) student.backward(c, d_out, *grad);
  return loss;
}

Json SftStepRecord::to_json() const { return {{"step", step}, {"lr", lr}, {"loss", loss}, {"mode", to_string(mode)}}; }

std::vector<double> batch_gradient(const Network& model, std::span<const EncodedExample> batch, std::size_t denominator,
                                   double* loss_sum) {
  std::vector<double> grad(model.parameter_count(), 0.0);
  double total = 0.0;
  for (const auto& ex : batch) total += sequence_nll(model, ex, &grad, 1.0 / static_cast<double>(denominator));
  if (loss_sum) *loss_sum += total;
  return grad;
}

SftResult train_sft(Network& model, const std::vector<EncodedExample>& data, const SftConfig& config,
                    const Network* kd_teacher, const std::function<void(const SftStepRecord&)>& on_step) {
  config.check();
  if (config.kd && !kd_teacher) throw ConfigError("distillation enabled without a teacher network");
  SftResult result;
  std::vector<const EncodedExample*> usable;
  for (const auto& ex : data) {
    if (static_cast<int>(1 + ex.prompt.size() + ex.target.size()) > model.shape().context_window) {
      ++result.skipped;
    } else {
      usable.push_back(&ex);
    }
  }
  if (usable.empty()) throw TrainingError("no training example fits the context window");

  const std::size_t effective = static_cast<std::size_t>(config.micro_batch) * static_cast<std::size_t>(config.grad_accum_steps);
  const int steps_per_epoch = static_cast<int>((usable.size() + effective - 1) / effective);
  const int total = config.total_steps > 0 ? config.total_steps : steps_per_epoch * config.epochs;
  const int warmup = config.warmup_steps >= 0 ? config.warmup_steps : static_cast<int>(std::lround(0.1 * total));
  result.total_steps = total;

  AdamWConfig opt;
  opt.weight_decay = config.weight_decay;
  AdamWState state;
  const auto mask = model.trainable_mask();
  std::vector<double> last_good = model.params();
  Rng rng(config.seed);
  int step = 0;

  for (int epoch = 0; epoch < config.epochs && step < total; ++epoch) {
    std::vector<std::size_t> order(usable.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span(order));
    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;
    for (std::size_t begin = 0; begin < order.size() && step < total; begin += effective) {
      const std::size_t end = std::min(order.size(), begin + effective);
      const double denom = static_cast<double>(end - begin);
      std::vector<double> grad(model.parameter_count(), 0.0);
      double loss_sum = 0.0;
      // Micro-batches accumulate into one gradient; the mean is over the whole step.
      try {
        for (std::size_t i = begin; i < end; ++i) {
          const EncodedExample& ex = *usable[order[i]];
          if (config.kd) {
            const ForwardCache tc = kd_teacher->forward(join_sequence(ex.prompt, ex.target));
            loss_sum += kd_sequence_loss(model, tc.out, ex, *config.kd, &grad, 1.0 / denom);
          } else {
            loss_sum += sequence_nll(model, ex, &grad, 1.0 / denom);
          }
        }
      } catch (const NumericError& e) {
        throw TrainingError("SFT diverged at step " + std::to_string(step) + ": " + e.what());
      }
      const double mean_loss = loss_sum / denom;
      if (!std::isfinite(mean_loss)) {
        model.params() = last_good;
        throw TrainingError("SFT loss became non-finite at step " + std::to_string(step));
      }
      opt.learning_rate = lr_schedule(warmup > 0 ? step + 1 : step, config.learning_rate, warmup, total);
      last_good = model.params();
      adamw_step(model.params(), grad, state, opt, &mask);
      if (!model.all_finite()) {
        model.params() = last_good;
        throw TrainingError("SFT parameters became non-finite at step " + std::to_string(step));
      }
      SftStepRecord rec{step, opt.learning_rate, mean_loss, config.mode};
      result.history.push_back(rec);
      if (on_step) on_step(rec);
      epoch_loss += loss_sum;
      epoch_count += end - begin;
      ++step;
    }
    result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(epoch_count, 1)));
  }
  return result;
}

}  // namespace repairlab
