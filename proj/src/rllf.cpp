#include "repairlab/rllf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "repairlab/errors.hpp"

namespace repairlab {

KlMode parse_kl_mode(const std::string& s) {
  if (s == "shaping") return KlMode::shaping;
  if (s == "penalty") return KlMode::penalty;
  throw ConfigError("unknown kl_mode '" + s + "' (expected shaping or penalty)");
}

std::string to_string(KlMode m) { return m == KlMode::shaping ? "shaping" : "penalty"; }

void PpoConfig::check() const {
  if (beta_kl < 0.0) throw ValidationError("beta_kl must be >= 0");
  if (!(clip_epsilon > 0.0)) throw ValidationError("clip_epsilon must be > 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in (0, 1]");
  if (lambda_gae < 0.0 || lambda_gae > 1.0) throw ValidationError("lambda_gae must lie in [0, 1]");
  if (ppo_epochs_per_batch < 1 || candidates_per_prompt < 1 || rounds < 0 || max_response_len < 1)
    throw ValidationError("PPO counts must be positive");
  if (!(rollout_temperature > 0.0)) throw ValidationError("rollout_temperature must be > 0");
  if (!(policy_learning_rate > 0.0 && value_learning_rate > 0.0)) throw ValidationError("PPO learning rates must be > 0");
  if (!(kl_ceiling > 0.0)) throw ValidationError("kl_ceiling must be > 0");
}

std::size_t TrajectoryBatch::token_count() const {
  std::size_t n = 0;
  for (const auto& s : samples) n += s.response.size();
  return n;
}

ValueModel::ValueModel(const ModelShape& shape, std::uint64_t seed) : net_(shape, HeadKind::scalar, AdapterSpec{}, seed, 0.0) {}

ValueModel::ValueModel(Network net) : net_(std::move(net)) {
  if (net_.head() != HeadKind::scalar) throw InputError("value model needs a scalar head");
}

std::vector<double> ValueModel::values(std::span<const int> prompt, std::span<const int> response) const {
  std::vector<double> v(response.size() + 1, 0.0);
  if (response.empty()) return v;
  const ForwardCache c = net_.forward(join_sequence(prompt, response));
  for (std::size_t t = 0; t < response.size(); ++t) v[t] = c.out(0, static_cast<Eigen::Index>(prompt.size() + t));
  return v;
}

TrajectoryBatch rollout(const Network& policy, const Network& reference, std::span<const RolloutPrompt> prompts,
                        const PpoConfig& config, Rng& rng) {
  TrajectoryBatch batch;
  for (const auto& p : prompts) {
    if (static_cast<int>(p.prompt.size()) + 1 >= policy.shape().context_window)
      throw InputError("prompt of " + p.task_id + " leaves no room for a response");
    for (int c = 0; c < config.candidates_per_prompt; ++c) {
      SampleOptions opts;
      opts.temperature = config.rollout_temperature;
      opts.max_len = config.max_response_len;
      opts.seed = rng.next_u64();
      const SampleResult s = sample(policy, p.prompt, opts);
      Trajectory tr;
      tr.task_id = p.task_id;
      tr.prompt = p.prompt;
      tr.response = s.tokens;
      tr.truncated = s.truncated;
      if (!tr.response.empty()) {
        tr.logp_old = sequence_logprob(policy, tr.prompt, tr.response, config.rollout_temperature).per_token;
        tr.logp_ref = sequence_logprob(reference, tr.prompt, tr.response, config.rollout_temperature).per_token;
      }
      batch.samples.push_back(std::move(tr));
    }
  }
  return batch;
}

void score_batch(TrajectoryBatch& batch, const RewardFn& reward) {
  for (auto& s : batch.samples) {
    s.terminal_reward = reward(s.task_id, s.prompt, s.response);
    if (!std::isfinite(s.terminal_reward)) throw NumericError("non-finite reward for " + s.task_id);
  }
}

void shape_rewards(TrajectoryBatch& batch, const PpoConfig& config) {
  for (auto& s : batch.samples) {
    const std::size_t T = s.response.size();
    if (s.logp_old.size() != T || s.logp_ref.size() != T)
      throw StateError("sample of " + s.task_id + " lacks per-token log-probs under both policies");
    s.rewards.assign(T, 0.0);
    if (config.kl_mode == KlMode::shaping)
      for (std::size_t t = 0; t < T; ++t) s.rewards[t] = -config.beta_kl * (s.logp_old[t] - s.logp_ref[t]);
    if (T > 0) s.rewards[T - 1] += s.terminal_reward;
  }
}

std::vector<double> td_errors(std::span<const double> rewards, std::span<const double> values, double gamma) {
  if (values.size() != rewards.size() + 1) throw InputError("values must have one more entry than rewards");
  std::vector<double> d(rewards.size());
  for (std::size_t t = 0; t < rewards.size(); ++t) d[t] = rewards[t] + gamma * values[t + 1] - values[t];
  return d;
}

std::vector<double> gae(std::span<const double> deltas, double gamma, double lambda) {
  std::vector<double> a(deltas.size());
  double next = 0.0;
  for (std::size_t i = deltas.size(); i-- > 0;) {
    if (!std::isfinite(deltas[i])) throw NumericError("non-finite TD error");
    next = deltas[i] + gamma * lambda * next;
    a[i] = next;
  }
  return a;
}

double kl_estimate(std::span<const double> logp_theta, std::span<const double> logp_ref) {
  if (logp_theta.size() != logp_ref.size()) throw InputError("log-prob sequences differ in length");
  if (logp_theta.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < logp_theta.size(); ++i) s += logp_theta[i] - logp_ref[i];
  return s / static_cast<double>(logp_theta.size());
}

void compute_advantages(TrajectoryBatch& batch, const ValueModel& value_model, const PpoConfig& config) {
  for (auto& s : batch.samples) {
    s.values = value_model.values(s.prompt, s.response);
    const auto deltas = td_errors(s.rewards, s.values, config.gamma);
    s.advantages = gae(deltas, config.gamma, config.lambda_gae);
    s.returns.resize(s.advantages.size());
    for (std::size_t t = 0; t < s.advantages.size(); ++t) s.returns[t] = s.advantages[t] + s.values[t];
  }
  if (config.normalize_advantages) normalize_advantages(batch);
}

void normalize_advantages(TrajectoryBatch& batch) {
  std::size_t n = 0;
  for (const auto& s : batch.samples) n += s.advantages.size();
  if (n < 2) return;
  double mean = 0.0;
  for (const auto& s : batch.samples)
    for (double a : s.advantages) mean += a;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (const auto& s : batch.samples)
    for (double a : s.advantages) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / static_cast<double>(n));
  for (auto& s : batch.samples)
    for (double& a : s.advantages) a = (a - mean) / (sd + 1e-8);
}

double ppo_clip_objective(std::span<const double> ratios, std::span<const double> advantages, double epsilon) {
  if (ratios.size() != advantages.size()) throw InputError("ratios and advantages differ in length");
  if (ratios.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double r = ratios[i];
    if (!std::isfinite(r) || r <= 0.0) throw NumericError("ratio must be finite and positive");
    s += std::min(r * advantages[i], std::clamp(r, 1.0 - epsilon, 1.0 + epsilon) * advantages[i]);
  }
  return s / static_cast<double>(ratios.size());
}

double ppo_clip_ratio_grad(double ratio, double advantage, double epsilon, std::size_t token_count) {
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon) * advantage;
  return unclipped <= clipped ? advantage / static_cast<double>(token_count) : 0.0;
}

double ppo_policy_loss(const Network& policy, const TrajectoryBatch& batch, const PpoConfig& config,
                       std::vector<double>* grad, PolicyLossStats* stats, double scale) {
  const std::size_t n = batch.token_count();
  if (n == 0) throw InputError("policy loss over an empty batch");
  const double tau = config.rollout_temperature;
  const double eps = config.clip_epsilon;
  double objective = 0.0, kl = 0.0;
  std::size_t clipped = 0;
  for (const auto& s : batch.samples) {
    const std::size_t T = s.response.size();
    if (T == 0) continue;
    if (s.advantages.size() != T || s.logp_old.size() != T || s.logp_ref.size() != T)
      throw StateError("sample of " + s.task_id + " is missing advantages or log-probs");
    const ForwardCache c = policy.forward(join_sequence(s.prompt, s.response));
    Eigen::MatrixXd d_out;
    if (grad) d_out = Eigen::MatrixXd::Zero(c.out.rows(), c.out.cols());
    for (std::size_t t = 0; t < T; ++t) {
      const auto pos = static_cast<Eigen::Index>(s.prompt.size() + t);
      const Eigen::VectorXd lp = log_softmax(c.out.col(pos), tau);
      const int y = s.response[t];
      const double ratio = std::exp(lp(y) - s.logp_old[t]);
      if (!std::isfinite(ratio)) throw NumericError("non-finite probability ratio in " + s.task_id);
      const double a = s.advantages[t];
      objective += std::min(ratio * a, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * a);
      if (std::abs(ratio - 1.0) > eps) ++clipped;
      kl += lp(y) - s.logp_ref[t];
      if (grad) {
        // d loss / d logp_theta(y_t)
        double d_logp = -ppo_clip_ratio_grad(ratio, a, eps, n) * ratio;
        if (config.kl_mode == KlMode::penalty) d_logp += config.beta_kl / static_cast<double>(n);
        Eigen::VectorXd d = -lp.array().exp();
        d(y) += 1.0;
        d_out.col(pos) = (scale * d_logp / tau) * d;
      }
    }
    if (grad) policy.backward(c, d_out, *grad);
  }
  objective /= static_cast<double>(n);
  kl /= static_cast<double>(n);
  if (stats) *stats = {objective, static_cast<double>(clipped) / static_cast<double>(n), kl};
  const double loss = config.kl_mode == KlMode::penalty ? -objective + config.beta_kl * kl : -objective;
  if (!std::isfinite(loss)) throw NumericError("non-finite policy loss");
  return loss;
}

double policy_kl(const Network& policy, const Network& reference, const TrajectoryBatch& batch, double temperature) {
  double kl = 0.0;
  std::size_t n = 0;
  for (const auto& s : batch.samples) {
    if (s.response.empty()) continue;
    const TokenIds seq = join_sequence(s.prompt, s.response);
    const ForwardCache a = policy.forward(seq), b = reference.forward(seq);
    for (std::size_t t = 0; t < s.response.size(); ++t) {
      const auto pos = static_cast<Eigen::Index>(s.prompt.size() + t);
      const Eigen::VectorXd lp = log_softmax(a.out.col(pos), temperature);
      const Eigen::VectorXd lq = log_softmax(b.out.col(pos), temperature);
      kl += (lp.array().exp() * (lp - lq).array()).sum();
      ++n;
    }
  }
  return n == 0 ? 0.0 : kl / static_cast<double>(n);
}

double value_loss(const ValueModel& value_model, const TrajectoryBatch& batch, std::vector<double>* grad, double scale) {
  const std::size_t n = batch.token_count();
  if (n == 0) throw InputError("value loss over an empty batch");
  double loss = 0.0;
  for (const auto& s : batch.samples) {
    const std::size_t T = s.response.size();
    if (T == 0) continue;
    if (s.returns.size() != T) throw StateError("sample of " + s.task_id + " has no returns");
    const ForwardCache c = value_model.net().forward(join_sequence(s.prompt, s.response));
    Eigen::MatrixXd d_out;
    if (grad) d_out = Eigen::MatrixXd::Zero(1, c.out.cols());
    for (std::size_t t = 0; t < T; ++t) {
      const auto pos = static_cast<Eigen::Index>(s.prompt.size() + t);
      const double err = c.out(0, pos) - s.returns[t];
      loss += err * err;
      if (grad) d_out(0, pos) = scale * 2.0 * err / static_cast<double>(n);
    }
    if (grad) value_model.net().backward(c, d_out, *grad);
  }
  return loss / static_cast<double>(n);
}

Json PpoRoundReport::to_json() const {
  return {{"round", round},
          {"mean_terminal_reward", mean_terminal_reward},
          {"mean_kl", mean_kl},
          {"clip_fraction", clip_fraction},
          {"value_loss", value_loss},
          {"objective", objective}};
}

PpoReport train_ppo(Network& policy, ValueModel& value_model, const Network& reference,
                    std::span<const RolloutPrompt> prompts, const RewardFn& reward, const PpoConfig& config,
                    const std::function<void(const PpoRoundReport&)>& on_round) {
  config.check();
  if (prompts.empty()) throw TrainingError("no prompts for PPO");
  if (policy.head() != HeadKind::lm || reference.head() != HeadKind::lm) throw InputError("PPO needs language-model heads");

  AdamWConfig popt;
  popt.learning_rate = config.policy_learning_rate;
  AdamWConfig vopt;
  vopt.learning_rate = config.value_learning_rate;
  AdamWState pstate, vstate;
  const auto pmask = policy.trainable_mask();
  const auto vmask = value_model.net().trainable_mask();
  Rng rng(config.seed);
  PpoReport report;

  std::vector<std::size_t> order(prompts.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t per_round = config.prompts_per_round > 0
                                    ? std::min(prompts.size(), static_cast<std::size_t>(config.prompts_per_round))
                                    : prompts.size();

  for (int round = 0; round < config.rounds; ++round) {
    std::vector<RolloutPrompt> selected;
    if (per_round < prompts.size()) rng.shuffle(std::span(order));
    for (std::size_t i = 0; i < per_round; ++i) selected.push_back(prompts[order[i]]);

    TrajectoryBatch batch = rollout(policy, reference, selected, config, rng);
    score_batch(batch, reward);
    shape_rewards(batch, config);
    compute_advantages(batch, value_model, config);

    PpoRoundReport rep;
    rep.round = round;
    for (const auto& s : batch.samples) {
      rep.mean_terminal_reward += s.terminal_reward;
      rep.mean_kl += kl_estimate(s.logp_old, s.logp_ref);
    }
    rep.mean_terminal_reward /= static_cast<double>(batch.samples.size());
    rep.mean_kl /= static_cast<double>(batch.samples.size());

    const std::vector<double> before = policy.params();
    for (int epoch = 0; epoch < config.ppo_epochs_per_batch; ++epoch) {
      std::vector<double> pgrad(policy.parameter_count(), 0.0);
      PolicyLossStats stats;
      ppo_policy_loss(policy, batch, config, &pgrad, &stats);
      adamw_step(policy.params(), pgrad, pstate, popt, &pmask);

      std::vector<double> vgrad(value_model.net().parameter_count(), 0.0);
      const double vl = value_loss(value_model, batch, &vgrad, config.value_loss_coefficient);
      adamw_step(value_model.net().params(), vgrad, vstate, vopt, &vmask);
      if (epoch == 0) {
        rep.objective = stats.objective;
        rep.value_loss = vl;
      }
      rep.clip_fraction = stats.clip_fraction;
    }
    if (!policy.all_finite() || !value_model.net().all_finite()) {
      policy.params() = before;
      throw TrainingError("PPO parameters became non-finite in round " + std::to_string(round));
    }
    const double drift = policy_kl(policy, reference, batch, config.rollout_temperature);
    if (!(drift <= config.kl_ceiling)) {
      policy.params() = before;
      throw TrainingError("KL " + std::to_string(drift) + " exceeds the ceiling " +
                          std::to_string(config.kl_ceiling) + " in round " + std::to_string(round));
    }
    report.rounds.push_back(rep);
    if (on_round) on_round(rep);
  }
  return report;
}

}  // namespace repairlab
