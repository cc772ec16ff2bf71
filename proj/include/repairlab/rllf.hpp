#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "repairlab/corpus.hpp"
#include "repairlab/policy.hpp"
#include "repairlab/sft.hpp"

namespace repairlab {

// shaping: -beta * (logp_theta - logp_ref) is added to every token's reward.
// penalty: rewards carry only the terminal score and the KL estimate enters
// the policy loss directly.
enum class KlMode { shaping, penalty };
KlMode parse_kl_mode(const std::string& s);
std::string to_string(KlMode m);

struct PpoConfig {
  double beta_kl = 0.1;
  double clip_epsilon = 0.2;
  double gamma = 1.0;
  double lambda_gae = 0.95;
  int ppo_epochs_per_batch = 5;
  double rollout_temperature = 1.0;
  int candidates_per_prompt = 3;
  double value_loss_coefficient = 0.5;

  double policy_learning_rate = 1e-5;
  double value_learning_rate = 1e-4;
  int rounds = 10;
  int prompts_per_round = 0;  // 0: every prompt each round
  int max_response_len = 128;
  double kl_ceiling = 10.0;
  bool normalize_advantages = true;
  KlMode kl_mode = KlMode::shaping;
  std::uint64_t seed = kDefaultSeed;

  void check() const;
};

struct Trajectory {
  std::string task_id;
  TokenIds prompt;
  TokenIds response;
  bool truncated = false;
  std::vector<double> logp_old;  // under the rollout policy
  std::vector<double> logp_ref;  // under the frozen reference
  double terminal_reward = 0.0;
  std::vector<double> rewards;     // per token, after shaping
  std::vector<double> values;      // T + 1 entries, last one 0
  std::vector<double> advantages;  // per token
  std::vector<double> returns;     // advantages + values
};

struct TrajectoryBatch {
  std::vector<Trajectory> samples;
  std::size_t token_count() const;
};

// Per-position scalar predictor; V(s_t) reads the position that predicts
// response token t.
class ValueModel {
 public:
  ValueModel() = default;
  ValueModel(const ModelShape& shape, std::uint64_t seed = kDefaultSeed);
  explicit ValueModel(Network net);

  // T + 1 values with the terminal entry fixed at 0.
  std::vector<double> values(std::span<const int> prompt, std::span<const int> response) const;

  Network& net() { return net_; }
  const Network& net() const { return net_; }

 private:
  Network net_;
};

struct RolloutPrompt {
  std::string task_id;
  TokenIds prompt;
};

// Samples candidates_per_prompt responses per prompt and records per-token
// log-probs under both networks (recomputed by a full forward pass).
TrajectoryBatch rollout(const Network& policy, const Network& reference, std::span<const RolloutPrompt> prompts,
                        const PpoConfig& config, Rng& rng);

// Scores each sample's terminal reward.
using RewardFn = std::function<double(const std::string& task_id, const TokenIds& prompt, const TokenIds& response)>;
void score_batch(TrajectoryBatch& batch, const RewardFn& reward);

// Fills per-token rewards from terminal rewards and, in shaping mode, the KL term.
void shape_rewards(TrajectoryBatch& batch, const PpoConfig& config);

std::vector<double> td_errors(std::span<const double> rewards, std::span<const double> values, double gamma);
std::vector<double> gae(std::span<const double> deltas, double gamma, double lambda);

// Mean over sampled tokens of logp_theta - logp_ref.
double kl_estimate(std::span<const double> logp_theta, std::span<const double> logp_ref);

// Values, advantages and returns for every sample; optional per-batch normalization.
void compute_advantages(TrajectoryBatch& batch, const ValueModel& value_model, const PpoConfig& config);
void normalize_advantages(TrajectoryBatch& batch);

// mean_t min(r_t A_t, clip(r_t, 1-eps, 1+eps) A_t)
double ppo_clip_objective(std::span<const double> ratios, std::span<const double> advantages, double epsilon);
// d objective / d ratio_t for one token (0 where the clipped branch is active).
double ppo_clip_ratio_grad(double ratio, double advantage, double epsilon, std::size_t token_count);

struct PolicyLossStats {
  double objective = 0.0;
  double clip_fraction = 0.0;
  double kl = 0.0;  // mean over tokens of logp_theta - logp_ref
};

// Negated clipped surrogate (minus beta * KL in penalty mode), so lower is
// better. Adds scale * gradient into *grad when given.
double ppo_policy_loss(const Network& policy, const TrajectoryBatch& batch, const PpoConfig& config,
                       std::vector<double>* grad = nullptr, PolicyLossStats* stats = nullptr, double scale = 1.0);

// Exact KL(policy || reference) of the next-token distributions at the given
// temperature, averaged over the response positions of the batch.
double policy_kl(const Network& policy, const Network& reference, const TrajectoryBatch& batch, double temperature);

// Mean squared error between V(s_t) and the stored returns over all tokens.
double value_loss(const ValueModel& value_model, const TrajectoryBatch& batch, std::vector<double>* grad = nullptr,
                  double scale = 1.0);

struct PpoRoundReport {
  int round = 0;
  double mean_terminal_reward = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  double value_loss = 0.0;
  double objective = 0.0;
  Json to_json() const;
};

struct PpoReport {
  std::vector<PpoRoundReport> rounds;
};

// rollout -> score -> shape -> advantages -> ppo_epochs_per_batch updates of
// both networks. TrainingError when the post-update policy_kl exceeds the ceiling;
// the policy is then restored to its state before that round.
PpoReport train_ppo(Network& policy, ValueModel& value_model, const Network& reference,
                    std::span<const RolloutPrompt> prompts, const RewardFn& reward, const PpoConfig& config,
                    const std::function<void(const PpoRoundReport&)>& on_round = {});

}  // namespace repairlab
