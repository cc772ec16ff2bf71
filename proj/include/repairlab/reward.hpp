#pragma once

#include <span>
#include <vector>

#include "repairlab/corpus.hpp"
#include "repairlab/policy.hpp"

namespace repairlab {

struct RmConfig {
  double learning_rate = 5e-5;
  int epochs = 3;
  int micro_batch = 4;
  int grad_accum_steps = 4;
  double weight_decay = 0.0;
  double heldout_fraction = 0.2;
  std::uint64_t seed = kDefaultSeed;

  void check() const;
};

// Scalar scorer R(x, y): the policy architecture with a one-unit head, read
// at the position of the last response token.
class RewardModel {
 public:
  RewardModel() = default;
  // The head starts at zero, so every score is 0 until trained.
  RewardModel(const ModelShape& shape, std::uint64_t seed = kDefaultSeed);
  explicit RewardModel(Network net);

  double score(std::span<const int> prompt, std::span<const int> response) const;
  // Adds d_score * dR/dtheta into grad and returns the score.
  double score_with_grad(std::span<const int> prompt, std::span<const int> response, double d_score,
                         std::vector<double>& grad) const;

  Network& net() { return net_; }
  const Network& net() const { return net_; }

 private:
  Network net_;
};

// sigma(score_a - score_b)
double pref_prob(double score_a, double score_b);

struct EncodedPair {
  std::string task_id;
  TokenIds prompt;
  TokenIds a;
  TokenIds b;
  int label = 1;  // 1: a preferred
};

EncodedPair encode_pair(const RepairTask& task, const PreferencePair& pair);

// Per-pair negative log-likelihood given the score margin a - b.
double pair_nll(double margin, int label);

// Mean pair_nll over the batch; adds scale * gradient into *grad when given.
double rm_loss(const RewardModel& rm, std::span<const EncodedPair> batch, std::vector<double>* grad = nullptr,
               double scale = 1.0);

// Fraction of pairs whose score order agrees with the label; ties count 1/2.
double pairwise_accuracy(const RewardModel& rm, std::span<const EncodedPair> pairs);

struct RmResult {
  double heldout_accuracy = 0.0;
  double train_accuracy = 0.0;
  std::vector<double> epoch_loss;
  std::size_t train_pairs = 0;
  std::size_t heldout_pairs = 0;
  Json to_json() const;
};

// Seeded held-out split, then epochs of AdamW on rm_loss.
RmResult train_reward_model(RewardModel& rm, const std::vector<EncodedPair>& pairs, const RmConfig& config);

// Same loop on an explicit split.
RmResult train_reward_model(RewardModel& rm, const std::vector<EncodedPair>& train,
                            const std::vector<EncodedPair>& heldout, const RmConfig& config);

}  // namespace repairlab
