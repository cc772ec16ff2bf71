#include "repairlab/reward.hpp"

#include <cmath>
#include <numeric>

#include "repairlab/errors.hpp"
#include "repairlab/sft.hpp"

namespace repairlab {

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

void RmConfig::check() const {
  if (!(learning_rate > 0.0)) throw ValidationError("reward learning_rate must be positive");
  if (epochs < 1 || micro_batch < 1 || grad_accum_steps < 1) throw ValidationError("reward batch settings must be >= 1");
  if (heldout_fraction < 0.0 || heldout_fraction >= 1.0) throw ValidationError("heldout_fraction must be in [0, 1)");
}

RewardModel::RewardModel(const ModelShape& shape, std::uint64_t seed)
    : net_(shape, HeadKind::scalar, AdapterSpec{}, seed, 0.0) {}

RewardModel::RewardModel(Network net) : net_(std::move(net)) {
  if (net_.head() != HeadKind::scalar) throw InputError("reward model needs a scalar head");
}

namespace {

// The position that reads the last response token; the last prompt token when
// the response is empty.
Eigen::Index score_position(std::size_t prompt_len, std::size_t response_len) {
  return static_cast<Eigen::Index>(prompt_len + response_len);
}

}  // namespace

double RewardModel::score(std::span<const int> prompt, std::span<const int> response) const {
  const ForwardCache c = net_.forward(join_sequence(prompt, response));
  return c.out(0, score_position(prompt.size(), response.size()));
}

double RewardModel::score_with_grad(std::span<const int> prompt, std::span<const int> response, double d_score,
                                    std::vector<double>& grad) const {
  const ForwardCache c = net_.forward(join_sequence(prompt, response));
  const Eigen::Index pos = score_position(prompt.size(), response.size());
  Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(1, c.out.cols());
  d_out(0, pos) = d_score;
  net_.backward(c, d_out, grad);
  return c.out(0, pos);
}

double pref_prob(double score_a, double score_b) {
  if (!std::isfinite(score_a) || !std::isfinite(score_b)) throw NumericError("non-finite reward score");
  return sigmoid(score_a - score_b);
}

EncodedPair encode_pair(const RepairTask& task, const PreferencePair& pair) {
  return {task.id, Vocabulary::encode(render_student_prompt(task)), Vocabulary::encode(pair.candidate_a),
          Vocabulary::encode(pair.candidate_b), pair.label};
}

double pair_nll(double margin, int label) {
  // -[p log sigma(m) + (1-p) log sigma(-m)]
  return label == 1 ? softplus(-margin) : softplus(margin);
}

double rm_loss(const RewardModel& rm, std::span<const EncodedPair> batch, std::vector<double>* grad, double scale) {
  if (batch.empty()) throw InputError("reward loss over an empty batch");
  const double n = static_cast<double>(batch.size());
  double total = 0.0;
  for (const auto& p : batch) {
    const double sa = rm.score(p.prompt, p.a);
    const double sb = rm.score(p.prompt, p.b);
    const double margin = sa - sb;
    total += pair_nll(margin, p.label);
    if (grad) {
      const double d_margin = scale * (sigmoid(margin) - static_cast<double>(p.label)) / n;
      rm.score_with_grad(p.prompt, p.a, d_margin, *grad);
      rm.score_with_grad(p.prompt, p.b, -d_margin, *grad);
    }
  }
  const double loss = total / n;
  if (!std::isfinite(loss)) throw NumericError("non-finite reward-model loss");
  return loss;
}

double pairwise_accuracy(const RewardModel& rm, std::span<const EncodedPair> pairs) {
  if (pairs.empty()) return 0.0;
  double hits = 0.0;
  for (const auto& p : pairs) {
    const double margin = rm.score(p.prompt, p.a) - rm.score(p.prompt, p.b);
    if (margin == 0.0) {
      hits += 0.5;
    } else if ((margin > 0.0) == (p.label == 1)) {
      hits += 1.0;
    }
  }
  return hits / static_cast<double>(pairs.size());
}

Json RmResult::to_json() const {
  return {{"heldout_accuracy", heldout_accuracy},
          {"train_accuracy", train_accuracy},
          {"epoch_loss", epoch_loss},
          {"train_pairs", train_pairs},
          {"heldout_pairs", heldout_pairs}};
}

RmResult train_reward_model(RewardModel& rm, const std::vector<EncodedPair>& pairs, const RmConfig& config) {
  config.check();
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed);
  rng.shuffle(std::span(order));
  const auto n_held = static_cast<std::size_t>(std::llround(config.heldout_fraction * static_cast<double>(pairs.size())));
  std::vector<EncodedPair> train, held;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_held ? held : train).push_back(pairs[order[i]]);
  return train_reward_model(rm, train, held, config);
}

RmResult train_reward_model(RewardModel& rm, const std::vector<EncodedPair>& train,
                            const std::vector<EncodedPair>& heldout, const RmConfig& config) {
  config.check();
  if (train.empty()) throw TrainingError("no preference pairs to train on");
  RmResult result;
  result.train_pairs = train.size();
  result.heldout_pairs = heldout.size();

  AdamWConfig opt;
  opt.learning_rate = config.learning_rate;
  opt.weight_decay = config.weight_decay;
  AdamWState state;
  const auto mask = rm.net().trainable_mask();
  const std::size_t effective = static_cast<std::size_t>(config.micro_batch) * static_cast<std::size_t>(config.grad_accum_steps);
  Rng rng(Rng::splitmix(config.seed));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += effective) {
      const std::size_t end = std::min(order.size(), begin + effective);
      std::vector<EncodedPair> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(train[order[i]]);
      std::vector<double> grad(rm.net().parameter_count(), 0.0);
      const double loss = rm_loss(rm, batch, &grad);
      if (!std::isfinite(loss)) throw TrainingError("reward-model loss diverged");
      epoch_loss += loss * static_cast<double>(batch.size());
      adamw_step(rm.net().params(), grad, state, opt, &mask);
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(train.size()));
  }
  result.train_accuracy = pairwise_accuracy(rm, train);
  result.heldout_accuracy = heldout.empty() ? result.train_accuracy : pairwise_accuracy(rm, heldout);
  return result;
}

}  // namespace repairlab
