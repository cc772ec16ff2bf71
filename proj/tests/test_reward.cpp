#include <doctest.h>

#include <cmath>

#include "repairlab/errors.hpp"
#include "repairlab/reward.hpp"
#include "support.hpp"

using namespace repairlab;
using testsupport::max_fd_rel_error;
using testsupport::tiny_shape;

namespace {

RewardModel trained_looking(std::uint64_t seed) {
  RewardModel rm(tiny_shape(), seed);
  // Give the zero-initialized head some weight so scores differ.
  Rng rng(seed + 100);
  auto w = rm.net().tensor("head.weight");
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
  return rm;
}

EncodedPair make_pair(const std::string& x, const std::string& a, const std::string& b, int label) {
  EncodedPair p;
  p.task_id = "t";
  p.prompt = Vocabulary::encode(x);
  p.a = Vocabulary::encode(a);
  p.b = Vocabulary::encode(b);
  p.label = label;
  return p;
}

}  // namespace

TEST_CASE("scores are deterministic and start at zero") {
  const RewardModel fresh(tiny_shape(), 3);
  const TokenIds x = Vocabulary::encode("fix"), y = Vocabulary::encode("a+b");
  CHECK(fresh.score(x, y) == 0.0);
  CHECK(fresh.score(x, {}) == 0.0);
  const RewardModel rm = trained_looking(3);
  CHECK(rm.score(x, y) == rm.score(x, y));
  CHECK(rm.score(x, y) != 0.0);
  CHECK_THROWS_AS(rm.score(x, TokenIds(40, 'a')), InputError);
}

TEST_CASE("score gradient matches finite differences") {
  RewardModel rm = trained_looking(4);
  REQUIRE(rm.net().parameter_count() <= 5000);
  const TokenIds x = Vocabulary::encode("ab"), y = Vocabulary::encode("cde");
  std::vector<double> g(rm.net().parameter_count(), 0.0);
  rm.score_with_grad(x, y, 1.0, g);
  CHECK(max_fd_rel_error(rm.net().params(), g, [&] { return rm.score(x, y); }) <= 1e-4);
}

TEST_CASE("preference probability") {
  CHECK(pref_prob(1.7, 1.7) == 0.5);
  CHECK(std::abs(pref_prob(std::log(3.0), 0.0) - 0.75) < 1e-15);
  for (const double d : {-40.0, -2.0, 0.3, 5.0, 800.0}) CHECK(std::abs(pref_prob(d, 0.1) + pref_prob(0.1, d) - 1.0) < 1e-15);
  CHECK(pref_prob(-800.0, 0.0) >= 0.0);
  CHECK_THROWS_AS(pref_prob(std::nan(""), 0.0), NumericError);
}

TEST_CASE("pair likelihood") {
  CHECK(std::abs(pair_nll(0.0, 1) - std::log(2.0)) < 1e-15);
  CHECK(std::abs(pair_nll(0.0, 0) - std::log(2.0)) < 1e-15);
  CHECK(pair_nll(50.0, 1) < 1e-20);
  CHECK(pair_nll(-50.0, 0) < 1e-20);
  CHECK(std::isfinite(pair_nll(-1000.0, 1)));
  CHECK(std::abs(pair_nll(-1000.0, 1) - 1000.0) < 1e-9);
}

TEST_CASE("batch loss: ln 2 at equal scores, invariant to a common shift") {
  const std::vector<EncodedPair> batch = {make_pair("p", "good", "bad", 1), make_pair("q", "xy", "z", 0),
                                          make_pair("r", "same?", "other", 1)};
  const RewardModel fresh(tiny_shape(), 5);
  CHECK(std::abs(rm_loss(fresh, batch) - std::log(2.0)) < 1e-15);

  RewardModel rm = trained_looking(5);
  const double before = rm_loss(rm, batch);
  rm.net().tensor("head.bias")(0, 0) += 123.456;
  CHECK(std::abs(rm_loss(rm, batch) - before) < 1e-12);
}

TEST_CASE("batch loss gradient matches finite differences") {
  RewardModel rm = trained_looking(6);
  const std::vector<EncodedPair> batch = {make_pair("p", "good", "bad", 1), make_pair("q", "xy", "", 0)};
  std::vector<double> g(rm.net().parameter_count(), 0.0);
  rm_loss(rm, batch, &g);
  CHECK(max_fd_rel_error(rm.net().params(), g, [&] { return rm_loss(rm, batch); }) <= 1e-4);
}

TEST_CASE("pairwise accuracy counts ties as half") {
  const RewardModel fresh(tiny_shape(), 1);
  const std::vector<EncodedPair> pairs = {make_pair("p", "a", "b", 1), make_pair("p", "c", "d", 0)};
  CHECK(pairwise_accuracy(fresh, pairs) == 0.5);
}

TEST_CASE("training learns a planted preference") {
  std::vector<EncodedPair> pairs;
  Rng rng(8);
  for (int i = 0; i < 60; ++i) {
    const std::string stem(1, static_cast<char>('a' + rng.below(26)));
    const bool a_good = rng.below(2) == 0;
    pairs.push_back(make_pair("x", stem + (a_good ? "Y" : "N"), stem + (a_good ? "N" : "Y"), a_good ? 1 : 0));
  }
  RewardModel rm(tiny_shape(), 9);
  RmConfig c;
  c.learning_rate = 1e-2;
  c.epochs = 5;
  const RmResult r = train_reward_model(rm, pairs, c);
  CHECK(r.train_pairs + r.heldout_pairs == 60);
  CHECK(r.heldout_pairs == 12);
  CHECK(r.epoch_loss.back() < r.epoch_loss.front());
  CHECK(r.heldout_accuracy >= 0.9);
  CHECK(r.to_json().at("heldout_accuracy") == r.heldout_accuracy);
}

TEST_CASE("default recipe") {
  const RmConfig c;
  CHECK(c.learning_rate == 5e-5);
  CHECK(c.epochs == 3);
  CHECK(c.micro_batch * c.grad_accum_steps == 16);
}
