#include "repairlab/policy.hpp"

#include <algorithm>
#include <cmath>

#include "repairlab/errors.hpp"

namespace repairlab {

TokenIds Vocabulary::encode(std::string_view text) {
  TokenIds ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids)
    if (id >= 0 && id < 256) out += static_cast<char>(id);
  return out;
}

Json ModelShape::to_json() const {
  return {{"vocab_size", vocab_size}, {"context_window", context_window}, {"embed_dim", embed_dim},
          {"window", window},         {"hidden_dim", hidden_dim}};
}

ModelShape ModelShape::from_json(const Json& j) {
  ModelShape s;
  s.vocab_size = j.value("vocab_size", s.vocab_size);
  s.context_window = j.value("context_window", s.context_window);
  s.embed_dim = j.value("embed_dim", s.embed_dim);
  s.window = j.value("window", s.window);
  s.hidden_dim = j.value("hidden_dim", s.hidden_dim);
  return s;
}

Json AdapterSpec::to_json() const {
  return {{"enabled", enabled}, {"rank", rank}, {"alpha", alpha}, {"dropout", dropout}};
}

AdapterSpec AdapterSpec::from_json(const Json& j) {
  AdapterSpec a;
  a.enabled = j.value("enabled", a.enabled);
  a.rank = j.value("rank", a.rank);
  a.alpha = j.value("alpha", a.alpha);
  a.dropout = j.value("dropout", a.dropout);
  return a;
}

LowRankAdapter LowRankAdapter::init(int d_out, int d_in, int rank, double alpha, double dropout, Rng& rng) {
  LowRankAdapter a;
  a.rank = rank;
  a.alpha = alpha;
  a.dropout_rate = dropout;
  a.A.resize(rank, d_in);
  const double std_a = 1.0 / std::sqrt(static_cast<double>(d_in));
  for (Eigen::Index i = 0; i < a.A.size(); ++i) a.A.data()[i] = rng.normal() * std_a;
  a.B = Eigen::MatrixXd::Zero(d_out, rank);
  return a;
}

Eigen::MatrixXd apply_adapter(const Eigen::MatrixXd& base_weight, const LowRankAdapter& adapter, bool train_mode,
                              Rng* rng) {
  if (adapter.A.rows() != adapter.rank || adapter.B.cols() != adapter.rank)
    throw InputError("adapter factors do not match its rank");
  if (adapter.B.rows() != base_weight.rows() || adapter.A.cols() != base_weight.cols())
    throw InputError("adapter shape does not match the base weight");
  if (adapter.dropout_rate < 0.0 || adapter.dropout_rate >= 1.0) throw InputError("adapter dropout must be in [0, 1)");
  Eigen::MatrixXd a = adapter.A;
  if (train_mode && adapter.dropout_rate > 0.0) {
    if (!rng) throw InputError("train-mode adapter dropout needs a random generator");
    const double keep = 1.0 - adapter.dropout_rate;
    for (Eigen::Index c = 0; c < a.cols(); ++c) a.col(c) *= rng->uniform() < keep ? 1.0 / keep : 0.0;
  }
  return base_weight + adapter.scale() * adapter.B * a;
}

Network::Network(ModelShape shape, HeadKind head, AdapterSpec adapter, std::uint64_t seed, double head_init_scale)
    : shape_(shape), head_(head), adapter_(adapter) {
  if (shape_.vocab_size < 1 || shape_.embed_dim < 1 || shape_.hidden_dim < 1 || shape_.window < 1 ||
      shape_.context_window < 1)
    throw InputError("model dimensions must be positive");
  if (adapter_.enabled && (adapter_.rank < 1 || adapter_.dropout < 0.0 || adapter_.dropout >= 1.0))
    throw InputError("invalid adapter specification");
  build_registry();

  Rng rng(seed);
  auto fill = [&](std::string_view name, double stddev) {
    auto m = tensor(name);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * stddev;
  };
  const double in = shape_.input_dim(), hid = shape_.hidden_dim;
  fill("embedding", 1.0);
  fill("hidden1.weight", 1.0 / std::sqrt(in));
  fill("hidden2.weight", 1.0 / std::sqrt(hid));
  if (head_init_scale != 0.0) fill("head.weight", head_init_scale / std::sqrt(hid));
  if (adapter_.enabled) {
    fill("hidden1.lora_a", 1.0 / std::sqrt(in));
    fill("hidden2.lora_a", 1.0 / std::sqrt(hid));
  }
}

void Network::build_registry() {
  registry_.clear();
  std::size_t offset = 0;
  auto add = [&](std::string name, int rows, int cols, bool trainable) {
    registry_.push_back({std::move(name), rows, cols, offset, trainable});
    offset += registry_.back().size();
  };
  const bool base_trainable = !adapter_.enabled;
  const int in = shape_.input_dim(), hid = shape_.hidden_dim;
  add("embedding", shape_.embed_dim, shape_.vocab_size, base_trainable);
  add("hidden1.weight", hid, in, base_trainable);
  add("hidden1.bias", hid, 1, base_trainable);
  add("hidden2.weight", hid, hid, base_trainable);
  add("hidden2.bias", hid, 1, base_trainable);
  if (adapter_.enabled) {
    add("hidden1.lora_a", adapter_.rank, in, true);
    add("hidden1.lora_b", hid, adapter_.rank, true);
    add("hidden2.lora_a", adapter_.rank, hid, true);
    add("hidden2.lora_b", hid, adapter_.rank, true);
  }
  add("head.weight", output_dim(), hid, true);
  add("head.bias", output_dim(), 1, true);
  params_.assign(offset, 0.0);
}

const TensorSlot& Network::slot(std::string_view name) const {
  for (const auto& s : registry_)
    if (s.name == name) return s;
  throw InputError("no tensor named " + std::string(name));
}

Eigen::Map<Eigen::MatrixXd> Network::tensor(std::string_view name) {
  const auto& s = slot(name);
  return {params_.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<const Eigen::MatrixXd> Network::tensor(std::string_view name) const {
  const auto& s = slot(name);
  return {params_.data() + s.offset, s.rows, s.cols};
}

std::vector<char> Network::trainable_mask() const {
  std::vector<char> mask(params_.size(), 0);
  for (const auto& s : registry_)
    if (s.trainable) std::fill_n(mask.begin() + static_cast<long>(s.offset), s.size(), 1);
  return mask;
}

bool Network::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](double v) { return std::isfinite(v); });
}

LowRankAdapter Network::adapter(int layer) const {
  if (!adapter_.enabled) throw StateError("network has no adapter attached");
  if (layer != 1 && layer != 2) throw InputError("adapter layer must be 1 or 2");
  const std::string prefix = "hidden" + std::to_string(layer);
  LowRankAdapter a;
  a.rank = adapter_.rank;
  a.alpha = adapter_.alpha;
  a.dropout_rate = adapter_.dropout;
  a.A = tensor(prefix + ".lora_a");
  a.B = tensor(prefix + ".lora_b");
  return a;
}

void Network::check_tokens(std::span<const int> tokens) const {
  if (tokens.empty()) throw InputError("empty token sequence");
  if (static_cast<int>(tokens.size()) > shape_.context_window)
    throw InputError("sequence of " + std::to_string(tokens.size()) + " tokens exceeds the context window of " +
                     std::to_string(shape_.context_window));
  for (int id : tokens)
    if (id < 0 || id >= shape_.vocab_size) throw InputError("token id " + std::to_string(id) + " out of vocabulary");
}

Eigen::VectorXd Network::input_column(std::span<const int> tokens, std::size_t t,
                                      const Eigen::VectorXd& prefix_mean) const {
  const auto emb = tensor("embedding");
  const int d = shape_.embed_dim;
  Eigen::VectorXd x(shape_.input_dim());
  for (int k = 0; k < shape_.window; ++k) {
    const long pos = static_cast<long>(t) - k;
    const int id = pos >= 0 ? tokens[static_cast<std::size_t>(pos)] : Vocabulary::kPad % shape_.vocab_size;
    x.segment(k * d, d) = emb.col(id);
  }
  x.segment(shape_.window * d, d) = prefix_mean;
  return x;
}

ForwardCache Network::forward(std::span<const int> tokens, const ForwardOptions& options) const {
  check_tokens(tokens);
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const auto emb = tensor("embedding");
  ForwardCache c;
  c.tokens.assign(tokens.begin(), tokens.end());
  c.x.resize(shape_.input_dim(), T);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(shape_.embed_dim);
  for (Eigen::Index t = 0; t < T; ++t) {
    sum += emb.col(tokens[static_cast<std::size_t>(t)]);
    c.x.col(t) = input_column(tokens, static_cast<std::size_t>(t), sum / static_cast<double>(t + 1));
  }

  const bool dropout = adapter_.enabled && options.train_mode && adapter_.dropout > 0.0;
  Rng rng(options.dropout_seed);
  auto make_mask = [&](Eigen::Index rows) {
    Eigen::MatrixXd m(rows, T);
    const double keep = 1.0 - adapter_.dropout;
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
    return m;
  };

  Eigen::MatrixXd pre1 = tensor("hidden1.weight") * c.x;
  pre1.colwise() += tensor("hidden1.bias").col(0);
  if (adapter_.enabled) {
    if (dropout) c.mask1 = make_mask(c.x.rows());
    c.ax1 = tensor("hidden1.lora_a") * (dropout ? Eigen::MatrixXd(c.mask1.cwiseProduct(c.x)) : c.x);
    pre1.noalias() += adapter_.scale() * (tensor("hidden1.lora_b") * c.ax1);
  }
  c.h1 = pre1.array().tanh().matrix();

  Eigen::MatrixXd pre2 = tensor("hidden2.weight") * c.h1;
  pre2.colwise() += tensor("hidden2.bias").col(0);
  if (adapter_.enabled) {
    if (dropout) c.mask2 = make_mask(c.h1.rows());
    c.ax2 = tensor("hidden2.lora_a") * (dropout ? Eigen::MatrixXd(c.mask2.cwiseProduct(c.h1)) : c.h1);
    pre2.noalias() += adapter_.scale() * (tensor("hidden2.lora_b") * c.ax2);
  }
  c.h2 = pre2.array().tanh().matrix();

  c.out = tensor("head.weight") * c.h2;
  c.out.colwise() += tensor("head.bias").col(0);
  return c;
}

namespace {

void require_finite(const Eigen::MatrixXd& m, const char* node) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite gradient at ") + node);
}

}  // namespace

void Network::backward(const ForwardCache& c, const Eigen::MatrixXd& d_out, std::vector<double>& grad) const {
  if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);
  if (d_out.rows() != c.out.rows() || d_out.cols() != c.out.cols()) throw InputError("d_out shape mismatch");
  require_finite(d_out, "head.output");
  auto g = [&](std::string_view name) {
    const auto& s = slot(name);
    return Eigen::Map<Eigen::MatrixXd>(grad.data() + s.offset, s.rows, s.cols);
  };
  const double scale = adapter_.scale();

  g("head.weight").noalias() += d_out * c.h2.transpose();
  g("head.bias") += d_out.rowwise().sum();

  Eigen::MatrixXd d_pre2 = (tensor("head.weight").transpose() * d_out).cwiseProduct(
      (1.0 - c.h2.array().square()).matrix());
  require_finite(d_pre2, "hidden2");
  g("hidden2.weight").noalias() += d_pre2 * c.h1.transpose();
  g("hidden2.bias") += d_pre2.rowwise().sum();
  Eigen::MatrixXd d_h1 = tensor("hidden2.weight").transpose() * d_pre2;
  if (adapter_.enabled) {
    const Eigen::MatrixXd in2 = c.mask2.size() ? Eigen::MatrixXd(c.mask2.cwiseProduct(c.h1)) : c.h1;
    const Eigen::MatrixXd d_ax2 = scale * (tensor("hidden2.lora_b").transpose() * d_pre2);
    g("hidden2.lora_b").noalias() += scale * d_pre2 * c.ax2.transpose();
    g("hidden2.lora_a").noalias() += d_ax2 * in2.transpose();
    Eigen::MatrixXd d_in2 = tensor("hidden2.lora_a").transpose() * d_ax2;
    if (c.mask2.size()) d_in2 = d_in2.cwiseProduct(c.mask2);
    d_h1 += d_in2;
  }

  Eigen::MatrixXd d_pre1 = d_h1.cwiseProduct((1.0 - c.h1.array().square()).matrix());
  require_finite(d_pre1, "hidden1");
  g("hidden1.weight").noalias() += d_pre1 * c.x.transpose();
  g("hidden1.bias") += d_pre1.rowwise().sum();
  Eigen::MatrixXd d_x = tensor("hidden1.weight").transpose() * d_pre1;
  if (adapter_.enabled) {
    const Eigen::MatrixXd in1 = c.mask1.size() ? Eigen::MatrixXd(c.mask1.cwiseProduct(c.x)) : c.x;
    const Eigen::MatrixXd d_ax1 = scale * (tensor("hidden1.lora_b").transpose() * d_pre1);
    g("hidden1.lora_b").noalias() += scale * d_pre1 * c.ax1.transpose();
    g("hidden1.lora_a").noalias() += d_ax1 * in1.transpose();
    Eigen::MatrixXd d_in1 = tensor("hidden1.lora_a").transpose() * d_ax1;
    if (c.mask1.size()) d_in1 = d_in1.cwiseProduct(c.mask1);
    d_x += d_in1;
  }
  require_finite(d_x, "embedding");

  auto g_emb = g("embedding");
  const int d = shape_.embed_dim;
  const auto T = static_cast<Eigen::Index>(c.tokens.size());
  for (Eigen::Index t = 0; t < T; ++t) {
    for (int k = 0; k < shape_.window; ++k) {
      const long pos = static_cast<long>(t) - k;
      const int id = pos >= 0 ? c.tokens[static_cast<std::size_t>(pos)] : Vocabulary::kPad % shape_.vocab_size;
      g_emb.col(id) += d_x.block(k * d, t, d, 1);
    }
  }
  // The prefix mean at t feeds every token s <= t with weight 1/(t+1).
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    acc += d_x.block(shape_.window * d, t, d, 1) / static_cast<double>(t + 1);
    g_emb.col(c.tokens[static_cast<std::size_t>(t)]) += acc;
  }
}

Network::Cursor Network::start(std::span<const int> prefix) const {
  check_tokens(prefix);
  Cursor cur;
  cur.embed_sum = Eigen::VectorXd::Zero(shape_.embed_dim);
  for (int id : prefix) push(cur, id);
  return cur;
}

void Network::push(Cursor& cursor, int token) const {
  if (token < 0 || token >= shape_.vocab_size) throw InputError("token id out of vocabulary");
  cursor.tokens.push_back(token);
  cursor.embed_sum += tensor("embedding").col(token);
}

Eigen::VectorXd Network::output_at(const Cursor& cursor) const {
  if (cursor.tokens.empty()) throw InputError("cursor holds no tokens");
  const std::size_t t = cursor.tokens.size() - 1;
  const Eigen::VectorXd x = input_column(cursor.tokens, t, cursor.embed_sum / static_cast<double>(t + 1));
  Eigen::VectorXd pre1 = tensor("hidden1.weight") * x + tensor("hidden1.bias").col(0);
  if (adapter_.enabled)
    pre1 += adapter_.scale() * (tensor("hidden1.lora_b") * (tensor("hidden1.lora_a") * x));
  const Eigen::VectorXd h1 = pre1.array().tanh().matrix();
  Eigen::VectorXd pre2 = tensor("hidden2.weight") * h1 + tensor("hidden2.bias").col(0);
  if (adapter_.enabled)
    pre2 += adapter_.scale() * (tensor("hidden2.lora_b") * (tensor("hidden2.lora_a") * h1));
  const Eigen::VectorXd h2 = pre2.array().tanh().matrix();
  return tensor("head.weight") * h2 + tensor("head.bias").col(0);
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits, double temperature) {
  const Eigen::VectorXd z = logits / temperature;
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return (z.array() - lse).matrix();
}

Eigen::MatrixXd log_softmax_columns(const Eigen::MatrixXd& logits, double temperature) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.cols(); ++t) out.col(t) = log_softmax(logits.col(t), temperature);
  return out;
}

TokenIds join_sequence(std::span<const int> prompt, std::span<const int> continuation) {
  TokenIds seq;
  seq.reserve(1 + prompt.size() + continuation.size());
  seq.push_back(Vocabulary::kBos);
  seq.insert(seq.end(), prompt.begin(), prompt.end());
  seq.insert(seq.end(), continuation.begin(), continuation.end());
  return seq;
}

SequenceLogprob sequence_logprob(const Network& model, std::span<const int> prompt, std::span<const int> continuation,
                                 double temperature) {
  if (model.head() != HeadKind::lm) throw InputError("sequence_logprob needs a language-model head");
  SequenceLogprob r;
  const TokenIds seq = join_sequence(prompt, continuation);
  model.check_tokens(seq);
  if (continuation.empty()) return r;
  const ForwardCache c = model.forward(seq);
  const std::size_t first = 1 + prompt.size();
  for (std::size_t j = 0; j < continuation.size(); ++j) {
    const auto pos = static_cast<Eigen::Index>(first + j - 1);
    const double lp = log_softmax(c.out.col(pos), temperature)(continuation[j]);
    r.per_token.push_back(lp);
    r.total += lp;
  }
  return r;
}

SampleResult sample(const Network& model, std::span<const int> prompt, const SampleOptions& options) {
  if (model.head() != HeadKind::lm) throw InputError("sampling needs a language-model head");
  if (!options.greedy && !(options.temperature > 0.0)) throw InputError("sampling temperature must be positive");
  const TokenIds start = join_sequence(prompt, {});
  Network::Cursor cur = model.start(start);
  Rng rng(options.seed);
  SampleResult r;
  while (true) {
    if (static_cast<int>(r.tokens.size()) >= options.max_len ||
        static_cast<int>(cur.tokens.size()) >= model.shape().context_window) {
      r.truncated = true;
      break;
    }
    const Eigen::VectorXd logits = model.output_at(cur);
    int next = 0;
    if (options.greedy) {
      logits.maxCoeff(&next);
    } else {
      const Eigen::VectorXd p = log_softmax(logits, options.temperature).array().exp();
      double u = rng.uniform();
      next = static_cast<int>(p.size()) - 1;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        u -= p(i);
        if (u < 0.0) {
          next = static_cast<int>(i);
          break;
        }
      }
    }
    r.tokens.push_back(next);
    if (next == Vocabulary::kEos) {
      r.hit_eos = true;
      break;
    }
    model.push(cur, next);
  }
  return r;
}

}  // namespace repairlab
