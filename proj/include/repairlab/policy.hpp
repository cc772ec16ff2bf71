#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "repairlab/jsonl.hpp"
#include "repairlab/rng.hpp"

namespace repairlab {

using TokenIds = std::vector<int>;

// Byte-level vocabulary: ids 0..255 are bytes, then three specials.
struct Vocabulary {
  static constexpr int kBos = 256;
  static constexpr int kEos = 257;
  static constexpr int kPad = 258;
  static constexpr int kSize = 259;

  static TokenIds encode(std::string_view text);
  // Special ids are dropped, so decode(encode(s)) == s.
  static std::string decode(std::span<const int> ids);
  static bool is_special(int id) { return id >= 256; }
};

struct ModelShape {
  int vocab_size = Vocabulary::kSize;
  int context_window = 256;
  int embed_dim = 16;
  int window = 4;  // most recent tokens embedded in their own slot
  int hidden_dim = 64;

  int input_dim() const { return (window + 1) * embed_dim; }
  Json to_json() const;
  static ModelShape from_json(const Json& j);
  bool operator==(const ModelShape&) const = default;
};

struct AdapterSpec {
  bool enabled = false;
  int rank = 4;
  double alpha = 16.0;
  double dropout = 0.05;

  double scale() const { return alpha / rank; }
  Json to_json() const;
  static AdapterSpec from_json(const Json& j);
  bool operator==(const AdapterSpec&) const = default;
};

enum class HeadKind { lm, scalar };

struct TensorSlot {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::size_t offset = 0;
  bool trainable = true;
  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

// Standalone low-rank update: delta = (alpha / rank) * B * A.
struct LowRankAdapter {
  Eigen::MatrixXd A;  // rank x d_in
  Eigen::MatrixXd B;  // d_out x rank
  int rank = 4;
  double alpha = 16.0;
  double dropout_rate = 0.05;

  double scale() const { return alpha / rank; }
  static LowRankAdapter init(int d_out, int d_in, int rank, double alpha, double dropout, Rng& rng);
};

// base + scale * B * A. In train mode each input column of the adapter path is
// dropped with the adapter's rate (inverted scaling); the base path never is.
Eigen::MatrixXd apply_adapter(const Eigen::MatrixXd& base_weight, const LowRankAdapter& adapter, bool train_mode,
                              Rng* rng = nullptr);

struct ForwardOptions {
  bool train_mode = false;       // enables adapter dropout
  std::uint64_t dropout_seed = 0;
};

// Activations of one sequence, kept for backward.
struct ForwardCache {
  TokenIds tokens;
  Eigen::MatrixXd x;    // input_dim x T
  Eigen::MatrixXd h1;   // hidden x T
  Eigen::MatrixXd h2;   // hidden x T
  Eigen::MatrixXd out;  // output_dim x T (logits for lm, scalar for scalar heads)
  Eigen::MatrixXd mask1, mask2;  // adapter dropout masks (already divided by keep prob), empty when unused
  Eigen::MatrixXd ax1, ax2;      // A * (mask . input), rank x T
};

// Causal byte-level model. Position t reads the embeddings of the last
// `window` tokens (PAD before the start) plus the mean embedding of the whole
// prefix, then two tanh layers (optionally adapted) and a linear head. Output
// at position t depends only on tokens[0..t].
class Network {
 public:
  Network() = default;
  Network(ModelShape shape, HeadKind head, AdapterSpec adapter = {}, std::uint64_t seed = kDefaultSeed,
          double head_init_scale = 1.0);

  const ModelShape& shape() const { return shape_; }
  HeadKind head() const { return head_; }
  const AdapterSpec& adapter_spec() const { return adapter_; }
  int output_dim() const { return head_ == HeadKind::lm ? shape_.vocab_size : 1; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }
  const std::vector<TensorSlot>& registry() const { return registry_; }
  const TensorSlot& slot(std::string_view name) const;
  Eigen::Map<Eigen::MatrixXd> tensor(std::string_view name);
  Eigen::Map<const Eigen::MatrixXd> tensor(std::string_view name) const;
  // 1 for parameters the optimizer may change. With an adapter attached the
  // two hidden transforms are frozen.
  std::vector<char> trainable_mask() const;
  bool all_finite() const;

  // Standalone copy of an attached adapter (layer 1 or 2).
  LowRankAdapter adapter(int layer) const;

  ForwardCache forward(std::span<const int> tokens, const ForwardOptions& options = {}) const;

  // Accumulates d(loss)/d(params) into grad given d(loss)/d(out). NumericError
  // names the first node whose gradient is not finite.
  void backward(const ForwardCache& cache, const Eigen::MatrixXd& d_out, std::vector<double>& grad) const;

  // Incremental decoding state.
  struct Cursor {
    TokenIds tokens;
    Eigen::VectorXd embed_sum;
  };
  Cursor start(std::span<const int> prefix) const;
  void push(Cursor& cursor, int token) const;
  // Output at the cursor's last position (no dropout).
  Eigen::VectorXd output_at(const Cursor& cursor) const;

  void check_tokens(std::span<const int> tokens) const;

 private:
  void build_registry();
  Eigen::VectorXd input_column(std::span<const int> tokens, std::size_t t, const Eigen::VectorXd& prefix_mean) const;

  ModelShape shape_;
  HeadKind head_ = HeadKind::lm;
  AdapterSpec adapter_;
  std::vector<TensorSlot> registry_;
  std::vector<double> params_;
};

using PolicyModel = Network;

// Row-wise log-softmax of (logits / temperature); overflow-safe.
Eigen::MatrixXd log_softmax_columns(const Eigen::MatrixXd& logits, double temperature = 1.0);
Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits, double temperature = 1.0);

struct SequenceLogprob {
  double total = 0.0;
  std::vector<double> per_token;
};

// log P(y | x) under the model with [BOS] x y as the input sequence.
SequenceLogprob sequence_logprob(const Network& model, std::span<const int> prompt, std::span<const int> continuation,
                                 double temperature = 1.0);

struct SampleOptions {
  double temperature = 1.0;
  int max_len = 128;
  std::uint64_t seed = kDefaultSeed;
  bool greedy = false;  // argmax decoding, the temperature -> 0 limit
};

struct SampleResult {
  TokenIds tokens;        // generated ids, EOS included when produced
  bool hit_eos = false;
  bool truncated = false;  // stopped by max_len or the context window
};

SampleResult sample(const Network& model, std::span<const int> prompt, const SampleOptions& options);

// [BOS] + prompt + continuation.
TokenIds join_sequence(std::span<const int> prompt, std::span<const int> continuation);

// Checkpoint: "RLCKPT01", u64 header length, JSON header (tag, shape, head,
// adapter, registry), then little-endian float64 parameters.
void save_checkpoint(const std::filesystem::path& path, const Network& net, const std::string& tag);
Network load_checkpoint(const std::filesystem::path& path, const std::string& expected_tag);
// Loads parameters into an existing network; the registry must match exactly.
void load_checkpoint_into(const std::filesystem::path& path, Network& net, const std::string& expected_tag);

}  // namespace repairlab
