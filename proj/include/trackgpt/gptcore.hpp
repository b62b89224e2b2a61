#pragma once

// Decoder-only transformer over 16-bit track tokens.
//
// Pre-norm blocks (masked self-attention, GELU feed-forward), learned
// positional embeddings, final layer norm, and an output projection tied
// to the token embedding. Forward and backward passes are written out by
// hand and templated on the scalar type: training runs in float, gradient
// checks in double.

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "trackgpt/geocodec.hpp"
#include "trackgpt/rng.hpp"
#include "trackgpt/trackprep.hpp"

namespace trackgpt::gptcore {

using geocodec::TokenId;

/// Parameter storage. A fixed base alignment keeps the vectorized kernels
/// on the same code path from run to run, so results are bitwise stable.
using ParamVector = std::vector<float, Eigen::aligned_allocator<float>>;

/// Target value excluded from the loss (padding of short tracks).
inline constexpr std::int32_t kIgnoreIndex = -1;

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  int vocab_size = static_cast<int>(geocodec::kVocabSize);
  int block_size = 128;
  int n_layer = 4;
  int n_head = 4;
  int d_model = 128;
  double dropout = 0.0;
  std::uint64_t seed = 1337;

  void validate() const;
  std::string to_record() const;
  static ModelConfig parse_record(std::string_view text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TensorSlot {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Offsets of every named tensor inside one flat parameter vector.
class ParamLayout {
 public:
  struct Block {
    std::size_t ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
    std::size_t ln2_g, ln2_b, fc_w, fc_b, fc2_w, fc2_b;
  };

  explicit ParamLayout(const ModelConfig& config);

  std::size_t wte = 0;  // [vocab, d]
  std::size_t wpe = 0;  // [block, d]
  std::vector<Block> blocks;
  std::size_t lnf_g = 0;
  std::size_t lnf_b = 0;

  const std::vector<TensorSlot>& slots() const { return slots_; }
  std::size_t total() const { return total_; }

 private:
  std::size_t add(std::string name, std::vector<std::size_t> shape);

  std::vector<TensorSlot> slots_;
  std::size_t total_ = 0;
};

std::size_t parameter_count(const ModelConfig& config);

template <typename T>
struct Weights {
  ModelConfig config;
  std::vector<T, Eigen::aligned_allocator<T>> data;
};

struct AdamState {
  ParamVector m;
  ParamVector v;
};

struct Checkpoint {
  ModelConfig config;
  ParamVector weights;
  geocodec::CodecConfig codec;
  double dt = 0.0;
  std::optional<AdamState> optimizer;
  std::int64_t step = 0;

  Weights<float> view() const { return {config, {weights.begin(), weights.end()}}; }
};

/// Seeded N(0, 0.02) weights; residual projections scaled by 1/sqrt(2 n_layer).
Checkpoint init_model(const ModelConfig& config);

/// Row-major token matrix; rows are independent sequences.
struct TokenMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<std::int32_t> data;

  TokenMatrix() = default;
  TokenMatrix(int r, int c, std::int32_t fill = 0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}
  std::int32_t& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::int32_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

struct Batch {
  TokenMatrix inputs;
  TokenMatrix targets;  // inputs shifted by one; kIgnoreIndex past a track's end
};

/// Logits for every position: [rows * cols, vocab].
template <typename T>
Matrix<T> forward(const ModelConfig& config, std::span<const T> params, const TokenMatrix& tokens);
/// Logits for the last position of each row: [rows, vocab].
template <typename T>
Matrix<T> forward_last(const ModelConfig& config, std::span<const T> params, const TokenMatrix& tokens);

Matrix<float> forward(const Checkpoint& ckpt, const TokenMatrix& tokens);

/// Mean cross-entropy over positions whose target is not kIgnoreIndex.
template <typename T>
double cross_entropy(const Matrix<T>& logits, const TokenMatrix& targets);

/// Adds d(loss)/d(params) into `grad` and returns the mean loss. Dropout is
/// active only when `dropout_rng` is non-null and config.dropout > 0.
template <typename T>
double loss_and_grad(const ModelConfig& config, std::span<const T> params, const Batch& batch,
                     std::span<T> grad, Rng* dropout_rng = nullptr);

// ---------------------------------------------------------------------------
// Data loading

/// One row per draw: a uniformly chosen (track, offset) pair among offsets
/// that keep the row inside its track. Width is the longest row drawn
/// (at most block_size); shorter rows are padded.
Batch sample_batch(std::span<const trackprep::TokenTrack> corpus, const ModelConfig& config,
                   int batch_size, Rng& rng);

/// Number of valid row offsets a track contributes (0 for fewer than two tokens).
std::size_t eligible_offsets(std::size_t track_len, int block_size);

// ---------------------------------------------------------------------------
// Training

struct TrainParams {
  int steps = 1000;             // steps to run in this call
  int total_steps = 0;          // schedule horizon; 0 means ckpt.step + steps
  int batch_size = 16;
  double lr = 3e-4;
  double min_lr = 3e-5;
  int warmup = 100;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  int log_interval = 10;
  std::uint64_t seed = 1337;

  friend bool operator==(const TrainParams&, const TrainParams&) = default;
};

struct TrainRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

double learning_rate(const TrainParams& params, std::int64_t step, std::int64_t total_steps);

/// Runs AdamW with global-norm clipping and a warmup-cosine schedule. Batch
/// and dropout draws are seeded from (params.seed, step), so a resumed run
/// repeats an uninterrupted one exactly.
Checkpoint train(Checkpoint ckpt, std::span<const trackprep::TokenTrack> corpus, const TrainParams& params,
                 const std::function<void(const TrainRecord&)>& on_log = {});

// ---------------------------------------------------------------------------
// Generation

struct SamplerConfig {
  double temperature = 0.92;
  int k_samples = 16;
  int max_steps = 90;
  std::uint64_t seed = 0;

  void validate() const;

  friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

/// softmax(logits / temperature) in double precision.
std::vector<double> sampling_distribution(std::span<const float> logits, double temperature);
std::int32_t sample_token(std::span<const float> logits, double temperature, Rng& rng);

std::vector<TokenId> generate(const Checkpoint& ckpt, std::span<const TokenId> prompt,
                              const SamplerConfig& sampler, Rng& rng);
/// One continuation per generator, advanced together as a batch.
std::vector<std::vector<TokenId>> generate_batch(const Checkpoint& ckpt, std::span<const TokenId> prompt,
                                                 const SamplerConfig& sampler, std::span<Rng> rngs);

// ---------------------------------------------------------------------------
// Gradient check

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t samples = 0;  // 0 checks every parameter
  std::uint64_t seed = 7;
  double abs_floor = 1e-5;  // denominator floor; keeps round-off on zero gradients (e.g. key biases) from dominating
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_index = 0;
};

/// Compares double-precision analytic gradients with central differences.
GradCheckResult gradient_check(const Weights<double>& weights, const Batch& batch,
                               const GradCheckOptions& options = {});
GradCheckResult gradient_check(const Checkpoint& ckpt, const Batch& batch, const GradCheckOptions& options = {});

// ---------------------------------------------------------------------------
// Checkpoint file

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace trackgpt::gptcore
