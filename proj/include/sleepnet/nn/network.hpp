#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sleepnet/error.hpp"
#include "sleepnet/nn/layers.hpp"
#include "sleepnet/records.hpp"

namespace sleepnet::nn {

inline constexpr int kMaxFilters = 1024;

struct ModelConfig {
  int n_blocks = 7;
  int kernel_size = 6;
  int initial_filters = 16;
  double learning_rate = 1e-3;
  double dropout_rate = 0.5;
  int batch_size = 64;
  int input_length = kEpochSamples;
  int input_channels = kNumInputChannels;

  bool operator==(const ModelConfig&) const = default;
};

/// Throws "config out of range" when a field is outside its domain.
void validate(const ModelConfig& config);

/// min(initial * 2^(i-1), 1024) for blocks i = 1..n.
std::vector<int> block_filters(const ModelConfig& config);
/// Temporal length after each block: floor(input_length / 2^i).
std::vector<int> block_lengths(const ModelConfig& config);

using ClassWeights = std::array<double, kNumStages>;

template <typename Scalar>
struct Block {
  Conv1d<Scalar> conv;
  BatchNorm<Scalar> norm;
  Relu<Scalar> relu;
  AvgPool2<Scalar> pool;
};

/// The block-stack classifier:
///   n x (conv1d same -> batch-norm -> ReLU -> avg-pool/2)
///   -> global average pool -> dropout -> dense(5) -> softmax.
template <typename Scalar>
class ConvNet {
 public:
  using Grads = std::vector<Matrix<Scalar>>;

  ConvNet(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  /// Class probabilities (batch x 5). Train mode caches activations for
  /// backward() and uses batch statistics and dropout.
  Matrix<Scalar> forward(const SequenceBatch<Scalar>& batch, Mode mode);

  /// Backward pass for the weighted cross-entropy of the last train-mode
  /// forward. Gradients accumulate into each parameter's grad; returns loss.
  double backward_from_probs(const Matrix<Scalar>& probs, std::span<const int> labels,
                             const ClassWeights& weights);

  std::vector<Parameter<Scalar>*> parameters();
  std::vector<const Parameter<Scalar>*> parameters() const;
  void zero_grad();
  Grads gradients() const;

  std::vector<Block<Scalar>>& blocks() { return blocks_; }
  const std::vector<Block<Scalar>>& blocks() const { return blocks_; }
  Dense<Scalar>& dense() { return dense_; }
  const Dense<Scalar>& dense() const { return dense_; }

  void freeze_running_stats(bool frozen);
  /// See BatchNorm::fix_batch_stats.
  void fix_batch_stats(bool fixed);
  void release_caches();

  /// Trainable parameters followed by batch-norm running mean/var per block.
  struct State {
    std::vector<Matrix<Scalar>> tensors;
  };
  State state() const;
  void load_state(const State& state);

 private:
  ModelConfig config_;
  std::uint64_t seed_ = 0;
  std::mt19937_64 dropout_rng_;
  std::vector<Block<Scalar>> blocks_;
  GlobalAvgPool<Scalar> global_pool_;
  Dropout<Scalar> dropout_;
  Dense<Scalar> dense_;
};

template <typename Scalar>
ConvNet<Scalar> build_network(const ModelConfig& config, std::uint64_t seed) {
  return ConvNet<Scalar>(config, seed);
}

/// Stacks epochs into a batch. With `indices` empty all epochs are used.
template <typename Scalar>
SequenceBatch<Scalar> stack_batch(std::span<const EpochTensor> epochs, std::span<const std::size_t> indices = {});

template <typename Scalar>
Matrix<Scalar> forward(ConvNet<Scalar>& net, const SequenceBatch<Scalar>& batch, Mode mode) {
  return net.forward(batch, mode);
}

/// A float softmax underflows to exactly 0 once a logit gap passes ~87, which
/// would make the loss infinite. Probabilities are floored at the smallest
/// normal float before the log, so one saturated sample costs at most
/// ~87.3 * w. NaN passes through unchanged.
inline double probability_floor(double p) { return std::max(p, static_cast<double>(std::numeric_limits<float>::min())); }

/// -(1/B) sum_b w[y_b] log max(p_b[y_b], FLT_MIN)
template <typename Scalar>
double weighted_cross_entropy(const Matrix<Scalar>& probs, std::span<const int> labels,
                              const ClassWeights& weights);

template <typename Scalar>
struct BackwardResult {
  double loss = 0.0;
  typename ConvNet<Scalar>::Grads grads;
};

/// Train-mode forward plus backward. Throws "numerical failure" on a
/// non-finite loss; `batch_id` is included in the message.
template <typename Scalar>
BackwardResult<Scalar> backward(ConvNet<Scalar>& net, const SequenceBatch<Scalar>& batch,
                                std::span<const int> labels, const ClassWeights& weights,
                                long long batch_id = -1);

extern template class ConvNet<float>;
extern template class ConvNet<double>;

}  // namespace sleepnet::nn
