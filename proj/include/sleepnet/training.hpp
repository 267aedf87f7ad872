#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sleepnet/evaluate.hpp"
#include "sleepnet/nn/network.hpp"
#include "sleepnet/records.hpp"

namespace sleepnet {

using nn::ClassWeights;
using Dataset = std::vector<EpochTensor>;

/// w_c = N / (5 N_c). Throws "class missing from training labels" when a
/// class has no samples.
ClassWeights compute_class_weights(std::span<const Stage> labels);

struct TrainRunConfig {
  int max_epochs = 100;
  int patience = 10;
  int batch_size = 64;
  std::uint64_t shuffle_seed = 1;
  std::filesystem::path checkpoint_path;  // empty: keep the best network in memory only
  double min_improvement = 1e-6;
  /// Wall-clock seconds per epoch in the history; when false the column is 0
  /// so history files are reproducible byte-for-byte.
  bool record_timing = true;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_kappa = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  int stop_epoch = 0;

  std::string to_csv() const;
};

/// Patience counter on validation loss; a loss must beat the best by more than
/// `min_improvement` to count as an improvement.
class EarlyStopping {
 public:
  EarlyStopping(int patience, double min_improvement = 1e-6)
      : patience_(patience), min_improvement_(min_improvement) {}

  /// Returns true when `loss` is a new best.
  bool update(double loss);
  bool should_stop() const { return waited_ >= patience_; }
  double best() const { return best_; }
  int best_epoch() const { return best_epoch_; }

 private:
  int patience_;
  double min_improvement_;
  double best_ = 0.0;
  bool has_best_ = false;
  int waited_ = 0;
  int epoch_ = 0;
  int best_epoch_ = 0;
};

/// Mini-batch partition of a shuffled epoch. A trailing batch of one sample is
/// merged into the previous batch.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, std::mt19937_64& rng);

struct TrainResult {
  nn::ConvNet<float> net;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam on shuffled mini-batches with validation-loss early stopping. Returns
/// the network from the best validation epoch.
TrainResult train(nn::ConvNet<float> net, const Dataset& train_set, const Dataset& val_set,
                  const TrainRunConfig& config, const ClassWeights& weights, const EpochCallback& on_epoch = {});

struct Prediction {
  std::vector<Stage> labels;
  Eigen::MatrixXd probabilities;  // epochs x 5
};

/// Inference-mode prediction; label is the argmax with ties to the lowest
/// class index.
Prediction predict(nn::ConvNet<float>& net, const Dataset& epochs, int chunk = 64);

/// Mean weighted cross-entropy in inference mode.
double evaluate_loss(nn::ConvNet<float>& net, const Dataset& epochs, const ClassWeights& weights, int chunk = 64);

std::vector<Stage> labels_of(const Dataset& epochs);

}  // namespace sleepnet
