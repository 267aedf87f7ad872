#include "sleepnet/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "sleepnet/error.hpp"
#include "sleepnet/nn/checkpoint.hpp"
#include "sleepnet/nn/optim.hpp"

namespace sleepnet {

ClassWeights compute_class_weights(std::span<const Stage> labels) {
  std::array<long long, kNumStages> counts{};
  for (Stage s : labels) counts[static_cast<std::size_t>(stage_index(s))] += 1;
  ClassWeights w{};
  const auto n = static_cast<double>(labels.size());
  for (int c = 0; c < kNumStages; ++c) {
    const auto count = counts[static_cast<std::size_t>(c)];
    if (count == 0) {
      throw data_error("class missing from training labels: " + std::string(stage_name(static_cast<Stage>(c))));
    }
    w[static_cast<std::size_t>(c)] = n / (kNumStages * static_cast<double>(count));
  }
  return w;
}

std::string TrainHistory::to_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,val_kappa,seconds\n";
  char line[160];
  for (const auto& e : epochs) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g,%.3f\n", e.epoch, e.train_loss, e.val_loss, e.val_kappa,
                  e.seconds);
    out << line;
  }
  return out.str();
}

bool EarlyStopping::update(double loss) {
  ++epoch_;
  if (!has_best_ || loss < best_ - min_improvement_) {
    has_best_ = true;
    best_ = loss;
    best_epoch_ = epoch_;
    waited_ = 0;
    return true;
  }
  ++waited_;
  return false;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(nn::uniform01(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  const auto size = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t start = 0; start < n; start += size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + size)));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

std::vector<Stage> labels_of(const Dataset& epochs) {
  std::vector<Stage> out;
  out.reserve(epochs.size());
  for (const auto& e : epochs) {
    if (!e.label) throw data_error("unlabeled epoch " + std::to_string(e.epoch_index) + " of " + e.record_id);
    out.push_back(*e.label);
  }
  return out;
}

Prediction predict(nn::ConvNet<float>& net, const Dataset& epochs, int chunk) {
  Prediction out;
  out.probabilities.resize(static_cast<Eigen::Index>(epochs.size()), kNumStages);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < epochs.size(); start += static_cast<std::size_t>(chunk)) {
    idx.clear();
    for (std::size_t i = start; i < std::min(epochs.size(), start + static_cast<std::size_t>(chunk)); ++i) {
      idx.push_back(i);
    }
    const auto batch = nn::stack_batch<float>(epochs, idx);
    const auto probs = net.forward(batch, nn::Mode::Infer);
    out.probabilities.middleRows(static_cast<Eigen::Index>(start), probs.rows()) = probs.cast<double>();
  }
  net.release_caches();
  out.labels.reserve(epochs.size());
  for (Eigen::Index r = 0; r < out.probabilities.rows(); ++r) {
    Probabilities p;
    for (int c = 0; c < kNumStages; ++c) p[static_cast<std::size_t>(c)] = out.probabilities(r, c);
    out.labels.push_back(argmax_stage(p));
  }
  return out;
}

namespace {

double loss_from_probabilities(const Eigen::MatrixXd& probs, std::span<const Stage> labels,
                               const ClassWeights& weights) {
  double loss = 0.0;
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const int y = stage_index(labels[static_cast<std::size_t>(r)]);
    loss -= weights[static_cast<std::size_t>(y)] * std::log(nn::probability_floor(probs(r, y)));
  }
  return loss / static_cast<double>(probs.rows());
}

}  // namespace

double evaluate_loss(nn::ConvNet<float>& net, const Dataset& epochs, const ClassWeights& weights, int chunk) {
  const auto labels = labels_of(epochs);
  return loss_from_probabilities(predict(net, epochs, chunk).probabilities, labels, weights);
}

TrainResult train(nn::ConvNet<float> net, const Dataset& train_set, const Dataset& val_set,
                  const TrainRunConfig& config, const ClassWeights& weights, const EpochCallback& on_epoch) {
  if (train_set.empty() || val_set.empty()) throw data_error("training and validation sets must be nonempty");
  if (config.patience < 1 || config.batch_size < 1) throw config_error("patience and batch size must be >= 1");

  const auto train_labels = labels_of(train_set);
  const auto val_labels = labels_of(val_set);
  std::vector<int> train_codes;
  for (Stage s : train_labels) train_codes.push_back(stage_index(s));

  std::mt19937_64 shuffle_rng(config.shuffle_seed);
  auto adam = nn::make_adam_state(net);
  EarlyStopping stopper(config.patience, config.min_improvement);
  auto best_state = net.state();
  TrainHistory history;
  std::vector<int> batch_labels;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const auto batches = make_batches(train_set.size(), config.batch_size, shuffle_rng);
    double loss_sum = 0.0;
    long long batch_id = 0;
    try {
      for (const auto& idx : batches) {
        const auto batch = nn::stack_batch<float>(train_set, idx);
        batch_labels.clear();
        for (std::size_t i : idx) batch_labels.push_back(train_codes[i]);
        auto result = nn::backward(net, batch, batch_labels, weights, batch_id++);
        nn::adam_step(net, result.grads, adam, net.config().learning_rate);
        loss_sum += result.loss * static_cast<double>(idx.size());
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numerical) throw;
      throw numerical_error("epoch " + std::to_string(epoch) + ": " + e.what());
    }

    const auto val = predict(net, val_set);
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(train_set.size());
    record.val_loss = loss_from_probabilities(val.probabilities, val_labels, weights);
    record.val_kappa = cohen_kappa(confusion(val_labels, val.labels));
    if (!std::isfinite(record.val_loss)) {
      throw numerical_error("numerical failure: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    if (config.record_timing) {
      record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    }
    history.epochs.push_back(record);
    history.stop_epoch = epoch;

    if (stopper.update(record.val_loss)) {
      best_state = net.state();
      history.best_epoch = epoch;
      if (!config.checkpoint_path.empty()) {
        nn::save_checkpoint(net, adam.step, config.checkpoint_path);
      }
    }
    if (on_epoch) on_epoch(record);
    if (stopper.should_stop()) break;
  }

  net.load_state(best_state);
  net.release_caches();
  return {std::move(net), std::move(history)};
}

}  // namespace sleepnet
