#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sleepnet/nn/network.hpp"

namespace sleepnet::nn {

struct GradCheckOptions {
  double epsilon = 1e-3;
  /// Elements sampled per tensor; every element when the tensor is smaller.
  int samples_per_tensor = 12;
  std::uint64_t seed = 7;
  /// Parameter-name prefixes to check; empty means all.
  std::vector<std::string> only;
  /// Floor on the relative-error denominator, for near-zero gradients.
  double denominator_floor = 1e-6;
  /// Batch-norm statistics computed once from `batch` and then held constant,
  /// so the loss is piecewise smooth in every parameter. Without this the
  /// check differentiates through the batch mean and variance as in training.
  bool fixed_batch_stats = false;
};

struct GradCheckEntry {
  std::string tensor;
  Index element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::vector<GradCheckEntry> entries;
};

/// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// A tensor whose entries are perturbed, with the analytic gradient to compare.
template <typename Scalar>
struct CheckedTensor {
  std::string name;
  Matrix<Scalar>* value = nullptr;
  Matrix<Scalar> analytic;
};

/// Central finite differences of `loss` against analytic gradients on a random
/// subsample of entries.
template <typename Scalar>
GradCheckResult finite_difference_check(const std::function<double()>& loss,
                                        std::vector<CheckedTensor<Scalar>>& tensors,
                                        const GradCheckOptions& options) {
  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  for (auto& t : tensors) {
    const Index size = t.value->size();
    std::vector<Index> picks;
    if (size <= options.samples_per_tensor) {
      for (Index i = 0; i < size; ++i) picks.push_back(i);
    } else {
      for (int i = 0; i < options.samples_per_tensor; ++i) {
        picks.push_back(static_cast<Index>(rng() % static_cast<std::uint64_t>(size)));
      }
    }
    for (Index i : picks) {
      Scalar& x = t.value->data()[i];
      const Scalar saved = x;
      x = saved + static_cast<Scalar>(options.epsilon);
      const double up = loss();
      x = saved - static_cast<Scalar>(options.epsilon);
      const double down = loss();
      x = saved;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double analytic = static_cast<double>(t.analytic.data()[i]);
      const double err = relative_error(analytic, numeric, options.denominator_floor);
      result.entries.push_back({t.name, i, analytic, numeric, err});
      result.max_relative_error = std::max(result.max_relative_error, err);
    }
  }
  return result;
}

/// Compares backward() against central differences of the weighted
/// cross-entropy. Dropout must be disabled; batch-norm uses batch statistics
/// (deterministic for a fixed batch) with running statistics frozen.
/// `tamper` may rewrite the analytic gradients before comparison.
template <typename Scalar>
GradCheckResult gradient_check(ConvNet<Scalar>& net, const SequenceBatch<Scalar>& batch,
                               std::span<const int> labels, const ClassWeights& weights,
                               const GradCheckOptions& options = {},
                               const std::function<void(typename ConvNet<Scalar>::Grads&)>& tamper = {}) {
  if (net.config().dropout_rate != 0.0) throw config_error("gradient check requires dropout_rate = 0");
  net.freeze_running_stats(true);
  if (options.fixed_batch_stats) {
    net.forward(batch, Mode::Train);
    net.fix_batch_stats(true);
  }
  auto analytic = backward(net, batch, labels, weights);
  if (tamper) tamper(analytic.grads);

  std::vector<CheckedTensor<Scalar>> tensors;
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool wanted = options.only.empty() ||
                        std::any_of(options.only.begin(), options.only.end(), [&](const std::string& prefix) {
                          return params[i]->name.rfind(prefix, 0) == 0;
                        });
    if (wanted) tensors.push_back({params[i]->name, &params[i]->value, analytic.grads[i]});
  }
  auto loss = [&] {
    return weighted_cross_entropy<Scalar>(net.forward(batch, Mode::Train), labels, weights);
  };
  auto result = finite_difference_check<Scalar>(loss, tensors, options);
  net.freeze_running_stats(false);
  net.fix_batch_stats(false);
  return result;
}

}  // namespace sleepnet::nn
