#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sleepnet/nn/network.hpp"

namespace sleepnet::hpo {

using nn::ModelConfig;

/// Search dimensions. Integer dimensions are inclusive ranges; the learning
/// rate is log-uniform with ln(lr) in [min_log_lr, max_log_lr].
struct SearchSpace {
  int min_blocks = 1;
  int max_blocks = 10;
  int min_kernel = 3;
  int max_kernel = 50;
  std::vector<int> filters = {8, 16, 32, 64};
  double min_log_lr = -10.0;
  double max_log_lr = -1.0;
  /// Fields that are not searched (dropout, batch size, input shape).
  ModelConfig base;
};

ModelConfig sample_uniform(const SearchSpace& space, std::mt19937_64& rng);
bool in_space(const ModelConfig& config, const SearchSpace& space);

enum class TrialStatus { Completed, Failed };

struct Trial {
  int index = 0;
  ModelConfig config;
  double objective = 0.0;  // higher is better
  TrialStatus status = TrialStatus::Completed;
  std::uint64_t seed = 0;
  double seconds = 0.0;
  std::string error;  // what the objective threw, if anything; not logged to CSV
};

struct TrialHistory {
  std::vector<Trial> trials;
  double gamma = 0.25;

  std::vector<const Trial*> completed() const;
};

struct TpeOptions {
  double gamma = 0.25;
  int n_candidates = 24;
  int n_startup = 10;
};

struct HistorySplit {
  std::vector<const Trial*> good;
  std::vector<const Trial*> bad;
};

/// Completed trials ordered by objective (descending, earlier trial first on
/// ties); the first ceil(gamma * n) are good, capped at n - 1 so the bad set
/// is never empty. Throws "insufficient history" below two completed trials.
HistorySplit split_history(const TrialHistory& history, double gamma);

/// Truncated mixture on [low, high]: one Gaussian per observation plus a
/// uniform prior component, equally weighted.
struct NumericMixture {
  double low = 0.0;
  double high = 1.0;
  bool integer = false;
  std::vector<double> centers;
  std::vector<double> sigmas;

  double density(double x) const;
  /// Probability of the integer k (mass of [k - 0.5, k + 0.5]).
  double mass(int k) const;
  double log_density_at(double x) const;
  double sample(std::mt19937_64& rng) const;
};

struct CategoricalDensity {
  std::vector<int> values;
  std::vector<double> probs;

  double prob(int value) const;
  int sample(std::mt19937_64& rng) const;
};

struct ParzenDensity {
  NumericMixture blocks;
  NumericMixture kernel;
  NumericMixture log_lr;
  CategoricalDensity filters;
  ModelConfig base;

  double log_density(const ModelConfig& config) const;
  ModelConfig sample(std::mt19937_64& rng) const;
};

NumericMixture fit_numeric(std::span<const double> observations, double low, double high, bool integer);
ParzenDensity fit_parzen(std::span<const ModelConfig> configs, const SearchSpace& space);

/// Index of the candidate maximizing log l(x) - log g(x); first on ties.
std::size_t best_candidate(std::span<const ModelConfig> candidates, const ParzenDensity& good,
                           const ParzenDensity& bad);

/// Uniform sample while fewer than n_startup trials have completed; otherwise
/// the best of n_candidates draws from the good-set density under l/g, which
/// maximizes expected improvement for the maximization orientation.
ModelConfig suggest(const TrialHistory& history, const SearchSpace& space, const TpeOptions& options,
                    std::mt19937_64& rng);

using Objective = std::function<double(const ModelConfig&, std::uint64_t seed)>;
using TrialCallback = std::function<void(const Trial&)>;

/// Per-trial random stream derived from (seed, trial index), so a resumed
/// search continues exactly as an uninterrupted one.
std::mt19937_64 trial_rng(std::uint64_t seed, int trial);

/// Sequential suggest -> evaluate -> append until the history holds n_trials.
/// Objective exceptions and non-finite values mark the trial failed.
TrialHistory run_search(const Objective& objective, const SearchSpace& space, int n_trials,
                        const TpeOptions& options, std::uint64_t seed, TrialHistory history = {},
                        const TrialCallback& on_trial = {});

/// Top-k completed trials, objective descending, earlier trial first on ties.
std::vector<Trial> best_k(const TrialHistory& history, std::size_t k);

inline constexpr const char* kTrialLogHeader = "trial,n_blocks,kernel,filters,lr,status,kappa,seconds";
std::string trial_log_line(const Trial& trial);
void append_trial_log(const Trial& trial, const std::filesystem::path& path);
TrialHistory read_trial_log(const std::filesystem::path& path, const ModelConfig& base);

}  // namespace sleepnet::hpo
