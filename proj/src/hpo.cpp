#include "sleepnet/hpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "sleepnet/error.hpp"

namespace sleepnet::hpo {

using nn::standard_normal;
using nn::uniform01;

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double normal_cdf(double z) { return 0.5 * std::erfc(-z * kInvSqrt2); }

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  const auto span = static_cast<double>(hi - lo + 1);
  return lo + std::min(hi - lo, static_cast<int>(uniform01(rng) * span));
}

}  // namespace

ModelConfig sample_uniform(const SearchSpace& space, std::mt19937_64& rng) {
  ModelConfig c = space.base;
  c.n_blocks = uniform_int(rng, space.min_blocks, space.max_blocks);
  c.kernel_size = uniform_int(rng, space.min_kernel, space.max_kernel);
  c.initial_filters = space.filters[static_cast<std::size_t>(
      uniform_int(rng, 0, static_cast<int>(space.filters.size()) - 1))];
  c.learning_rate = std::exp(space.min_log_lr + (space.max_log_lr - space.min_log_lr) * uniform01(rng));
  return c;
}

bool in_space(const ModelConfig& c, const SearchSpace& s) {
  const double log_lr = std::log(c.learning_rate);
  return c.n_blocks >= s.min_blocks && c.n_blocks <= s.max_blocks && c.kernel_size >= s.min_kernel &&
         c.kernel_size <= s.max_kernel &&
         std::find(s.filters.begin(), s.filters.end(), c.initial_filters) != s.filters.end() &&
         log_lr >= s.min_log_lr - 1e-12 && log_lr <= s.max_log_lr + 1e-12;
}

std::vector<const Trial*> TrialHistory::completed() const {
  std::vector<const Trial*> out;
  for (const auto& t : trials) {
    if (t.status == TrialStatus::Completed) out.push_back(&t);
  }
  return out;
}

HistorySplit split_history(const TrialHistory& history, double gamma) {
  auto done = history.completed();
  if (done.size() < 2) throw data_error("insufficient history: need at least 2 completed trials");
  std::stable_sort(done.begin(), done.end(),
                   [](const Trial* a, const Trial* b) { return a->objective > b->objective; });
  const auto n = done.size();
  auto n_good = static_cast<std::size_t>(std::ceil(gamma * static_cast<double>(n) - 1e-9));
  n_good = std::clamp<std::size_t>(n_good, 1, n - 1);
  HistorySplit split;
  split.good.assign(done.begin(), done.begin() + static_cast<std::ptrdiff_t>(n_good));
  split.bad.assign(done.begin() + static_cast<std::ptrdiff_t>(n_good), done.end());
  return split;
}

double NumericMixture::density(double x) const {
  if (x < low || x > high) return 0.0;
  const double w = 1.0 / static_cast<double>(centers.size() + 1);
  double p = w / (high - low);
  for (std::size_t k = 0; k < centers.size(); ++k) {
    const double s = sigmas[k];
    const double z = (x - centers[k]) / s;
    const double norm = normal_cdf((high - centers[k]) / s) - normal_cdf((low - centers[k]) / s);
    p += w * kInvSqrt2Pi * std::exp(-0.5 * z * z) / (s * norm);
  }
  return p;
}

double NumericMixture::mass(int value) const {
  const double a = std::max(low, value - 0.5);
  const double b = std::min(high, value + 0.5);
  if (b <= a) return 0.0;
  const double w = 1.0 / static_cast<double>(centers.size() + 1);
  double p = w * (b - a) / (high - low);
  for (std::size_t k = 0; k < centers.size(); ++k) {
    const double s = sigmas[k];
    const double norm = normal_cdf((high - centers[k]) / s) - normal_cdf((low - centers[k]) / s);
    p += w * (normal_cdf((b - centers[k]) / s) - normal_cdf((a - centers[k]) / s)) / norm;
  }
  return p;
}

double NumericMixture::log_density_at(double x) const {
  return std::log(integer ? mass(static_cast<int>(std::lround(x))) : density(x));
}

double NumericMixture::sample(std::mt19937_64& rng) const {
  const auto component = static_cast<std::size_t>(
      std::min<double>(static_cast<double>(centers.size()), uniform01(rng) * static_cast<double>(centers.size() + 1)));
  double x = 0.0;
  if (component == centers.size()) {
    x = low + (high - low) * uniform01(rng);
  } else {
    bool accepted = false;
    for (int attempt = 0; attempt < 64 && !accepted; ++attempt) {
      x = centers[component] + sigmas[component] * standard_normal(rng);
      accepted = x >= low && x <= high;
    }
    if (!accepted) x = std::clamp(x, low, high);
  }
  if (integer) {
    x = std::clamp(std::round(x), std::ceil(low), std::floor(high));
  }
  return x;
}

double CategoricalDensity::prob(int value) const {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] == value) return probs[i];
  }
  return 0.0;
}

int CategoricalDensity::sample(std::mt19937_64& rng) const {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += probs[i];
    if (u < acc) return values[i];
  }
  return values.back();
}

NumericMixture fit_numeric(std::span<const double> observations, double low, double high, bool integer) {
  NumericMixture m;
  m.integer = integer;
  m.low = integer ? low - 0.5 : low;
  m.high = integer ? high + 0.5 : high;
  const double range = m.high - m.low;
  std::vector<double> sorted(observations.begin(), observations.end());
  std::sort(sorted.begin(), sorted.end());
  for (double x : observations) {
    double nearest = std::numeric_limits<double>::infinity();
    bool skipped_self = false;
    for (double y : sorted) {
      if (y == x && !skipped_self) {
        skipped_self = true;
        continue;
      }
      nearest = std::min(nearest, std::abs(y - x));
    }
    m.centers.push_back(x);
    m.sigmas.push_back(std::clamp(nearest, 0.01 * range, range));
  }
  return m;
}

ParzenDensity fit_parzen(std::span<const ModelConfig> configs, const SearchSpace& space) {
  if (configs.empty()) throw data_error("fit_parzen needs at least one observation");
  std::vector<double> blocks, kernel, log_lr;
  for (const auto& c : configs) {
    blocks.push_back(c.n_blocks);
    kernel.push_back(c.kernel_size);
    log_lr.push_back(std::log(c.learning_rate));
  }
  ParzenDensity d;
  d.base = space.base;
  d.blocks = fit_numeric(blocks, space.min_blocks, space.max_blocks, true);
  d.kernel = fit_numeric(kernel, space.min_kernel, space.max_kernel, true);
  d.log_lr = fit_numeric(log_lr, space.min_log_lr, space.max_log_lr, false);

  // One pseudo-count per category plus a uniform prior worth one observation.
  const auto k = static_cast<double>(space.filters.size());
  const auto n = static_cast<double>(configs.size());
  d.filters.values = space.filters;
  for (int v : space.filters) {
    const auto count = static_cast<double>(
        std::count_if(configs.begin(), configs.end(), [v](const ModelConfig& c) { return c.initial_filters == v; }));
    d.filters.probs.push_back((count + 1.0 + 1.0 / k) / (n + k + 1.0));
  }
  return d;
}

double ParzenDensity::log_density(const ModelConfig& c) const {
  return blocks.log_density_at(c.n_blocks) + kernel.log_density_at(c.kernel_size) +
         log_lr.log_density_at(std::log(c.learning_rate)) + std::log(filters.prob(c.initial_filters));
}

ModelConfig ParzenDensity::sample(std::mt19937_64& rng) const {
  ModelConfig c = base;
  c.n_blocks = static_cast<int>(blocks.sample(rng));
  c.kernel_size = static_cast<int>(kernel.sample(rng));
  c.initial_filters = filters.sample(rng);
  c.learning_rate = std::exp(log_lr.sample(rng));
  return c;
}

std::size_t best_candidate(std::span<const ModelConfig> candidates, const ParzenDensity& good,
                           const ParzenDensity& bad) {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double score = good.log_density(candidates[i]) - bad.log_density(candidates[i]);
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  return best;
}

ModelConfig suggest(const TrialHistory& history, const SearchSpace& space, const TpeOptions& options,
                    std::mt19937_64& rng) {
  const auto done = history.completed();
  if (done.size() < static_cast<std::size_t>(std::max(2, options.n_startup))) return sample_uniform(space, rng);
  const auto split = split_history(history, options.gamma);
  std::vector<ModelConfig> good, bad;
  for (const auto* t : split.good) good.push_back(t->config);
  for (const auto* t : split.bad) bad.push_back(t->config);
  const auto l = fit_parzen(good, space);
  const auto g = fit_parzen(bad, space);
  std::vector<ModelConfig> candidates;
  for (int i = 0; i < std::max(1, options.n_candidates); ++i) candidates.push_back(l.sample(rng));
  return candidates[best_candidate(candidates, l, g)];
}

std::mt19937_64 trial_rng(std::uint64_t seed, int trial) {
  // splitmix64 finalizer over (seed, trial)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(trial) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return std::mt19937_64(z ^ (z >> 31));
}

TrialHistory run_search(const Objective& objective, const SearchSpace& space, int n_trials,
                        const TpeOptions& options, std::uint64_t seed, TrialHistory history,
                        const TrialCallback& on_trial) {
  history.gamma = options.gamma;
  for (int t = static_cast<int>(history.trials.size()); t < n_trials; ++t) {
    auto rng = trial_rng(seed, t);
    Trial trial;
    trial.index = t;
    trial.config = suggest(history, space, options, rng);
    trial.seed = rng();
    const auto started = std::chrono::steady_clock::now();
    try {
      trial.objective = objective(trial.config, trial.seed);
      trial.status = std::isfinite(trial.objective) ? TrialStatus::Completed : TrialStatus::Failed;
      if (trial.status == TrialStatus::Failed) trial.error = "non-finite objective";
    } catch (const std::exception& e) {
      trial.status = TrialStatus::Failed;
      trial.error = e.what();
    }
    if (trial.status == TrialStatus::Failed) trial.objective = std::numeric_limits<double>::quiet_NaN();
    trial.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    history.trials.push_back(trial);
    if (on_trial) on_trial(history.trials.back());
  }
  return history;
}

std::vector<Trial> best_k(const TrialHistory& history, std::size_t k) {
  auto done = history.completed();
  if (done.size() < k) {
    throw data_error("insufficient completed trials: need " + std::to_string(k) + ", have " +
                     std::to_string(done.size()));
  }
  std::stable_sort(done.begin(), done.end(),
                   [](const Trial* a, const Trial* b) { return a->objective > b->objective; });
  std::vector<Trial> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(*done[i]);
  return out;
}

std::string trial_log_line(const Trial& t) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%d,%d,%d,%.17g,%s,%.17g,%.3f", t.index, t.config.n_blocks,
                t.config.kernel_size, t.config.initial_filters, t.config.learning_rate,
                t.status == TrialStatus::Completed ? "completed" : "failed", t.objective, t.seconds);
  return buf;
}

void append_trial_log(const Trial& trial, const std::filesystem::path& path) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw data_error("cannot write trial log " + path.string());
  if (fresh) out << kTrialLogHeader << '\n';
  out << trial_log_line(trial) << '\n';
}

TrialHistory read_trial_log(const std::filesystem::path& path, const ModelConfig& base) {
  TrialHistory history;
  std::ifstream in(path);
  if (!in) return history;
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line != kTrialLogHeader) throw data_error("unexpected trial log header in " + path.string());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 8) throw data_error("malformed trial log line: " + line);
    Trial t;
    t.config = base;
    try {
      t.index = std::stoi(fields[0]);
      t.config.n_blocks = std::stoi(fields[1]);
      t.config.kernel_size = std::stoi(fields[2]);
      t.config.initial_filters = std::stoi(fields[3]);
      t.config.learning_rate = std::stod(fields[4]);
      t.objective = std::stod(fields[6]);
      t.seconds = std::stod(fields[7]);
    } catch (const std::exception&) {
      throw data_error("malformed trial log line: " + line);
    }
    t.status = fields[5] == "completed" ? TrialStatus::Completed : TrialStatus::Failed;
    if (t.index != static_cast<int>(history.trials.size())) throw data_error("trial log out of order at " + line);
    history.trials.push_back(t);
  }
  return history;
}

}  // namespace sleepnet::hpo
