#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sleepnet/hpo.hpp"
#include "sleepnet/preprocess.hpp"
#include "sleepnet/training.hpp"

namespace sleepnet {

/// Everything one experiment needs. Relative store/stats paths default to
/// locations inside the output directory.
struct PipelineConfig {
  std::filesystem::path raw_dir = "raw";
  std::filesystem::path store_dir;   // empty: <output>/store
  std::filesystem::path stats_path;  // empty: <output>/stats.txt
  std::vector<std::string> train_ids;  // empty: every record not in val/test
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;

  PreprocessConfig preprocess;
  nn::ModelConfig model;

  std::uint64_t seed = 1;
  int max_epochs = 100;
  int patience = 10;
  bool timing = true;
  /// Per-record cap on training epochs in hours (0 disables). Epochs are
  /// chosen by seeded subsampling and keep their original order.
  double max_hours = 0.0;

  int hpo_trials = 20;
  double hpo_gamma = 0.25;
  int hpo_candidates = 24;
  int hpo_startup = 10;
  int hpo_best_k = 5;
  std::uint64_t hpo_seed = 1;
  bool hpo_resume = false;
  // Upper ends of the search space; defaults are the full search grid.
  int hpo_max_blocks = 10;
  int hpo_max_kernel = 50;
  std::vector<int> hpo_filters = {8, 16, 32, 64};

  std::vector<std::filesystem::path> checkpoints;  // empty: best configs, else model.ckpt
  std::vector<std::string> predict_ids;            // empty: test split, else every record

  bool scatter = false;

  std::filesystem::path output_dir = "out";

  std::filesystem::path store() const { return store_dir.empty() ? output_dir / "store" : store_dir; }
  std::filesystem::path stats() const { return stats_path.empty() ? output_dir / "stats.txt" : stats_path; }
};

struct Splits {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

/// Resolves the split lists against the available record ids. Throws a
/// config error on overlapping splits or unknown ids.
Splits resolve_splits(const PipelineConfig& config, const std::vector<std::string>& available);

/// Keeps at most round(hours * 120) epochs, chosen with a seeded shuffle and
/// returned in their original order.
std::vector<EpochTensor> cap_epochs(std::vector<EpochTensor> epochs, double hours, std::uint64_t seed);

/// Normalized, labeled epochs of the given store records.
Dataset load_epochs(const std::filesystem::path& store, const std::vector<std::string>& ids,
                    const NormalizationStats& stats, double max_hours = 0.0, std::uint64_t seed = 0);

std::vector<std::string> split_list(const std::string& text);

}  // namespace sleepnet
