#include "sleepnet/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "sleepnet/error.hpp"

namespace sleepnet {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    const auto b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

Splits resolve_splits(const PipelineConfig& config, const std::vector<std::string>& available) {
  const std::set<std::string> known(available.begin(), available.end());
  std::set<std::string> taken;
  auto claim = [&](const std::vector<std::string>& ids, const char* split) {
    for (const auto& id : ids) {
      if (!known.count(id)) throw config_error(std::string("unknown record in ") + split + " split: " + id);
      if (!taken.insert(id).second) throw config_error("record " + id + " appears in more than one split");
    }
  };
  claim(config.train_ids, "train");
  claim(config.val_ids, "val");
  claim(config.test_ids, "test");

  Splits s{config.train_ids, config.val_ids, config.test_ids};
  if (s.train.empty()) {
    for (const auto& id : available) {
      if (!taken.count(id)) s.train.push_back(id);
    }
  }
  return s;
}

std::vector<EpochTensor> cap_epochs(std::vector<EpochTensor> epochs, double hours, std::uint64_t seed) {
  if (hours <= 0.0) return epochs;
  const auto keep = static_cast<std::size_t>(std::llround(hours * 3600.0 / kEpochSeconds));
  if (epochs.size() <= keep) return epochs;
  std::vector<std::size_t> order(epochs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = std::min(i - 1, static_cast<std::size_t>(nn::uniform01(rng) * static_cast<double>(i)));
    std::swap(order[i - 1], order[j]);
  }
  order.resize(keep);
  std::sort(order.begin(), order.end());
  std::vector<EpochTensor> out;
  out.reserve(keep);
  for (std::size_t i : order) out.push_back(std::move(epochs[i]));
  return out;
}

Dataset load_epochs(const std::filesystem::path& store, const std::vector<std::string>& ids,
                    const NormalizationStats& stats, double max_hours, std::uint64_t seed) {
  Dataset out;
  std::uint64_t k = 0;
  for (const auto& id : ids) {
    auto epochs = cut_epochs(load_record(store / id), stats);
    epochs = cap_epochs(std::move(epochs), max_hours, seed + 0x9e3779b97f4a7c15ULL * ++k);
    for (auto& e : epochs) out.push_back(std::move(e));
  }
  return out;
}

}  // namespace sleepnet
