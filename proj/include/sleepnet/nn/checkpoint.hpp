#pragma once

#include <cstdint>
#include <filesystem>

#include "sleepnet/nn/network.hpp"

namespace sleepnet::nn {

struct Checkpoint {
  ConvNet<float> net;
  long long step = 0;
};

/// Text header (format tag, model config, seed, step, tensor table) ending in
/// an `end` line, followed by the raw little-endian float32 tensors in table
/// order: trainable parameters, then per-block running mean and variance.
void save_checkpoint(const ConvNet<float>& net, long long step, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sleepnet::nn
