#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace sleepnet {

/// Sleep stage with a fixed integer encoding W=0, N1=1, N2=2, N3=3, REM=4.
enum class Stage : int { W = 0, N1 = 1, N2 = 2, N3 = 3, REM = 4 };

inline constexpr int kNumStages = 5;
inline constexpr std::array<Stage, kNumStages> kAllStages = {Stage::W, Stage::N1, Stage::N2,
                                                             Stage::N3, Stage::REM};

std::string_view stage_name(Stage s);
/// Accepts "W", "N1", ... or the integer code. Throws "bad annotation".
Stage parse_stage(std::string_view text);
Stage stage_from_code(long code);
inline int stage_index(Stage s) { return static_cast<int>(s); }

enum class ChannelKind { EEG1, EEG2, EOG_L, EOG_R, EMG, ECG };

inline constexpr int kNumInputChannels = 5;
/// Model input columns, in EpochTensor column order. ECG is auxiliary.
inline constexpr std::array<ChannelKind, kNumInputChannels> kInputChannels = {
    ChannelKind::EEG1, ChannelKind::EEG2, ChannelKind::EOG_L, ChannelKind::EOG_R,
    ChannelKind::EMG};

std::string_view channel_name(ChannelKind k);
std::optional<ChannelKind> parse_channel(std::string_view name);
int input_column(ChannelKind k);  // -1 for ECG

inline constexpr double kEpochSeconds = 30.0;
inline constexpr double kModelRate = 125.0;
inline constexpr int kEpochSamples = 3750;  // 30 s at 125 Hz

using Signal = Eigen::VectorXd;

struct Channel {
  double rate = 0.0;  // Hz
  std::string unit = "uV";
  Signal samples;

  double duration() const { return static_cast<double>(samples.size()) / rate; }
};

struct PsgRecord {
  std::string id;
  std::map<ChannelKind, Channel> channels;
  std::vector<Stage> stages;  // one per consecutive 30 s epoch

  bool has(ChannelKind k) const { return channels.count(k) != 0; }
  const Channel& channel(ChannelKind k) const;
  Channel& channel(ChannelKind k);
  std::size_t epoch_count() const { return stages.size(); }
};

/// Checks the duration invariants. Throws "length mismatch" on violation.
void validate_record(const PsgRecord& record);

/// Reads a record directory: `meta`, `stages`, and one `<KIND>.f32` file per
/// channel (little-endian float32). The five model-input channels must be
/// present; ECG is optional.
PsgRecord load_record(const std::filesystem::path& dir);
void save_record(const PsgRecord& record, const std::filesystem::path& dir);

/// Record ids found under a store root (subdirectories containing `meta`),
/// sorted.
std::vector<std::string> list_records(const std::filesystem::path& root);

/// Polyphase rational upsampling. Output length is n * to / from and must be
/// an integer. Downsampling is rejected.
Signal resample(const Signal& signal, double from_rate, double to_rate);

using EpochMatrix = Eigen::Matrix<float, Eigen::Dynamic, kNumInputChannels>;

struct EpochTensor {
  EpochMatrix values;  // kEpochSamples x 5
  std::optional<Stage> label;
  std::string record_id;
  std::size_t epoch_index = 0;
};

struct ChannelStats {
  double mean = 0.0;
  double std = 1.0;  // population standard deviation
};

struct NormalizationStats {
  std::array<ChannelStats, kNumInputChannels> channels;

  const ChannelStats& operator[](ChannelKind k) const { return channels[input_column(k)]; }
};

/// Pooled per-channel mean and population std over every sample of each
/// model-input channel across the given records. Accumulates in a fixed order
/// with compensated summation.
NormalizationStats compute_norm_stats(std::span<const PsgRecord> training_records);

/// Lines of `CHANNEL mean std`, 9 significant digits.
void save_stats(const NormalizationStats& stats, const std::filesystem::path& path);
NormalizationStats load_stats(const std::filesystem::path& path);

EpochTensor normalize(const EpochTensor& epoch, const NormalizationStats& stats);

/// Cuts one un-normalized epoch per annotation. Input channels must be at
/// 125 Hz.
std::vector<EpochTensor> cut_epochs(const PsgRecord& record);
std::vector<EpochTensor> cut_epochs(const PsgRecord& record, const NormalizationStats& stats);

}  // namespace sleepnet
