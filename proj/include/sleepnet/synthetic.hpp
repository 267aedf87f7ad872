#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sleepnet/records.hpp"

// Seeded generators for fixtures, demos and the acceptance suite.
namespace sleepnet::synthetic {

struct SyntheticEcg {
  Signal signal;
  std::vector<double> beat_times;  // R-peak times, seconds
};

/// Sum-of-Gaussians PQRST beats at `bpm` (with a few percent RR jitter) plus
/// white noise at the given SNR relative to the clean signal power.
SyntheticEcg ecg(double duration_s, double rate, double bpm, double snr_db, std::uint64_t seed);

/// Cardiac-shaped waveform (the clean PQRST shape) at the given beat times.
Signal cardiac_artifact(const std::vector<double>& beat_times, Eigen::Index n, double rate, double amplitude);

/// Band-limited noise resembling background EEG (summed random-phase
/// sinusoids between 1 and 30 Hz).
Signal eeg_background(Eigen::Index n, double rate, double rms, std::uint64_t seed);

/// Stage-dependent signal for one channel over one epoch. Every stage has a
/// distinct dominant frequency and amplitude on every channel.
Signal stage_signal(Stage stage, int input_column, Eigen::Index n, double rate, std::uint64_t seed);

/// Directly generated normalized-scale epochs (3750 x 5 at 125 Hz), labels
/// cycling through all five stages in a seeded shuffled order.
std::vector<EpochTensor> dataset(std::size_t n, std::uint64_t seed, const std::string& record_id = "synthetic");

/// Raw record at native rates: EEG and EMG at 125 Hz, EOG at 50 Hz, ECG at
/// 250 Hz. Stages follow a seeded sticky random walk covering all classes.
PsgRecord record(const std::string& id, std::size_t n_epochs, std::uint64_t seed);

}  // namespace sleepnet::synthetic
