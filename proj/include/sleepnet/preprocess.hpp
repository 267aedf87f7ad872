#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "sleepnet/records.hpp"

namespace sleepnet {

enum class FilterKind { Notch, Highpass };

struct FilterSpec {
  FilterKind kind = FilterKind::Notch;
  double frequency = 60.0;  // center (notch) or cutoff (high-pass), Hz
  double quality = 30.0;    // notch Q
  int order = 4;            // high-pass order, even

  static FilterSpec notch(double hz = 60.0, double q = 30.0) { return {FilterKind::Notch, hz, q, 2}; }
  static FilterSpec highpass(double hz = 15.0, int order = 4) {
    return {FilterKind::Highpass, hz, 0.0, order};
  }
};

/// Second-order IIR section, a0 normalized to 1.
struct Biquad {
  std::array<double, 3> b{};
  std::array<double, 2> a{};  // a1, a2
};

std::vector<Biquad> design_notch(double center_hz, double quality, double rate);
/// Butterworth high-pass as a cascade of order/2 sections (bilinear, prewarped).
std::vector<Biquad> design_highpass(double cutoff_hz, int order, double rate);
std::vector<Biquad> design_lowpass(double cutoff_hz, int order, double rate);

/// Single forward pass, starting from the steady state for the first sample.
Signal sosfilt(const std::vector<Biquad>& sections, const Signal& x);
/// Zero-phase forward-backward filtering with odd-reflection padding.
Signal sosfiltfilt(const std::vector<Biquad>& sections, const Signal& x);

Signal apply_notch(const Signal& signal, double rate, const FilterSpec& spec = FilterSpec::notch());
Signal apply_highpass(const Signal& signal, double rate,
                      const FilterSpec& spec = FilterSpec::highpass());

struct BeatSeries {
  std::vector<Eigen::Index> beats;  // sample positions, strictly increasing
  double rate = 0.0;

  std::size_t size() const { return beats.size(); }
  bool empty() const { return beats.empty(); }
  double time(std::size_t i) const { return static_cast<double>(beats[i]) / rate; }
};

struct QrsOptions {
  double refractory_s = 0.2;
  double integration_window_s = 0.15;
  double band_low_hz = 5.0;
  double band_high_hz = 15.0;
};

/// Pan-Tompkins-style detector: band-pass, derivative, squaring, moving-window
/// integration, adaptive threshold with search-back and refractory period.
BeatSeries detect_qrs(const Signal& ecg, double rate, const QrsOptions& options = {});

struct QualityOptions {
  double window_s = 10.0;
  double min_bpm = 30.0;
  double max_bpm = 180.0;
  double max_ibi_cv = 0.5;
};

/// Per-window flags over the ECG duration; window w covers
/// [w * window_s, (w + 1) * window_s).
struct QualityMask {
  std::vector<bool> windows;
  double window_s = 10.0;
  double duration_s = 0.0;

  bool at_time(double t) const;
  double fraction_safe() const;
};

QualityMask assess_quality(const Signal& ecg, const BeatSeries& beats, double rate,
                           const QualityOptions& options = {});

struct TemplateOptions {
  double pre_s = 0.2;
  double post_s = 0.4;
  double decay = 0.9;
};

/// Subtracts a running beat-synchronous template from `channel` around each
/// beat inside safe windows. The template for a beat is the bias-corrected
/// exponential average of previous safe beat windows, so the current beat
/// never contributes to its own correction. Beat positions are mapped from the
/// beat series rate onto `rate`.
Signal remove_ecg_artifact(const Signal& channel, const BeatSeries& beats, const QualityMask& mask,
                           double rate, const TemplateOptions& options = {});

struct PreprocessConfig {
  double notch_hz = 60.0;
  double notch_q = 30.0;
  double highpass_hz = 15.0;
  int highpass_order = 4;
  QrsOptions qrs;
  QualityOptions quality;
  TemplateOptions artifact;
  double target_rate = kModelRate;
};

/// Full per-record chain: filter at native rate, resample to the model rate,
/// remove cardiac artifact (when an ECG channel is present). The output holds
/// the five model-input channels only.
PsgRecord preprocess_record(const PsgRecord& raw, const PreprocessConfig& config = {});

}  // namespace sleepnet
