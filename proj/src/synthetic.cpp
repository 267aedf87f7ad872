#include "sleepnet/synthetic.hpp"

#include <array>
#include <cmath>
#include <random>

#include "sleepnet/nn/layers.hpp"

namespace sleepnet::synthetic {

using nn::standard_normal;
using nn::uniform01;

namespace {

constexpr double kTwoPi = 6.283185307179586;

struct Wave {
  double offset;  // seconds from the R peak
  double amplitude;
  double width;
};

constexpr std::array<Wave, 5> kPqrst = {{
    {-0.20, 0.15, 0.025},
    {-0.035, -0.12, 0.010},
    {0.0, 1.00, 0.012},
    {0.035, -0.25, 0.010},
    {0.25, 0.35, 0.050},
}};

void add_beats(Signal& out, const std::vector<double>& beat_times, double rate, double amplitude) {
  const auto n = out.size();
  for (double t0 : beat_times) {
    const auto first = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::floor((t0 - 0.5) * rate)));
    const auto last = std::min<Eigen::Index>(n - 1, static_cast<Eigen::Index>(std::ceil((t0 + 0.6) * rate)));
    for (Eigen::Index i = first; i <= last; ++i) {
      const double t = static_cast<double>(i) / rate - t0;
      double v = 0.0;
      for (const auto& w : kPqrst) {
        const double z = (t - w.offset) / w.width;
        v += w.amplitude * std::exp(-0.5 * z * z);
      }
      out[i] += amplitude * v;
    }
  }
}

// Dominant frequency (Hz) and amplitude per stage (rows) and input channel.
constexpr double kFrequency[kNumStages][kNumInputChannels] = {
    {10.0, 18.0, 3.0, 6.0, 30.0},   // W
    {5.0, 7.0, 1.0, 2.0, 30.0},     // N1
    {13.0, 12.0, 8.0, 11.0, 30.0},  // N2
    {1.5, 2.0, 15.0, 22.0, 30.0},   // N3
    {20.0, 4.0, 5.0, 4.0, 30.0},    // REM
};
constexpr double kAmplitude[kNumStages][kNumInputChannels] = {
    {0.8, 0.8, 1.5, 1.5, 2.0},
    {1.0, 1.0, 0.7, 0.7, 1.0},
    {1.2, 1.2, 0.5, 0.5, 0.6},
    {2.0, 2.0, 0.4, 0.4, 0.4},
    {0.9, 0.9, 1.8, 1.8, 0.2},
};
constexpr double kNoise = 0.5;

// Raw-store scale (uV) per input channel.
constexpr double kRawScale[kNumInputChannels] = {20.0, 20.0, 30.0, 30.0, 5.0};

}  // namespace

SyntheticEcg ecg(double duration_s, double rate, double bpm, double snr_db, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SyntheticEcg out;
  const auto n = static_cast<Eigen::Index>(std::llround(duration_s * rate));
  const double rr = 60.0 / bpm;
  for (double t = 0.5; t < duration_s - 0.5; t += rr * (1.0 + 0.03 * (2.0 * uniform01(rng) - 1.0))) {
    out.beat_times.push_back(t);
  }
  out.signal = Signal::Zero(n);
  add_beats(out.signal, out.beat_times, rate, 1.0);
  const double power = out.signal.squaredNorm() / static_cast<double>(n);
  const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
  for (Eigen::Index i = 0; i < n; ++i) out.signal[i] += sigma * standard_normal(rng);
  return out;
}

Signal cardiac_artifact(const std::vector<double>& beat_times, Eigen::Index n, double rate, double amplitude) {
  Signal out = Signal::Zero(n);
  add_beats(out, beat_times, rate, amplitude);
  return out;
}

Signal eeg_background(Eigen::Index n, double rate, double rms, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // Enough components that no single tone dominates; a strong tone near a
  // heart-rate harmonic would be indistinguishable from cardiac artifact.
  constexpr int kComponents = 256;
  Signal out = Signal::Zero(n);
  for (int c = 0; c < kComponents; ++c) {
    const double f = 1.0 + 29.0 * uniform01(rng);
    const double phase = kTwoPi * uniform01(rng);
    const double amp = 1.0 / std::sqrt(f);
    for (Eigen::Index i = 0; i < n; ++i) out[i] += amp * std::sin(kTwoPi * f * static_cast<double>(i) / rate + phase);
  }
  const double current = std::sqrt(out.squaredNorm() / static_cast<double>(n));
  return out * (rms / current);
}

Signal stage_signal(Stage stage, int column, Eigen::Index n, double rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto s = static_cast<std::size_t>(stage_index(stage));
  const auto c = static_cast<std::size_t>(column);
  const double f = kFrequency[s][c] * (1.0 + 0.05 * (2.0 * uniform01(rng) - 1.0));
  const double amp = kAmplitude[s][c] * (1.0 + 0.1 * (2.0 * uniform01(rng) - 1.0));
  const double phase = kTwoPi * uniform01(rng);
  Signal out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out[i] = amp * std::sin(kTwoPi * f * static_cast<double>(i) / rate + phase) + kNoise * standard_normal(rng);
  }
  return out;
}

std::vector<EpochTensor> dataset(std::size_t n, std::uint64_t seed, const std::string& record_id) {
  std::mt19937_64 rng(seed);
  std::vector<Stage> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<Stage>(i % kNumStages);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = std::min(i - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i)));
    std::swap(labels[i - 1], labels[j]);
  }
  std::vector<EpochTensor> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& e = out[i];
    e.values.resize(kEpochSamples, kNumInputChannels);
    for (int c = 0; c < kNumInputChannels; ++c) {
      e.values.col(c) = stage_signal(labels[i], c, kEpochSamples, kModelRate, rng()).cast<float>();
    }
    e.label = labels[i];
    e.record_id = record_id;
    e.epoch_index = i;
  }
  return out;
}

PsgRecord record(const std::string& id, std::size_t n_epochs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PsgRecord rec;
  rec.id = id;
  Stage current = Stage::W;
  for (std::size_t e = 0; e < n_epochs; ++e) {
    if (e > 0 && uniform01(rng) < 0.25) {
      current = static_cast<Stage>(std::min(kNumStages - 1, static_cast<int>(uniform01(rng) * kNumStages)));
    }
    rec.stages.push_back(current);
  }
  if (n_epochs >= kNumStages) {
    std::array<bool, kNumStages> seen{};
    for (Stage s : rec.stages) seen[static_cast<std::size_t>(stage_index(s))] = true;
    for (int c = 0; c < kNumStages; ++c) {
      if (!seen[static_cast<std::size_t>(c)]) rec.stages[static_cast<std::size_t>(c) * n_epochs / kNumStages] = static_cast<Stage>(c);
    }
  }

  const double duration = static_cast<double>(n_epochs) * kEpochSeconds;
  const double ecg_rate = 250.0;
  auto heart = ecg(duration, ecg_rate, 60.0 + 15.0 * uniform01(rng), 20.0, rng());
  rec.channels[ChannelKind::ECG] = Channel{ecg_rate, "mV", heart.signal};

  for (ChannelKind kind : kInputChannels) {
    const int col = input_column(kind);
    const double rate = (kind == ChannelKind::EOG_L || kind == ChannelKind::EOG_R) ? 50.0 : 125.0;
    const auto per_epoch = static_cast<Eigen::Index>(std::llround(kEpochSeconds * rate));
    Signal x(per_epoch * static_cast<Eigen::Index>(n_epochs));
    for (std::size_t e = 0; e < n_epochs; ++e) {
      x.segment(static_cast<Eigen::Index>(e) * per_epoch, per_epoch) =
          stage_signal(rec.stages[e], col, per_epoch, rate, rng()) * kRawScale[col];
    }
    if (kind == ChannelKind::EEG1 || kind == ChannelKind::EEG2) {
      x += cardiac_artifact(heart.beat_times, x.size(), rate, 4.0);
      for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += 3.0 * std::sin(kTwoPi * 60.0 * static_cast<double>(i) / rate);
    }
    rec.channels[kind] = Channel{rate, "uV", std::move(x)};
  }
  return rec;
}

}  // namespace sleepnet::synthetic
