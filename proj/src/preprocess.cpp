#include "sleepnet/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include "sleepnet/error.hpp"

namespace sleepnet {

namespace {

Biquad rbj(double b0, double b1, double b2, double a0, double a1, double a2) {
  return Biquad{{b0 / a0, b1 / a0, b2 / a0}, {a1 / a0, a2 / a0}};
}

std::vector<double> butterworth_q(int order) {
  std::vector<double> q;
  for (int k = 1; k <= order / 2; ++k) {
    q.push_back(1.0 / (2.0 * std::cos(M_PI * (2.0 * k - 1.0) / (2.0 * order))));
  }
  return q;
}

void check_order(int order) {
  if (order < 2 || order % 2 != 0) throw config_error("filter order must be even and >= 2");
}

// Steady-state transposed direct-form II state of one section for unit input.
std::array<double, 2> unit_steady_state(const Biquad& s) {
  const double gain = (s.b[0] + s.b[1] + s.b[2]) / (1.0 + s.a[0] + s.a[1]);
  const double z2 = s.b[2] - s.a[1] * gain;
  const double z1 = s.b[1] - s.a[0] * gain + z2;
  return {z1, z2};
}

double section_gain(const Biquad& s) { return (s.b[0] + s.b[1] + s.b[2]) / (1.0 + s.a[0] + s.a[1]); }

double pole_radius(const Biquad& s) {
  const std::complex<double> disc = std::sqrt(std::complex<double>(s.a[0] * s.a[0] - 4.0 * s.a[1]));
  const auto p1 = (-s.a[0] + disc) / 2.0;
  const auto p2 = (-s.a[0] - disc) / 2.0;
  return std::max(std::abs(p1), std::abs(p2));
}

Eigen::Index pad_length(const std::vector<Biquad>& sections, Eigen::Index n) {
  double r = 0.0;
  for (const auto& s : sections) r = std::max(r, pole_radius(s));
  Eigen::Index pad = 3 * (2 * static_cast<Eigen::Index>(sections.size()) + 1);
  if (r > 0.0 && r < 1.0) {
    // Long enough for the slowest mode to decay by 60 dB.
    pad = std::max<Eigen::Index>(pad, static_cast<Eigen::Index>(std::ceil(std::log(1e-3) / std::log(r))));
  }
  return std::min(pad, n - 1);
}

}  // namespace

std::vector<Biquad> design_notch(double center_hz, double quality, double rate) {
  if (!(center_hz > 0.0) || center_hz >= rate / 2.0) throw config_error("invalid cutoff");
  const double w0 = 2.0 * M_PI * center_hz / rate;
  const double alpha = std::sin(w0) / (2.0 * quality);
  const double c = std::cos(w0);
  return {rbj(1.0, -2.0 * c, 1.0, 1.0 + alpha, -2.0 * c, 1.0 - alpha)};
}

std::vector<Biquad> design_highpass(double cutoff_hz, int order, double rate) {
  if (!(cutoff_hz > 0.0) || cutoff_hz >= rate / 2.0) throw config_error("invalid cutoff");
  check_order(order);
  const double w0 = 2.0 * M_PI * cutoff_hz / rate;
  const double c = std::cos(w0);
  std::vector<Biquad> out;
  for (double q : butterworth_q(order)) {
    const double alpha = std::sin(w0) / (2.0 * q);
    out.push_back(rbj((1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0, 1.0 + alpha, -2.0 * c, 1.0 - alpha));
  }
  return out;
}

std::vector<Biquad> design_lowpass(double cutoff_hz, int order, double rate) {
  if (!(cutoff_hz > 0.0) || cutoff_hz >= rate / 2.0) throw config_error("invalid cutoff");
  check_order(order);
  const double w0 = 2.0 * M_PI * cutoff_hz / rate;
  const double c = std::cos(w0);
  std::vector<Biquad> out;
  for (double q : butterworth_q(order)) {
    const double alpha = std::sin(w0) / (2.0 * q);
    out.push_back(rbj((1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0, 1.0 + alpha, -2.0 * c, 1.0 - alpha));
  }
  return out;
}

Signal sosfilt(const std::vector<Biquad>& sections, const Signal& x) {
  Signal y = x;
  if (x.size() == 0) return y;
  double level = x[0];
  for (const auto& s : sections) {
    auto z = unit_steady_state(s);
    double z1 = z[0] * level;
    double z2 = z[1] * level;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double in = y[i];
      const double out = s.b[0] * in + z1;
      z1 = s.b[1] * in - s.a[0] * out + z2;
      z2 = s.b[2] * in - s.a[1] * out;
      y[i] = out;
    }
    level *= section_gain(s);
  }
  return y;
}

Signal sosfiltfilt(const std::vector<Biquad>& sections, const Signal& x) {
  const Eigen::Index n = x.size();
  if (n < 2) return x;
  const Eigen::Index pad = pad_length(sections, n);
  Signal ext(n + 2 * pad);
  for (Eigen::Index i = 0; i < pad; ++i) {
    ext[i] = 2.0 * x[0] - x[pad - i];
    ext[n + pad + i] = 2.0 * x[n - 1] - x[n - 2 - i];
  }
  ext.segment(pad, n) = x;
  Signal fwd = sosfilt(sections, ext);
  Signal back = sosfilt(sections, fwd.reverse().eval());
  return back.reverse().segment(pad, n);
}

Signal apply_notch(const Signal& signal, double rate, const FilterSpec& spec) {
  if (rate <= 2.0 * spec.frequency) throw config_error("notch not applicable");
  return sosfiltfilt(design_notch(spec.frequency, spec.quality, rate), signal);
}

Signal apply_highpass(const Signal& signal, double rate, const FilterSpec& spec) {
  return sosfiltfilt(design_highpass(spec.frequency, spec.order, rate), signal);
}

BeatSeries detect_qrs(const Signal& ecg, double rate, const QrsOptions& options) {
  BeatSeries result;
  result.rate = rate;
  const Eigen::Index n = ecg.size();
  if (n < 8) return result;

  auto band = design_highpass(options.band_low_hz, 2, rate);
  auto lp = design_lowpass(std::min(options.band_high_hz, 0.45 * rate), 2, rate);
  band.insert(band.end(), lp.begin(), lp.end());
  const Signal filtered = sosfiltfilt(band, ecg);

  Signal energy = Signal::Zero(n);
  for (Eigen::Index i = 2; i + 2 < n; ++i) {
    const double d = (2.0 * filtered[i + 1] + filtered[i + 2] - filtered[i - 2] - 2.0 * filtered[i - 1]) *
                     rate / 8.0;
    energy[i] = d * d;
  }

  // Centered moving-window integration.
  const Eigen::Index win = std::max<Eigen::Index>(1, std::lround(options.integration_window_s * rate));
  Signal integrated(n);
  {
    Signal prefix(n + 1);
    prefix[0] = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + energy[i];
    const Eigen::Index half = win / 2;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index lo = std::max<Eigen::Index>(0, i - half);
      const Eigen::Index hi = std::min<Eigen::Index>(n, i - half + win);
      integrated[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(win);
    }
  }

  std::vector<Eigen::Index> peaks;
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    if (integrated[i] > 0.0 && integrated[i] > integrated[i - 1] && integrated[i] >= integrated[i + 1]) {
      peaks.push_back(i);
    }
  }
  if (peaks.empty()) return result;

  const Eigen::Index refractory = std::max<Eigen::Index>(1, std::lround(options.refractory_s * rate));
  const Eigen::Index learn = std::min<Eigen::Index>(n, std::lround(2.0 * rate));
  double signal_peak = integrated.head(learn).maxCoeff() / 3.0;
  double noise_peak = integrated.head(learn).mean() / 2.0;
  auto threshold = [&] { return noise_peak + 0.25 * (signal_peak - noise_peak); };

  std::vector<Eigen::Index> beats;
  std::vector<Eigen::Index> rr;
  auto rr_average = [&] {
    const std::size_t k = std::min<std::size_t>(8, rr.size());
    double s = 0.0;
    for (std::size_t i = rr.size() - k; i < rr.size(); ++i) s += static_cast<double>(rr[i]);
    return s / static_cast<double>(k);
  };
  auto accept = [&](Eigen::Index p) {
    if (!beats.empty()) rr.push_back(p - beats.back());
    beats.push_back(p);
  };

  std::size_t scan_from = 0;  // first peak index not yet considered for search-back
  for (std::size_t k = 0; k < peaks.size(); ++k) {
    const Eigen::Index p = peaks[k];
    const double value = integrated[p];

    if (!beats.empty() && !rr.empty() && static_cast<double>(p - beats.back()) > 1.66 * rr_average()) {
      // Search back for the largest missed peak above half threshold.
      const double thr2 = 0.5 * threshold();
      Eigen::Index best = -1;
      for (std::size_t j = scan_from; j < k; ++j) {
        const Eigen::Index q = peaks[j];
        if (q - beats.back() < refractory || p - q < refractory) continue;
        if (integrated[q] > thr2 && (best < 0 || integrated[q] > integrated[best])) best = q;
      }
      if (best >= 0) {
        accept(best);
        signal_peak = 0.25 * integrated[best] + 0.75 * signal_peak;
      }
    }

    if (value > threshold()) {
      if (!beats.empty() && p - beats.back() < refractory) {
        if (value > integrated[beats.back()]) {
          beats.back() = p;
          if (!rr.empty()) rr.back() = beats.size() > 1 ? p - beats[beats.size() - 2] : rr.back();
        }
      } else {
        accept(p);
      }
      signal_peak = 0.125 * value + 0.875 * signal_peak;
      scan_from = k + 1;
    } else {
      noise_peak = 0.125 * value + 0.875 * noise_peak;
    }
  }

  // Locate each beat on the band-passed waveform.
  const Eigen::Index reach = std::max<Eigen::Index>(1, std::lround(0.1 * rate));
  for (auto& b : beats) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, b - reach);
    const Eigen::Index hi = std::min<Eigen::Index>(n - 1, b + reach);
    Eigen::Index arg = b;
    double best = -1.0;
    for (Eigen::Index i = lo; i <= hi; ++i) {
      if (std::abs(filtered[i]) > best) {
        best = std::abs(filtered[i]);
        arg = i;
      }
    }
    b = arg;
  }
  std::sort(beats.begin(), beats.end());

  for (Eigen::Index b : beats) {
    if (!result.beats.empty() && b - result.beats.back() < refractory) {
      if (std::abs(filtered[b]) > std::abs(filtered[result.beats.back()])) result.beats.back() = b;
      continue;
    }
    result.beats.push_back(b);
  }
  // Replacement can shrink the previous gap; one more pass settles it.
  std::vector<Eigen::Index> settled;
  for (Eigen::Index b : result.beats) {
    if (!settled.empty() && b - settled.back() < refractory) continue;
    settled.push_back(b);
  }
  result.beats = std::move(settled);
  return result;
}

bool QualityMask::at_time(double t) const {
  if (t < 0.0 || windows.empty()) return false;
  const auto w = static_cast<std::size_t>(std::floor(t / window_s));
  return w < windows.size() && windows[w];
}

double QualityMask::fraction_safe() const {
  if (windows.empty()) return 0.0;
  return static_cast<double>(std::count(windows.begin(), windows.end(), true)) /
         static_cast<double>(windows.size());
}

QualityMask assess_quality(const Signal& ecg, const BeatSeries& beats, double rate,
                           const QualityOptions& options) {
  QualityMask mask;
  mask.window_s = options.window_s;
  mask.duration_s = static_cast<double>(ecg.size()) / rate;
  const auto count = static_cast<std::size_t>(std::ceil(mask.duration_s / options.window_s - 1e-12));
  mask.windows.assign(count, false);

  std::vector<std::vector<double>> ibis(count);
  for (std::size_t k = 1; k < beats.size(); ++k) {
    const double t = static_cast<double>(beats.beats[k]) / rate;
    const auto w = static_cast<std::size_t>(std::floor(t / options.window_s));
    if (w < count) {
      ibis[w].push_back(static_cast<double>(beats.beats[k] - beats.beats[k - 1]) / rate);
    }
  }

  for (std::size_t w = 0; w < count; ++w) {
    const auto& v = ibis[w];
    if (v.size() < 2) continue;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    const double cv = std::sqrt(var / static_cast<double>(v.size())) / mean;
    const double bpm = 60.0 / mean;
    mask.windows[w] = bpm >= options.min_bpm && bpm <= options.max_bpm && cv < options.max_ibi_cv;
  }
  return mask;
}

Signal remove_ecg_artifact(const Signal& channel, const BeatSeries& beats, const QualityMask& mask,
                           double rate, const TemplateOptions& options) {
  Signal out = channel;
  if (beats.empty()) return out;
  const Eigen::Index n = channel.size();
  const Eigen::Index pre = std::lround(options.pre_s * rate);
  const Eigen::Index post = std::lround(options.post_s * rate);
  const Eigen::Index width = pre + post;

  Signal average = Signal::Zero(width);
  double weight = 0.0;  // 1 - decay^k, for bias correction
  for (std::size_t k = 0; k < beats.size(); ++k) {
    const double t = beats.time(k);
    if (!mask.at_time(t)) continue;
    const Eigen::Index start = std::lround(t * rate) - pre;

    if (weight > 0.0) {
      for (Eigen::Index j = 0; j < width; ++j) {
        const Eigen::Index i = start + j;
        if (i < 0 || i >= n) continue;
        if (mask.at_time(static_cast<double>(i) / rate)) out[i] -= average[j] / weight;
      }
    }
    if (start >= 0 && start + width <= n) {
      average = options.decay * average + (1.0 - options.decay) * channel.segment(start, width);
      weight = options.decay * weight + (1.0 - options.decay);
    }
  }
  return out;
}

PsgRecord preprocess_record(const PsgRecord& raw, const PreprocessConfig& config) {
  validate_record(raw);
  PsgRecord out;
  out.id = raw.id;
  out.stages = raw.stages;

  BeatSeries beats;
  QualityMask mask;
  const bool has_ecg = raw.has(ChannelKind::ECG);
  if (has_ecg) {
    const Channel& ecg = raw.channel(ChannelKind::ECG);
    beats = detect_qrs(ecg.samples, ecg.rate, config.qrs);
    mask = assess_quality(ecg.samples, beats, ecg.rate, config.quality);
  }

  for (ChannelKind kind : kInputChannels) {
    const Channel& src = raw.channel(kind);
    Signal x = src.samples;
    const bool notch_target =
        kind == ChannelKind::EEG1 || kind == ChannelKind::EEG2 || kind == ChannelKind::EMG;
    if (notch_target && src.rate > 2.0 * config.notch_hz) {
      x = apply_notch(x, src.rate, FilterSpec::notch(config.notch_hz, config.notch_q));
    }
    if (kind == ChannelKind::EMG) {
      x = apply_highpass(x, src.rate, FilterSpec::highpass(config.highpass_hz, config.highpass_order));
    }
    x = resample(x, src.rate, config.target_rate);
    if (has_ecg && !beats.empty()) {
      x = remove_ecg_artifact(x, beats, mask, config.target_rate, config.artifact);
    }
    out.channels[kind] = Channel{config.target_rate, src.unit, std::move(x)};
  }
  return out;
}

}  // namespace sleepnet
