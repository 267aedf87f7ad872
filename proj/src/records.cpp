#include "sleepnet/records.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sleepnet/error.hpp"

namespace sleepnet {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::string_view, kNumStages> kStageNames = {"W", "N1", "N2", "N3", "REM"};
constexpr std::array<std::string_view, 6> kChannelNames = {"EEG1",  "EEG2", "EOG_L",
                                                           "EOG_R", "EMG",  "ECG"};

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
  }
  return v;
}

Signal read_f32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw data_error("channel absent: cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % 4 != 0) throw data_error("truncated sample file " + path.string());
  in.seekg(0);
  std::vector<std::uint32_t> raw(bytes / 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  Signal out(static_cast<Eigen::Index>(raw.size()));
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[static_cast<Eigen::Index>(i)] = std::bit_cast<float>(to_little(raw[i]));
  }
  return out;
}

void write_f32(const Signal& s, const fs::path& path) {
  std::vector<std::uint32_t> raw(static_cast<std::size_t>(s.size()));
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    raw[static_cast<std::size_t>(i)] = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(s[i])));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
}

// Neumaier compensated summation.
struct CompensatedSum {
  double sum = 0.0;
  double comp = 0.0;
  void add(double v) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }
  double value() const { return sum + comp; }
};

long long rounded_count(double x) { return std::llround(x); }

}  // namespace

std::string_view stage_name(Stage s) { return kStageNames[static_cast<std::size_t>(s)]; }

Stage stage_from_code(long code) {
  if (code < 0 || code >= kNumStages) {
    throw data_error("bad annotation: stage code " + std::to_string(code));
  }
  return static_cast<Stage>(code);
}

Stage parse_stage(std::string_view text) {
  for (int i = 0; i < kNumStages; ++i) {
    if (text == kStageNames[static_cast<std::size_t>(i)]) return static_cast<Stage>(i);
  }
  long code = 0;
  std::string s(text);
  char* end = nullptr;
  code = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw data_error("bad annotation: '" + s + "'");
  }
  return stage_from_code(code);
}

std::string_view channel_name(ChannelKind k) { return kChannelNames[static_cast<std::size_t>(k)]; }

std::optional<ChannelKind> parse_channel(std::string_view name) {
  for (std::size_t i = 0; i < kChannelNames.size(); ++i) {
    if (name == kChannelNames[i]) return static_cast<ChannelKind>(i);
  }
  return std::nullopt;
}

int input_column(ChannelKind k) { return k == ChannelKind::ECG ? -1 : static_cast<int>(k); }

const Channel& PsgRecord::channel(ChannelKind k) const {
  auto it = channels.find(k);
  if (it == channels.end()) {
    throw data_error("channel absent: " + std::string(channel_name(k)) + " in record " + id);
  }
  return it->second;
}

Channel& PsgRecord::channel(ChannelKind k) {
  return const_cast<Channel&>(std::as_const(*this).channel(k));
}

void validate_record(const PsgRecord& record) {
  for (ChannelKind k : kInputChannels) record.channel(k);
  for (const auto& [kind, ch] : record.channels) {
    if (!(ch.rate > 0.0)) {
      throw data_error("invalid sample rate for " + std::string(channel_name(kind)));
    }
    const double per_epoch = ch.rate * kEpochSeconds;
    const long long expected = rounded_count(per_epoch * static_cast<double>(record.stages.size()));
    if (std::abs(per_epoch - std::round(per_epoch)) > 1e-9 || ch.samples.size() != expected) {
      throw data_error("length mismatch: channel " + std::string(channel_name(kind)) + " has " +
                       std::to_string(ch.samples.size()) + " samples, expected " +
                       std::to_string(expected) + " for " + std::to_string(record.stages.size()) +
                       " epochs in record " + record.id);
    }
  }
}

PsgRecord load_record(const fs::path& dir) {
  std::ifstream meta(dir / "meta");
  if (!meta) throw data_error("missing meta file in " + dir.string());

  PsgRecord record;
  record.id = dir.filename().string();
  std::string line;
  while (std::getline(meta, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key) || key.front() == '#') continue;
    if (key == "record_id") {
      ls >> record.id;
    } else if (key == "epoch_seconds") {
      double seconds = 0;
      ls >> seconds;
      if (seconds != kEpochSeconds) throw data_error("unsupported epoch length in " + dir.string());
    } else if (key == "channel") {
      std::string name, unit;
      double rate = 0;
      if (!(ls >> name >> rate >> unit)) throw data_error("malformed channel line: " + line);
      auto kind = parse_channel(name);
      if (!kind) throw data_error("unknown channel kind " + name);
      Channel ch;
      ch.rate = rate;
      ch.unit = unit;
      ch.samples = read_f32(dir / (name + ".f32"));
      record.channels[*kind] = std::move(ch);
    }
  }

  std::ifstream stages(dir / "stages");
  if (!stages) throw data_error("missing stages file in " + dir.string());
  while (std::getline(stages, line)) {
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t\r");
    record.stages.push_back(parse_stage(std::string_view(line).substr(first, last - first + 1)));
  }

  validate_record(record);
  return record;
}

void save_record(const PsgRecord& record, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream meta(dir / "meta");
  meta << "record_id " << record.id << "\n";
  meta << "epoch_seconds " << kEpochSeconds << "\n";
  for (const auto& [kind, ch] : record.channels) {
    char rate[64];
    std::snprintf(rate, sizeof rate, "%.17g", ch.rate);
    meta << "channel " << channel_name(kind) << ' ' << rate << ' ' << ch.unit << "\n";
    write_f32(ch.samples, dir / (std::string(channel_name(kind)) + ".f32"));
  }
  std::ofstream stages(dir / "stages");
  for (Stage s : record.stages) stages << stage_index(s) << "\n";
}

std::vector<std::string> list_records(const fs::path& root) {
  std::vector<std::string> ids;
  if (!fs::is_directory(root)) throw data_error("record store not found: " + root.string());
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "meta")) {
      ids.push_back(entry.path().filename().string());
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

Signal resample(const Signal& signal, double from_rate, double to_rate) {
  if (from_rate > to_rate) throw data_error("downsampling forbidden");
  if (from_rate == to_rate) return signal;
  const auto from = std::llround(from_rate);
  const auto to = std::llround(to_rate);
  if (from <= 0 || std::abs(from_rate - from) > 1e-9 || std::abs(to_rate - to) > 1e-9) {
    throw data_error("incompatible rates");
  }
  const long long g = std::gcd(from, to);
  const long long up = to / g;
  const long long down = from / g;
  const long long n = signal.size();
  if ((n * up) % down != 0) throw data_error("incompatible rates");
  const long long n_out = n * up / down;

  // Windowed-sinc low-pass on the up-sampled grid, cut at the input Nyquist,
  // truncated to kHalfInputTaps input samples on either side.
  constexpr long long kHalfInputTaps = 10;
  constexpr double kKaiserBeta = 6.0;
  const long long half = kHalfInputTaps * up;
  const double i0_beta = std::cyl_bessel_i(0.0, kKaiserBeta);
  auto kernel = [&](long long d) {
    if (std::abs(d) > half) return 0.0;
    const double x = static_cast<double>(d) / static_cast<double>(up);
    const double sinc = d == 0 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
    const double r = static_cast<double>(d) / static_cast<double>(half);
    return sinc * std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) / i0_beta;
  };

  // One weight row per phase, normalized to unit DC gain.
  const long long taps = 2 * kHalfInputTaps + 2;
  Eigen::MatrixXd weights = Eigen::MatrixXd::Zero(up, taps);
  for (long long p = 0; p < up; ++p) {
    for (long long j = 0; j < taps; ++j) {
      const long long offset = j - kHalfInputTaps;  // input index relative to floor position
      weights(p, j) = kernel(p - offset * up);
    }
    weights.row(p) /= weights.row(p).sum();
  }

  Signal out(n_out);
  for (long long m = 0; m < n_out; ++m) {
    const long long pos = m * down;
    const long long base = pos / up;
    const long long phase = pos - base * up;
    double acc = 0.0;
    for (long long j = 0; j < taps; ++j) {
      const long long idx = std::clamp(base + j - kHalfInputTaps, 0LL, n - 1);
      acc += weights(phase, j) * signal[idx];
    }
    out[m] = acc;
  }
  return out;
}

NormalizationStats compute_norm_stats(std::span<const PsgRecord> training_records) {
  if (training_records.empty()) throw data_error("empty training set for normalization stats");
  NormalizationStats stats;
  for (ChannelKind kind : kInputChannels) {
    CompensatedSum sum;
    long long count = 0;
    for (const auto& rec : training_records) {
      const Signal& x = rec.channel(kind).samples;
      for (Eigen::Index i = 0; i < x.size(); ++i) sum.add(x[i]);
      count += x.size();
    }
    if (count == 0) throw data_error("degenerate channel: " + std::string(channel_name(kind)));
    const double mean = sum.value() / static_cast<double>(count);
    CompensatedSum sq;
    for (const auto& rec : training_records) {
      const Signal& x = rec.channel(kind).samples;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double d = x[i] - mean;
        sq.add(d * d);
      }
    }
    const double sd = std::sqrt(sq.value() / static_cast<double>(count));
    if (!(sd > 0.0) || !std::isfinite(sd)) {
      throw data_error("degenerate channel: " + std::string(channel_name(kind)));
    }
    stats.channels[static_cast<std::size_t>(input_column(kind))] = {mean, sd};
  }
  return stats;
}

void save_stats(const NormalizationStats& stats, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write " + path.string());
  for (ChannelKind kind : kInputChannels) {
    const auto& c = stats[kind];
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s %.9g %.9g\n", std::string(channel_name(kind)).c_str(), c.mean,
                  c.std);
    out << buf;
  }
}

NormalizationStats load_stats(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw config_error("normalization stats not found: " + path.string());
  NormalizationStats stats;
  std::array<bool, kNumInputChannels> seen{};
  std::string name;
  double mean = 0, sd = 0;
  while (in >> name >> mean >> sd) {
    auto kind = parse_channel(name);
    if (!kind || *kind == ChannelKind::ECG) throw data_error("unexpected channel in stats: " + name);
    if (!(sd > 0.0)) throw data_error("degenerate channel: " + name);
    const auto col = static_cast<std::size_t>(input_column(*kind));
    stats.channels[col] = {mean, sd};
    seen[col] = true;
  }
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c]) {
      throw data_error("channel absent in stats file: " + std::string(channel_name(kInputChannels[c])));
    }
  }
  return stats;
}

EpochTensor normalize(const EpochTensor& epoch, const NormalizationStats& stats) {
  EpochTensor out = epoch;
  for (int c = 0; c < kNumInputChannels; ++c) {
    const auto& s = stats.channels[static_cast<std::size_t>(c)];
    out.values.col(c) = ((epoch.values.col(c).cast<double>().array() - s.mean) / s.std).cast<float>();
  }
  return out;
}

namespace {

std::vector<EpochTensor> cut_with(const PsgRecord& record, const NormalizationStats* stats) {
  for (ChannelKind kind : kInputChannels) {
    if (record.channel(kind).rate != kModelRate) {
      throw data_error("record " + record.id + ": channel " + std::string(channel_name(kind)) +
                       " not at the model rate");
    }
  }
  validate_record(record);
  std::vector<EpochTensor> epochs;
  epochs.reserve(record.stages.size());
  for (std::size_t e = 0; e < record.stages.size(); ++e) {
    EpochTensor t;
    t.values.resize(kEpochSamples, kNumInputChannels);
    for (int c = 0; c < kNumInputChannels; ++c) {
      const Signal& x = record.channel(kInputChannels[static_cast<std::size_t>(c)]).samples;
      auto segment = x.segment(static_cast<Eigen::Index>(e) * kEpochSamples, kEpochSamples);
      if (stats) {
        const auto& s = stats->channels[static_cast<std::size_t>(c)];
        t.values.col(c) = ((segment.array() - s.mean) / s.std).cast<float>();
      } else {
        t.values.col(c) = segment.cast<float>();
      }
    }
    t.label = record.stages[e];
    t.record_id = record.id;
    t.epoch_index = e;
    epochs.push_back(std::move(t));
  }
  return epochs;
}

}  // namespace

std::vector<EpochTensor> cut_epochs(const PsgRecord& record) { return cut_with(record, nullptr); }

std::vector<EpochTensor> cut_epochs(const PsgRecord& record, const NormalizationStats& stats) {
  return cut_with(record, &stats);
}

}  // namespace sleepnet
