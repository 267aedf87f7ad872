#include "sleepnet/nn/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace sleepnet::nn {

namespace {

constexpr const char* kMagic = "sleepnet-checkpoint";
constexpr int kVersion = 1;

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
  }
  return v;
}

std::vector<std::string> tensor_names(const ConvNet<float>& net) {
  std::vector<std::string> names;
  for (const auto* p : net.parameters()) names.push_back(p->name);
  for (std::size_t i = 0; i < net.blocks().size(); ++i) {
    const std::string prefix = "block" + std::to_string(i + 1) + ".norm.";
    names.push_back(prefix + "running_mean");
    names.push_back(prefix + "running_var");
  }
  return names;
}

}  // namespace

void save_checkpoint(const ConvNet<float>& net, long long step, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write checkpoint " + path.string());
  const auto& c = net.config();
  const auto state = net.state();
  const auto names = tensor_names(net);

  out << kMagic << ' ' << kVersion << '\n'
      << "n_blocks " << c.n_blocks << '\n'
      << "kernel_size " << c.kernel_size << '\n'
      << "initial_filters " << c.initial_filters << '\n'
      << "learning_rate " << fmt_double(c.learning_rate) << '\n'
      << "dropout_rate " << fmt_double(c.dropout_rate) << '\n'
      << "batch_size " << c.batch_size << '\n'
      << "input_length " << c.input_length << '\n'
      << "input_channels " << c.input_channels << '\n'
      << "seed " << net.seed() << '\n'
      << "step " << step << '\n';
  for (std::size_t i = 0; i < state.tensors.size(); ++i) {
    out << "tensor " << names[i] << ' ' << state.tensors[i].rows() << ' ' << state.tensors[i].cols() << '\n';
  }
  out << "end\n";
  for (const auto& t : state.tensors) {
    std::vector<std::uint32_t> raw(static_cast<std::size_t>(t.size()));
    for (Index i = 0; i < t.size(); ++i) {
      raw[static_cast<std::size_t>(i)] = to_little(std::bit_cast<std::uint32_t>(t.data()[i]));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  }
  if (!out) throw data_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open checkpoint " + path.string());
  auto bad = [&](const std::string& why) { return data_error("checkpoint " + path.string() + ": " + why); };

  std::string line;
  if (!std::getline(in, line)) throw bad("empty file");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != kMagic || version != kVersion) throw bad("unrecognized header");
  }

  ModelConfig config;
  std::uint64_t seed = 0;
  long long step = 0;
  struct Shape {
    std::string name;
    Index rows, cols;
  };
  std::vector<Shape> shapes;
  bool ended = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "end") {
      ended = true;
      break;
    }
    if (key == "n_blocks") ls >> config.n_blocks;
    else if (key == "kernel_size") ls >> config.kernel_size;
    else if (key == "initial_filters") ls >> config.initial_filters;
    else if (key == "learning_rate") ls >> config.learning_rate;
    else if (key == "dropout_rate") ls >> config.dropout_rate;
    else if (key == "batch_size") ls >> config.batch_size;
    else if (key == "input_length") ls >> config.input_length;
    else if (key == "input_channels") ls >> config.input_channels;
    else if (key == "seed") ls >> seed;
    else if (key == "step") ls >> step;
    else if (key == "tensor") {
      Shape s;
      ls >> s.name >> s.rows >> s.cols;
      shapes.push_back(s);
    } else {
      throw bad("unknown header key '" + key + "'");
    }
    if (ls.fail()) throw bad("malformed header line '" + line + "'");
  }
  if (!ended) throw bad("missing end of header");

  ConvNet<float> net(config, seed);
  auto state = net.state();
  const auto names = tensor_names(net);
  if (shapes.size() != state.tensors.size()) throw bad("tensor count does not match the model config");
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    auto& t = state.tensors[i];
    if (shapes[i].name != names[i] || shapes[i].rows != t.rows() || shapes[i].cols != t.cols()) {
      throw bad("tensor " + shapes[i].name + " does not match the model config");
    }
    std::vector<std::uint32_t> raw(static_cast<std::size_t>(t.size()));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
    if (!in) throw bad("truncated tensor data");
    for (Index k = 0; k < t.size(); ++k) {
      t.data()[k] = std::bit_cast<float>(to_little(raw[static_cast<std::size_t>(k)]));
    }
  }
  net.load_state(state);
  return {std::move(net), step};
}

}  // namespace sleepnet::nn
