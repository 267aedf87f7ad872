#include "sleepnet/nn/network.hpp"

#include <cmath>
#include <sstream>

namespace sleepnet::nn {

void validate(const ModelConfig& c) {
  auto fail = [](const std::string& what) { throw config_error("config out of range: " + what); };
  if (c.n_blocks < 1 || c.n_blocks > 10) fail("n_blocks must be in [1, 10]");
  if (c.kernel_size < 3 || c.kernel_size > 50) fail("kernel_size must be in [3, 50]");
  if (c.initial_filters != 8 && c.initial_filters != 16 && c.initial_filters != 32 &&
      c.initial_filters != 64) {
    fail("initial_filters must be one of 8, 16, 32, 64");
  }
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) fail("learning_rate must be positive");
  if (!(c.dropout_rate >= 0.0 && c.dropout_rate < 1.0)) fail("dropout_rate must be in [0, 1)");
  if (c.batch_size < 1) fail("batch_size must be positive");
  if (c.input_channels < 1) fail("input_channels must be positive");
  if ((c.input_length >> c.n_blocks) < 1) fail("input_length too short for n_blocks");
}

std::vector<int> block_filters(const ModelConfig& config) {
  std::vector<int> out;
  long long f = config.initial_filters;
  for (int i = 0; i < config.n_blocks; ++i) {
    out.push_back(static_cast<int>(std::min<long long>(f, kMaxFilters)));
    f = std::min<long long>(f * 2, kMaxFilters);
  }
  return out;
}

std::vector<int> block_lengths(const ModelConfig& config) {
  std::vector<int> out;
  int length = config.input_length;
  for (int i = 0; i < config.n_blocks; ++i) {
    length /= 2;
    out.push_back(length);
  }
  return out;
}

template <typename Scalar>
ConvNet<Scalar>::ConvNet(const ModelConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed), dropout_(config.dropout_rate) {
  validate(config);
  std::mt19937_64 init_rng(seed);
  dropout_rng_.seed(seed ^ 0x9e3779b97f4a7c15ULL);
  Index in = config.input_channels;
  const auto filters = block_filters(config);
  for (int i = 0; i < config.n_blocks; ++i) {
    const std::string name = "block" + std::to_string(i + 1);
    Block<Scalar> block{Conv1d<Scalar>(in, filters[static_cast<std::size_t>(i)], config.kernel_size, name + ".conv"),
                        BatchNorm<Scalar>(filters[static_cast<std::size_t>(i)], name + ".norm"), {}, {}};
    block.conv.init(init_rng);
    blocks_.push_back(std::move(block));
    in = filters[static_cast<std::size_t>(i)];
  }
  dense_ = Dense<Scalar>(in, kNumStages, "dense");
  dense_.init(init_rng);
}

template <typename Scalar>
Matrix<Scalar> ConvNet<Scalar>::forward(const SequenceBatch<Scalar>& batch, Mode mode) {
  if (batch.batch < 1 || batch.length != config_.input_length || batch.channels() != config_.input_channels ||
      batch.data.rows() != batch.batch * batch.length) {
    std::ostringstream msg;
    msg << "bad input shape: got " << batch.batch << " x " << batch.length << " x " << batch.channels()
        << ", expected N x " << config_.input_length << " x " << config_.input_channels;
    throw data_error(msg.str());
  }
  SequenceBatch<Scalar> x = batch;
  for (auto& block : blocks_) {
    x = block.conv.forward(x);
    x = block.norm.forward(x, mode);
    x = block.relu.forward(x);
    x = block.pool.forward(x);
  }
  Matrix<Scalar> h = global_pool_.forward(x);
  h = dropout_.forward(h, mode, dropout_rng_);
  return softmax_rows<Scalar>(dense_.forward(h));
}

template <typename Scalar>
double weighted_cross_entropy(const Matrix<Scalar>& probs, std::span<const int> labels,
                              const ClassWeights& weights) {
  double loss = 0.0;
  for (Index b = 0; b < probs.rows(); ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    loss -= weights[static_cast<std::size_t>(y)] * std::log(probability_floor(static_cast<double>(probs(b, y))));
  }
  return loss / static_cast<double>(probs.rows());
}

template <typename Scalar>
double ConvNet<Scalar>::backward_from_probs(const Matrix<Scalar>& probs, std::span<const int> labels,
                                            const ClassWeights& weights) {
  const Index n = probs.rows();
  if (static_cast<Index>(labels.size()) != n) throw data_error("label count does not match batch");
  Matrix<Scalar> dz = probs;
  for (Index b = 0; b < n; ++b) {
    const int y = labels[static_cast<std::size_t>(b)];
    if (y < 0 || y >= kNumStages) throw data_error("label out of range");
    dz(b, y) -= Scalar(1);
    dz.row(b) *= static_cast<Scalar>(weights[static_cast<std::size_t>(y)] / static_cast<double>(n));
  }
  Matrix<Scalar> dh = dense_.backward(dz);
  dh = dropout_.backward(dh);
  SequenceBatch<Scalar> dx = global_pool_.backward(dh);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    dx = it->pool.backward(dx);
    dx = it->relu.backward(dx);
    dx = it->norm.backward(dx);
    dx = it->conv.backward(dx);
  }
  return weighted_cross_entropy<Scalar>(probs, labels, weights);
}

template <typename Scalar>
std::vector<Parameter<Scalar>*> ConvNet<Scalar>::parameters() {
  std::vector<Parameter<Scalar>*> out;
  for (auto& b : blocks_) {
    out.push_back(&b.conv.weight());
    out.push_back(&b.conv.bias());
    out.push_back(&b.norm.scale());
    out.push_back(&b.norm.shift());
  }
  out.push_back(&dense_.weight());
  out.push_back(&dense_.bias());
  return out;
}

template <typename Scalar>
std::vector<const Parameter<Scalar>*> ConvNet<Scalar>::parameters() const {
  auto mutable_params = const_cast<ConvNet*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

template <typename Scalar>
void ConvNet<Scalar>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <typename Scalar>
typename ConvNet<Scalar>::Grads ConvNet<Scalar>::gradients() const {
  Grads out;
  for (const auto* p : parameters()) out.push_back(p->grad);
  return out;
}

template <typename Scalar>
void ConvNet<Scalar>::freeze_running_stats(bool frozen) {
  for (auto& b : blocks_) b.norm.freeze_running_stats(frozen);
}

template <typename Scalar>
void ConvNet<Scalar>::fix_batch_stats(bool fixed) {
  for (auto& b : blocks_) b.norm.fix_batch_stats(fixed);
}

template <typename Scalar>
void ConvNet<Scalar>::release_caches() {
  for (auto& b : blocks_) {
    b.conv.release_cache();
    b.norm.release_cache();
    b.relu.release_cache();
  }
}

template <typename Scalar>
typename ConvNet<Scalar>::State ConvNet<Scalar>::state() const {
  State s;
  for (const auto* p : parameters()) s.tensors.push_back(p->value);
  for (const auto& b : blocks_) {
    s.tensors.push_back(b.norm.running_mean());
    s.tensors.push_back(b.norm.running_var());
  }
  return s;
}

template <typename Scalar>
void ConvNet<Scalar>::load_state(const State& s) {
  auto params = parameters();
  if (s.tensors.size() != params.size() + 2 * blocks_.size()) {
    throw data_error("network state does not match architecture");
  }
  std::size_t k = 0;
  for (auto* p : params) {
    const auto& t = s.tensors[k++];
    if (t.rows() != p->value.rows() || t.cols() != p->value.cols()) {
      throw data_error("network state shape mismatch at " + p->name);
    }
    p->value = t;
  }
  for (auto& b : blocks_) {
    const auto& mean = s.tensors[k++];
    const auto& var = s.tensors[k++];
    if (mean.size() != b.norm.running_mean().size() || var.size() != b.norm.running_var().size()) {
      throw data_error("network state shape mismatch in running statistics");
    }
    b.norm.running_mean() = Eigen::Map<const RowVector<Scalar>>(mean.data(), mean.size());
    b.norm.running_var() = Eigen::Map<const RowVector<Scalar>>(var.data(), var.size());
  }
}

template <typename Scalar>
SequenceBatch<Scalar> stack_batch(std::span<const EpochTensor> epochs, std::span<const std::size_t> indices) {
  std::vector<std::size_t> all;
  if (indices.empty()) {
    all.resize(epochs.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    indices = all;
  }
  SequenceBatch<Scalar> batch;
  batch.batch = static_cast<Index>(indices.size());
  batch.length = indices.empty() ? 0 : epochs[indices[0]].values.rows();
  const Index channels = indices.empty() ? kNumInputChannels : epochs[indices[0]].values.cols();
  batch.data.resize(batch.batch * batch.length, channels);
  for (Index b = 0; b < batch.batch; ++b) {
    const auto& v = epochs[indices[static_cast<std::size_t>(b)]].values;
    if (v.rows() != batch.length) throw data_error("bad input shape: ragged epoch lengths in batch");
    batch.data.block(b * batch.length, 0, batch.length, channels) = v.template cast<Scalar>();
  }
  return batch;
}

template <typename Scalar>
BackwardResult<Scalar> backward(ConvNet<Scalar>& net, const SequenceBatch<Scalar>& batch,
                                std::span<const int> labels, const ClassWeights& weights, long long batch_id) {
  for (double w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) throw config_error("class weights must be positive and finite");
  }
  net.zero_grad();
  const Matrix<Scalar> probs = net.forward(batch, Mode::Train);
  BackwardResult<Scalar> result;
  result.loss = net.backward_from_probs(probs, labels, weights);
  if (!std::isfinite(result.loss)) {
    throw numerical_error("numerical failure: non-finite loss in batch " + std::to_string(batch_id));
  }
  result.grads = net.gradients();
  return result;
}

template class ConvNet<float>;
template class ConvNet<double>;

#define SLEEPNET_INSTANTIATE(S)                                                                          \
  template double weighted_cross_entropy<S>(const Matrix<S>&, std::span<const int>, const ClassWeights&); \
  template SequenceBatch<S> stack_batch<S>(std::span<const EpochTensor>, std::span<const std::size_t>);   \
  template BackwardResult<S> backward<S>(ConvNet<S>&, const SequenceBatch<S>&, std::span<const int>,      \
                                         const ClassWeights&, long long);

SLEEPNET_INSTANTIATE(float)
SLEEPNET_INSTANTIATE(double)

#undef SLEEPNET_INSTANTIATE

}  // namespace sleepnet::nn
