#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace sleepnet::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

enum class Mode { Train, Infer };

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// A batch of multichannel sequences stacked along rows: sample b occupies
/// rows [b * length, (b + 1) * length), one column per channel.
template <typename Scalar>
struct SequenceBatch {
  Matrix<Scalar> data;
  Index batch = 0;
  Index length = 0;

  Index channels() const { return data.cols(); }
};

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform,
/// unlike std::uniform_real_distribution.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Box-Muller normal deviate built on uniform01.
inline double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Stride-1 convolution with "same" padding: left = floor((k-1)/2),
/// right = ceil((k-1)/2). Implemented as im2col + GEMM.
template <typename Scalar>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(Index in_channels, Index out_channels, Index kernel, const std::string& name)
      : in_(in_channels), out_(out_channels), kernel_(kernel) {
    weight_.name = name + ".weight";
    weight_.value = Matrix<Scalar>::Zero(kernel * in_channels, out_channels);
    bias_.name = name + ".bias";
    bias_.value = Matrix<Scalar>::Zero(1, out_channels);
    weight_.zero_grad();
    bias_.zero_grad();
  }

  void init(std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(kernel_ * in_));
    for (Index i = 0; i < weight_.value.size(); ++i) {
      weight_.value.data()[i] = static_cast<Scalar>((2.0 * uniform01(rng) - 1.0) * bound);
    }
    bias_.value.setZero();
  }

  SequenceBatch<Scalar> forward(const SequenceBatch<Scalar>& x) {
    const Index length = x.length;
    const Index left = (kernel_ - 1) / 2;
    columns_.setZero(x.data.rows(), kernel_ * in_);
    for (Index j = 0; j < kernel_; ++j) {
      const Index offset = j - left;
      const Index t0 = std::max<Index>(0, -offset);
      const Index t1 = std::min<Index>(length, length - offset);
      if (t1 <= t0) continue;
      for (Index c = 0; c < in_; ++c) {
        for (Index b = 0; b < x.batch; ++b) {
          columns_.col(j * in_ + c).segment(b * length + t0, t1 - t0) =
              x.data.col(c).segment(b * length + t0 + offset, t1 - t0);
        }
      }
    }
    cached_batch_ = x.batch;
    cached_length_ = length;
    SequenceBatch<Scalar> y;
    y.batch = x.batch;
    y.length = length;
    y.data.noalias() = columns_ * weight_.value;
    y.data.rowwise() += bias_.value.row(0);
    return y;
  }

  SequenceBatch<Scalar> backward(const SequenceBatch<Scalar>& dy) {
    weight_.grad.noalias() += columns_.transpose() * dy.data;
    bias_.grad.row(0) += dy.data.colwise().sum();
    const Matrix<Scalar> dcols = dy.data * weight_.value.transpose();

    const Index length = cached_length_;
    const Index left = (kernel_ - 1) / 2;
    SequenceBatch<Scalar> dx;
    dx.batch = cached_batch_;
    dx.length = length;
    dx.data = Matrix<Scalar>::Zero(dy.data.rows(), in_);
    for (Index j = 0; j < kernel_; ++j) {
      const Index offset = j - left;
      const Index t0 = std::max<Index>(0, -offset);
      const Index t1 = std::min<Index>(length, length - offset);
      if (t1 <= t0) continue;
      for (Index c = 0; c < in_; ++c) {
        for (Index b = 0; b < dx.batch; ++b) {
          dx.data.col(c).segment(b * length + t0 + offset, t1 - t0) +=
              dcols.col(j * in_ + c).segment(b * length + t0, t1 - t0);
        }
      }
    }
    return dx;
  }

  /// Weight row for tap j and input channel c is j * in_channels + c.
  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }
  const Parameter<Scalar>& weight() const { return weight_; }
  const Parameter<Scalar>& bias() const { return bias_; }
  Index in_channels() const { return in_; }
  Index out_channels() const { return out_; }
  Index kernel() const { return kernel_; }

  void release_cache() { columns_.resize(0, 0); }

 private:
  Index in_ = 0;
  Index out_ = 0;
  Index kernel_ = 0;
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
  Matrix<Scalar> columns_;
  Index cached_batch_ = 0;
  Index cached_length_ = 0;
};

/// Per-channel normalization over all (sample, time) rows of the batch.
template <typename Scalar>
class BatchNorm {
 public:
  static constexpr double kEpsilon = 1e-5;

  BatchNorm() = default;
  BatchNorm(Index channels, const std::string& name, double momentum = 0.9) : momentum_(momentum) {
    scale_.name = name + ".scale";
    scale_.value = Matrix<Scalar>::Ones(1, channels);
    shift_.name = name + ".shift";
    shift_.value = Matrix<Scalar>::Zero(1, channels);
    scale_.zero_grad();
    shift_.zero_grad();
    running_mean_ = RowVector<Scalar>::Zero(channels);
    running_var_ = RowVector<Scalar>::Ones(channels);
  }

  SequenceBatch<Scalar> forward(const SequenceBatch<Scalar>& x, Mode mode) {
    const Index rows = x.data.rows();
    const Index channels = x.data.cols();
    SequenceBatch<Scalar> y{Matrix<Scalar>(rows, channels), x.batch, x.length};
    if (mode == Mode::Infer) {
      for (Index c = 0; c < channels; ++c) {
        const Scalar inv = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(running_var_[c]) + kEpsilon));
        y.data.col(c) = ((x.data.col(c).array() - running_mean_[c]) * (inv * scale_.value(0, c)) +
                         shift_.value(0, c))
                            .matrix();
      }
      return y;
    }

    if (fixed_stats_ && mean_.size() == channels) {
      normalized_.resize(rows, channels);
      for (Index c = 0; c < channels; ++c) {
        normalized_.col(c) = ((x.data.col(c).template cast<double>().array() - mean_[c]) * inv_std_[c])
                                 .template cast<Scalar>()
                                 .matrix();
        y.data.col(c) = (normalized_.col(c).array() * scale_.value(0, c) + shift_.value(0, c)).matrix();
      }
      return y;
    }

    normalized_.resize(rows, channels);
    inv_std_.resize(channels);
    mean_.resize(channels);
    for (Index c = 0; c < channels; ++c) {
      const double mean = x.data.col(c).template cast<double>().sum() / static_cast<double>(rows);
      const double var =
          (x.data.col(c).template cast<double>().array() - mean).square().sum() / static_cast<double>(rows);
      const double inv = 1.0 / std::sqrt(var + kEpsilon);
      inv_std_[c] = inv;
      mean_[c] = mean;
      normalized_.col(c) = ((x.data.col(c).template cast<double>().array() - mean) * inv)
                               .template cast<Scalar>()
                               .matrix();
      y.data.col(c) = (normalized_.col(c).array() * scale_.value(0, c) + shift_.value(0, c)).matrix();
      if (update_running_) {
        const double unbiased = rows > 1 ? var * static_cast<double>(rows) / static_cast<double>(rows - 1) : var;
        running_mean_[c] = static_cast<Scalar>(momentum_ * running_mean_[c] + (1.0 - momentum_) * mean);
        running_var_[c] = static_cast<Scalar>(momentum_ * running_var_[c] + (1.0 - momentum_) * unbiased);
      }
    }
    return y;
  }

  SequenceBatch<Scalar> backward(const SequenceBatch<Scalar>& dy) {
    const Index rows = dy.data.rows();
    const Index channels = dy.data.cols();
    SequenceBatch<Scalar> dx{Matrix<Scalar>(rows, channels), dy.batch, dy.length};
    const double n = static_cast<double>(rows);
    for (Index c = 0; c < channels; ++c) {
      const auto g = dy.data.col(c).template cast<double>().array();
      const auto xhat = normalized_.col(c).template cast<double>().array();
      const double sum_g = g.sum();
      const double sum_gx = (g * xhat).sum();
      scale_.grad(0, c) += static_cast<Scalar>(sum_gx);
      shift_.grad(0, c) += static_cast<Scalar>(sum_g);
      const double k = static_cast<double>(scale_.value(0, c)) * inv_std_[c] / n;
      if (fixed_stats_) {
        dx.data.col(c) = (k * n * g).template cast<Scalar>().matrix();
      } else {
        dx.data.col(c) = (k * (n * g - sum_g - xhat * sum_gx)).template cast<Scalar>().matrix();
      }
    }
    return dx;
  }

  Parameter<Scalar>& scale() { return scale_; }
  Parameter<Scalar>& shift() { return shift_; }
  const Parameter<Scalar>& scale() const { return scale_; }
  const Parameter<Scalar>& shift() const { return shift_; }
  RowVector<Scalar>& running_mean() { return running_mean_; }
  RowVector<Scalar>& running_var() { return running_var_; }
  const RowVector<Scalar>& running_mean() const { return running_mean_; }
  const RowVector<Scalar>& running_var() const { return running_var_; }

  /// Train-mode forward passes update running statistics unless frozen.
  void freeze_running_stats(bool frozen) { update_running_ = !frozen; }
  /// While fixed, train-mode passes reuse the mean and variance of the last
  /// unfixed train-mode batch and treat them as constants in backward. Makes
  /// the block an affine map, which is what the composite gradient check needs.
  void fix_batch_stats(bool fixed) { fixed_stats_ = fixed; }
  void release_cache() { normalized_.resize(0, 0); }

 private:
  double momentum_ = 0.9;
  bool update_running_ = true;
  bool fixed_stats_ = false;
  Eigen::VectorXd mean_;
  Parameter<Scalar> scale_;
  Parameter<Scalar> shift_;
  RowVector<Scalar> running_mean_;
  RowVector<Scalar> running_var_;
  Matrix<Scalar> normalized_;
  Eigen::VectorXd inv_std_;
};

template <typename Scalar>
class Relu {
 public:
  SequenceBatch<Scalar> forward(const SequenceBatch<Scalar>& x) {
    active_ = (x.data.array() > Scalar(0)).template cast<Scalar>();
    return {x.data.cwiseMax(Scalar(0)), x.batch, x.length};
  }
  SequenceBatch<Scalar> backward(const SequenceBatch<Scalar>& dy) {
    return {(dy.data.array() * active_.array()).matrix(), dy.batch, dy.length};
  }
  void release_cache() { active_.resize(0, 0); }

 private:
  Matrix<Scalar> active_;
};

/// Window 2, stride 2; a trailing odd sample is dropped.
template <typename Scalar>
class AvgPool2 {
 public:
  SequenceBatch<Scalar> forward(const SequenceBatch<Scalar>& x) {
    using Strided = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>, 0, Eigen::InnerStride<2>>;
    in_length_ = x.length;
    const Index out_len = x.length / 2;
    SequenceBatch<Scalar> y{Matrix<Scalar>(x.batch * out_len, x.data.cols()), x.batch, out_len};
    if (out_len == 0) return y;
    for (Index c = 0; c < x.data.cols(); ++c) {
      for (Index b = 0; b < x.batch; ++b) {
        const Scalar* base = x.data.col(c).data() + b * x.length;
        y.data.col(c).segment(b * out_len, out_len) =
            Scalar(0.5) * (Strided(base, out_len) + Strided(base + 1, out_len));
      }
    }
    return y;
  }

  SequenceBatch<Scalar> backward(const SequenceBatch<Scalar>& dy) {
    using Strided = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>, 0, Eigen::InnerStride<2>>;
    SequenceBatch<Scalar> dx{Matrix<Scalar>::Zero(dy.batch * in_length_, dy.data.cols()), dy.batch,
                             in_length_};
    const Index out_len = dy.length;
    if (out_len == 0) return dx;
    for (Index c = 0; c < dy.data.cols(); ++c) {
      for (Index b = 0; b < dy.batch; ++b) {
        Scalar* base = dx.data.col(c).data() + b * in_length_;
        const auto g = Scalar(0.5) * dy.data.col(c).segment(b * out_len, out_len);
        Strided(base, out_len) = g;
        Strided(base + 1, out_len) = g;
      }
    }
    return dx;
  }

 private:
  Index in_length_ = 0;
};

/// Mean over time per sample and channel: (batch*length x C) -> (batch x C).
template <typename Scalar>
class GlobalAvgPool {
 public:
  Matrix<Scalar> forward(const SequenceBatch<Scalar>& x) {
    length_ = x.length;
    Matrix<Scalar> y(x.batch, x.data.cols());
    for (Index b = 0; b < x.batch; ++b) {
      for (Index c = 0; c < x.data.cols(); ++c) {
        y(b, c) = static_cast<Scalar>(
            x.data.col(c).segment(b * x.length, x.length).template cast<double>().sum() /
            static_cast<double>(x.length));
      }
    }
    return y;
  }

  SequenceBatch<Scalar> backward(const Matrix<Scalar>& dy) {
    SequenceBatch<Scalar> dx{Matrix<Scalar>(dy.rows() * length_, dy.cols()), dy.rows(), length_};
    const Scalar inv = Scalar(1) / static_cast<Scalar>(length_);
    for (Index b = 0; b < dy.rows(); ++b) {
      for (Index c = 0; c < dy.cols(); ++c) {
        dx.data.col(c).segment(b * length_, length_).setConstant(dy(b, c) * inv);
      }
    }
    return dx;
  }

 private:
  Index length_ = 0;
};

/// Inverted dropout: kept units are scaled by 1 / (1 - rate) during training.
template <typename Scalar>
class Dropout {
 public:
  explicit Dropout(double rate = 0.5) : rate_(rate) {}

  Matrix<Scalar> forward(const Matrix<Scalar>& x, Mode mode, std::mt19937_64& rng) {
    if (mode == Mode::Infer || rate_ <= 0.0) {
      mask_.setOnes(x.rows(), x.cols());
      return x;
    }
    const Scalar keep = static_cast<Scalar>(1.0 / (1.0 - rate_));
    mask_.resize(x.rows(), x.cols());
    for (Index i = 0; i < mask_.size(); ++i) {
      mask_.data()[i] = uniform01(rng) < rate_ ? Scalar(0) : keep;
    }
    return x.cwiseProduct(mask_);
  }

  Matrix<Scalar> backward(const Matrix<Scalar>& dy) const { return dy.cwiseProduct(mask_); }

  double rate() const { return rate_; }

 private:
  double rate_ = 0.5;
  Matrix<Scalar> mask_;
};

template <typename Scalar>
class Dense {
 public:
  Dense() = default;
  Dense(Index in, Index out, const std::string& name) {
    weight_.name = name + ".weight";
    weight_.value = Matrix<Scalar>::Zero(in, out);
    bias_.name = name + ".bias";
    bias_.value = Matrix<Scalar>::Zero(1, out);
    weight_.zero_grad();
    bias_.zero_grad();
  }

  void init(std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(weight_.value.rows()));
    for (Index i = 0; i < weight_.value.size(); ++i) {
      weight_.value.data()[i] = static_cast<Scalar>((2.0 * uniform01(rng) - 1.0) * bound);
    }
    bias_.value.setZero();
  }

  Matrix<Scalar> forward(const Matrix<Scalar>& x) {
    input_ = x;
    Matrix<Scalar> y = x * weight_.value;
    y.rowwise() += bias_.value.row(0);
    return y;
  }

  Matrix<Scalar> backward(const Matrix<Scalar>& dy) {
    weight_.grad.noalias() += input_.transpose() * dy;
    bias_.grad.row(0) += dy.colwise().sum();
    return dy * weight_.value.transpose();
  }

  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }
  const Parameter<Scalar>& weight() const { return weight_; }
  const Parameter<Scalar>& bias() const { return bias_; }

 private:
  Parameter<Scalar> weight_;
  Parameter<Scalar> bias_;
  Matrix<Scalar> input_;
};

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits) {
  Matrix<Scalar> p(logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r) {
    const Scalar m = logits.row(r).maxCoeff();
    const auto e = (logits.row(r).array() - m).exp();
    p.row(r) = (e / e.sum()).matrix();
  }
  return p;
}

}  // namespace sleepnet::nn
