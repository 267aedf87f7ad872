#include <cmath>

#include <gtest/gtest.h>

#include "layer_checks.hpp"
#include "oracles.hpp"
#include "sleepnet/nn/checkpoint.hpp"
#include "sleepnet/nn/gradient_check.hpp"
#include "sleepnet/nn/optim.hpp"

using namespace sleepnet;
using namespace sleepnet::nn;
using layer_checks::random_matrix;

namespace {

ModelConfig small_config(int blocks = 2, int kernel = 5, int filters = 8, int length = 64) {
  ModelConfig c;
  c.n_blocks = blocks;
  c.kernel_size = kernel;
  c.initial_filters = filters;
  c.input_length = length;
  c.dropout_rate = 0.0;
  return c;
}

SequenceBatch<float> random_batch(int batch, int length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {random_matrix(batch * length, 5, rng).cast<float>(), batch, length};
}

}  // namespace

TEST(Architecture, SixteenFilterSevenBlockDoubling) {
  ModelConfig c;
  c.n_blocks = 7;
  c.initial_filters = 16;
  EXPECT_EQ(block_filters(c), (std::vector<int>{16, 32, 64, 128, 256, 512, 1024}));
  c.initial_filters = 64;
  EXPECT_EQ(block_filters(c), (std::vector<int>{64, 128, 256, 512, 1024, 1024, 1024}));
  c.n_blocks = 1;
  EXPECT_EQ(block_lengths(c), std::vector<int>{1875});
}

TEST(Architecture, RealizedShapesFollowConfig) {
  const ModelConfig c = small_config(3, 6, 8, 3750);
  ConvNet<float> net(c, 1);
  ASSERT_EQ(net.blocks().size(), 3u);
  EXPECT_EQ(net.blocks()[0].conv.weight().value.rows(), 6 * 5);
  EXPECT_EQ(net.blocks()[2].conv.weight().value.cols(), 32);
  EXPECT_EQ(net.dense().weight().value.rows(), 32);
  EXPECT_EQ(net.dense().weight().value.cols(), 5);
  EXPECT_EQ(block_lengths(c), (std::vector<int>{1875, 937, 468}));
}

TEST(Architecture, RejectsOutOfRange) {
  ModelConfig c;
  c.n_blocks = 11;
  try {
    ConvNet<float> net(c, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("config out of range"), std::string::npos);
  }
  c.n_blocks = 2;
  c.initial_filters = 12;
  EXPECT_THROW(validate(c), Error);
}

TEST(Forward, RowsAreDistributions) {
  ConvNet<float> net(small_config(), 3);
  for (Mode mode : {Mode::Train, Mode::Infer}) {
    const auto p = net.forward(random_batch(6, 64, 4), mode);
    ASSERT_EQ(p.rows(), 6);
    ASSERT_EQ(p.cols(), 5);
    EXPECT_GE(p.minCoeff(), 0.0f);
    for (Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0f, 1e-6f);
  }
}

TEST(Forward, ZeroDenseGivesUniform) {
  ConvNet<float> net(small_config(), 3);
  net.dense().weight().value.setZero();
  const auto p = net.forward(random_batch(3, 64, 5), Mode::Infer);
  EXPECT_LT((p.array() - 0.2f).abs().maxCoeff(), 1e-7f);
}

TEST(Forward, BadShapeAndPureInference) {
  ConvNet<float> net(small_config(), 3);
  try {
    net.forward(random_batch(2, 60, 1), Mode::Infer);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("bad input shape"), std::string::npos);
  }
  const auto b = random_batch(2, 64, 1);
  EXPECT_EQ(net.forward(b, Mode::Infer), net.forward(b, Mode::Infer));
}

TEST(Conv, IdentityKernelReproducesInput) {
  Conv1d<double> conv(3, 3, 3, "c");
  for (Index c = 0; c < 3; ++c) conv.weight().value(1 * 3 + c, c) = 1.0;  // tap j=1 is the center for k=3
  std::mt19937_64 rng(2);
  SequenceBatch<double> x{random_matrix(2 * 20, 3, rng), 2, 20};
  EXPECT_EQ(conv.forward(x).data, x.data);
}

TEST(Conv, MatchesDirectSamePaddingSum) {
  for (int k : {4, 7}) {
    std::mt19937_64 rng(k);
    Conv1d<double> conv(2, 3, k, "c");
    conv.init(rng);
    conv.bias().value = random_matrix(1, 3, rng);
    const Index T = 13;
    SequenceBatch<double> x{random_matrix(2 * T, 2, rng), 2, T};
    const auto y = conv.forward(x);
    const int left = (k - 1) / 2;
    for (Index b = 0; b < 2; ++b) {
      for (Index t = 0; t < T; ++t) {
        for (Index o = 0; o < 3; ++o) {
          double acc = conv.bias().value(0, o);
          for (int j = 0; j < k; ++j) {
            const Index s = t + j - left;
            if (s < 0 || s >= T) continue;
            for (Index c = 0; c < 2; ++c) acc += conv.weight().value(j * 2 + c, o) * x.data(b * T + s, c);
          }
          EXPECT_NEAR(y.data(b * T + t, o), acc, 1e-12);
        }
      }
    }
  }
}

TEST(BatchNorm, TrainModeStandardizes) {
  BatchNorm<float> bn(4, "bn");
  std::mt19937_64 rng(9);
  Matrix<float> x = (3.0 * random_matrix(200, 4, rng)).cast<float>();
  x.col(1).array() += 7.0f;
  const auto y = bn.forward(SequenceBatch<float>{x, 4, 50}, Mode::Train);
  for (Index c = 0; c < 4; ++c) {
    const double mean = y.data.col(c).cast<double>().mean();
    const double var = (y.data.col(c).cast<double>().array() - mean).square().mean();
    EXPECT_LT(std::abs(mean), 1e-5);
    EXPECT_NEAR(var, 1.0, 1e-4);
  }
  EXPECT_GT(bn.running_mean()[1], 0.5f);
}

TEST(Softmax, StableForLargeLogits) {
  Matrix<float> logits(2, 5);
  logits << 80, -80, 0, 79, 3, -80, -80, -80, -80, -80;
  const auto p = softmax_rows(logits);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p.row(0).sum(), 1.0f, 1e-6f);
  EXPECT_NEAR(p(1, 2), 0.2f, 1e-6f);
}

TEST(Loss, AnalyticValues) {
  const std::vector<int> labels = {0, 3};
  const ClassWeights ones = {1, 1, 1, 1, 1};
  Matrix<double> perfect = Matrix<double>::Zero(2, 5);
  perfect(0, 0) = 1.0;
  perfect(1, 3) = 1.0;
  EXPECT_EQ(weighted_cross_entropy<double>(perfect, labels, ones), 0.0);
  const Matrix<double> uniform = Matrix<double>::Constant(2, 5, 0.2);
  EXPECT_NEAR(weighted_cross_entropy<double>(uniform, labels, ones), std::log(5.0), 1e-12);
}

TEST(Loss, DoublingWeightsDoublesLossAndGradients) {
  ConvNet<double> net(small_config(), 4);
  std::mt19937_64 rng(4);
  SequenceBatch<double> b{random_matrix(3 * 64, 5, rng), 3, 64};
  const std::vector<int> labels = {1, 2, 4};
  const ClassWeights w = {0.5, 5.6, 0.56, 2.2, 1.6};
  ClassWeights w2;
  for (int c = 0; c < 5; ++c) w2[static_cast<std::size_t>(c)] = 2.0 * w[static_cast<std::size_t>(c)];
  net.freeze_running_stats(true);
  const auto a = backward(net, b, labels, w);
  const auto d = backward(net, b, labels, w2);
  EXPECT_NEAR(d.loss, 2.0 * a.loss, 1e-12);
  for (std::size_t i = 0; i < a.grads.size(); ++i) {
    EXPECT_LT((d.grads[i] - 2.0 * a.grads[i]).cwiseAbs().maxCoeff(), 1e-10 * (1.0 + a.grads[i].cwiseAbs().maxCoeff()));
  }
}

TEST(Loss, NonFiniteInputReportsBatch) {
  ConvNet<float> net(small_config(), 4);
  auto b = random_batch(2, 64, 3);
  b.data(5, 2) = std::numeric_limits<float>::quiet_NaN();
  try {
    backward(net, b, std::vector<int>{0, 1}, ClassWeights{1, 1, 1, 1, 1}, 17);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numerical);
    EXPECT_NE(std::string(e.what()).find("batch 17"), std::string::npos);
  }
}

TEST(GradientCheck, EveryLayerType) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const auto& r : layer_checks::check_all_layers(seed)) {
      EXPECT_LT(r.max_relative_error, 1e-4) << r.layer << " seed " << seed;
    }
  }
}

TEST(GradientCheck, OneBlockKernelThree) {
  layer_checks::CompositeCheck c;
  c.n_blocks = 1;
  c.kernel = 3;
  EXPECT_LT(layer_checks::check_composite(1, c), 1e-4);
}

TEST(GradientCheck, TwoBlockComposite) {
  for (std::uint64_t seed : {1u, 2u, 3u}) EXPECT_LT(layer_checks::check_composite(seed), 1e-4) << seed;
}

// Only the dense layer moves; everything before it is a fixed feature map.
// Step 1e-4: at 1e-3 the softmax's third-order term alone reaches ~1e-5 on
// small gradient entries.
TEST(GradientCheck, DensePath) {
  layer_checks::CompositeCheck c;
  c.n_blocks = 1;
  c.kernel = 3;
  c.only = {"dense"};
  c.epsilon = 1e-4;
  for (std::uint64_t seed : {1u, 2u, 3u, 5u}) EXPECT_LT(layer_checks::check_composite(seed, c), 1e-6) << seed;
}

// Without the fixed statistics, gradients flow through the batch mean and
// variance as in training. A small step keeps the check clear of curvature.
TEST(GradientCheck, TrainModeBatchStatistics) {
  using namespace sleepnet::nn;
  ConvNet<double> net(small_config(2, 5), 4);
  std::mt19937_64 rng(4);
  SequenceBatch<double> b{random_matrix(4 * 64, 5, rng), 4, 64};
  GradCheckOptions opts;
  opts.epsilon = 1e-5;
  opts.samples_per_tensor = 24;
  const auto r = gradient_check(net, b, std::vector<int>{0, 1, 3, 4}, ClassWeights{0.5, 5.6, 0.56, 2.2, 1.6}, opts);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(GradientCheck, CorruptedConvGradientIsCaught) {
  ConvNet<double> net(small_config(1, 3), 6);
  std::mt19937_64 rng(6);
  SequenceBatch<double> b{random_matrix(4 * 64, 5, rng), 4, 64};
  GradCheckOptions opts;
  opts.only = {"block1.conv"};
  const auto r = gradient_check(net, b, std::vector<int>{0, 1, 2, 3}, ClassWeights{1, 1, 1, 1, 1}, opts,
                                [](ConvNet<double>::Grads& g) { g[0] = -g[0]; });
  EXPECT_GT(r.max_relative_error, 0.1);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ConvNet<float> net(small_config(), 1);
  const auto before = net.state();
  auto state = make_adam_state(net);
  ConvNet<float>::Grads zeros;
  for (const auto* p : net.parameters()) zeros.push_back(Matrix<float>::Zero(p->value.rows(), p->value.cols()));
  adam_step(net, zeros, state, 1e-3);
  const auto after = net.state();
  for (std::size_t i = 0; i < before.tensors.size(); ++i) EXPECT_EQ(before.tensors[i], after.tensors[i]);
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, FirstStepMagnitude) {
  Matrix<double> theta(1, 3);
  theta << 0.5, -1.0, 2.0;
  Matrix<double> g(1, 3);
  g << 0.3, -2e-4, 50.0;
  const Matrix<double> start = theta;
  std::vector<Matrix<double>*> params{&theta};
  auto state = make_adam_state<double>(params);
  adam_update<double>(params, std::vector<Matrix<double>>{g}, state, 0.01);
  for (Index i = 0; i < 3; ++i) {
    const double step = std::abs(theta(0, i) - start(0, i));
    EXPECT_NEAR(step, 0.01 * std::abs(g(0, i)) / (std::abs(g(0, i)) + 1e-8), 1e-15);
    EXPECT_NEAR(step, 0.01, 1e-6);
  }
}

TEST(Adam, QuadraticConverges) {
  Matrix<double> theta(1, 2);
  theta << 1.0, 1.0;
  std::vector<Matrix<double>*> params{&theta};
  auto state = make_adam_state<double>(params);
  for (int k = 0; k < 200; ++k) {
    adam_update<double>(params, std::vector<Matrix<double>>{2.0 * theta}, state, 0.1);
  }
  EXPECT_LT(theta.norm(), 1e-2);
}

TEST(Determinism, SameSeedSameParametersAfterSteps) {
  auto run = [] {
    ConvNet<float> net(small_config(), 42);
    auto state = make_adam_state(net);
    for (int k = 0; k < 3; ++k) {
      auto r = backward(net, random_batch(4, 64, 100 + static_cast<std::uint64_t>(k)), std::vector<int>{0, 1, 2, 3},
                        ClassWeights{1, 1, 1, 1, 1});
      adam_step(net, r.grads, state, 1e-3);
    }
    return net.state();
  };
  const auto a = run();
  const auto b = run();
  for (std::size_t i = 0; i < a.tensors.size(); ++i) EXPECT_EQ(a.tensors[i], b.tensors[i]);
}

TEST(Dropout, InferIsIdentityTrainRescales) {
  Dropout<double> d(0.5);
  std::mt19937_64 rng(1);
  const Matrix<double> x = Matrix<double>::Ones(200, 50);
  EXPECT_EQ(d.forward(x, Mode::Infer, rng), x);
  const auto y = d.forward(x, Mode::Train, rng);
  EXPECT_NEAR(y.mean(), 1.0, 0.03);
  EXPECT_TRUE(((y.array() == 0.0) || (y.array() == 2.0)).all());
}

TEST(Pooling, OddLengthDropsTrailingSample) {
  AvgPool2<double> pool;
  Matrix<double> x(7, 1);
  x << 1, 3, 5, 7, 9, 11, 100;
  const auto y = pool.forward(SequenceBatch<double>{x, 1, 7});
  ASSERT_EQ(y.length, 3);
  EXPECT_EQ(y.data(0, 0), 2.0);
  EXPECT_EQ(y.data(2, 0), 10.0);
}

TEST(Checkpoint, BitExactRoundTrip) {
  const auto dir = oracle::scratch_dir("checkpoint");
  ConvNet<float> net(small_config(2, 6, 8, 3750), 77);
  auto r = backward(net, random_batch(2, 3750, 1), std::vector<int>{0, 4}, ClassWeights{1, 1, 1, 1, 1});
  auto state = make_adam_state(net);
  adam_step(net, r.grads, state, 1e-3);
  save_checkpoint(net, state.step, dir / "a.ckpt");
  const auto ck = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(ck.step, 1);
  EXPECT_EQ(ck.net.config(), net.config());
  EXPECT_EQ(ck.net.seed(), 77u);
  const auto a = net.state();
  const auto b = ck.net.state();
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (std::size_t i = 0; i < a.tensors.size(); ++i) EXPECT_EQ(a.tensors[i], b.tensors[i]);
  save_checkpoint(ck.net, ck.step, dir / "b.ckpt");
  EXPECT_EQ(oracle::slurp(dir / "a.ckpt"), oracle::slurp(dir / "b.ckpt"));
}

TEST(Checkpoint, TruncatedFileNamesPath) {
  const auto dir = oracle::scratch_dir("checkpoint_bad");
  ConvNet<float> net(small_config(), 1);
  save_checkpoint(net, 0, dir / "x.ckpt");
  auto bytes = oracle::slurp(dir / "x.ckpt");
  bytes.resize(bytes.size() - 10);
  std::FILE* f = std::fopen((dir / "x.ckpt").c_str(), "wb");
  std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  try {
    load_checkpoint(dir / "x.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("x.ckpt"), std::string::npos);
  }
}
