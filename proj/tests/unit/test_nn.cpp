#include <gtest/gtest.h>

#include <bit>
#include <cmath>

#include "aaf/error.hpp"
#include "aaf/gradcheck_suite.hpp"
#include "aaf/nn.hpp"

using namespace aaf;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

void randomize(const std::vector<NamedTensor>& params, Rng& rng, double scale = 0.5) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (double& v : t.mutable_data()) v = rng.uniform(-scale, scale);
  }
}

}  // namespace

TEST(LayerNorm, Examples) {
  auto p4 = LayerNormParams::identity(4);
  auto y = layer_norm(Tensor({4}, 5.0), p4);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
  auto z = layer_norm(Tensor({2}, {1.0, -1.0}), LayerNormParams::identity(2));
  EXPECT_NEAR(z.at(0), 1.0, 1e-6);
  EXPECT_NEAR(z.at(1), -1.0, 1e-6);
  EXPECT_DOUBLE_EQ(z.at(0), 1.0 / std::sqrt(1.0 + 1e-6));
}

TEST(LayerNorm, Gradcheck) {
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    Tensor x = random_tensor({3, 5}, rng);
    LayerNormParams p{random_tensor({5}, rng, 0.5, 1.5), random_tensor({5}, rng), 1e-6};
    Tensor w = random_tensor({3, 5}, rng);
    auto r = gradcheck([&] { return sum(layer_norm(x, p) * w); },
                       {{"x", x}, {"gamma", p.gamma}, {"beta", p.beta}});
    EXPECT_TRUE(r.passed) << r.failure;
  }
}

TEST(LayerNorm, DimensionMismatch) {
  EXPECT_THROW(layer_norm(Tensor({2, 3}), LayerNormParams::identity(4)), Error);
}

TEST(Softmax, Examples) {
  auto u = softmax(Tensor({3}, 0.0), 0);
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  auto big = softmax(Tensor({2}, {1000.0, 0.0}), 0);
  EXPECT_NEAR(big.at(0), 1.0, 1e-15);
  EXPECT_NEAR(big.at(1), 0.0, 1e-15);
  EXPECT_TRUE(std::isfinite(big.at(1)));
  Rng rng(5);
  Tensor x = random_tensor({4, 6}, rng, -5, 5);
  auto a = softmax(x, 1), b = softmax(x + 3.7, 1);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.at(i), b.at(i), 1e-12);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
      EXPECT_GT(a.at({r, c}), 0.0);
      s += a.at({r, c});
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, GradcheckBothAxesAndLogSoftmax) {
  Rng rng(6);
  Tensor x = random_tensor({3, 4, 2}, rng, -2, 2), w = random_tensor({3, 4, 2}, rng);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    auto r = gradcheck([&] { return sum(softmax(x, axis) * w); }, {{"x", x}});
    EXPECT_TRUE(r.passed) << "softmax axis " << axis << ": " << r.failure;
    auto r2 = gradcheck([&] { return sum(log_softmax(x, axis) * w); }, {{"x", x}});
    EXPECT_TRUE(r2.passed) << "log_softmax axis " << axis << ": " << r2.failure;
  }
}

TEST(Linear, ForwardFormula) {
  Linear l{Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), Tensor({3}, {0.5, -0.5, 1.0})};
  auto y = l.forward(Tensor({1, 2}, {1.0, -1.0}));
  EXPECT_EQ(y.at(0), 1 - 4 + 0.5);
  EXPECT_EQ(y.at(1), 2 - 5 - 0.5);
  EXPECT_EQ(y.at(2), 3 - 6 + 1.0);
}

TEST(Adapter, ZeroWeightsGiveZeroOutput) {
  Adapter a{"T", Tensor({4, 2}, 0.0), Tensor({2}, 0.0), Tensor({2, 4}, 0.0), Tensor({4}, 0.0)};
  Rng rng(1);
  auto y = adapter_forward(a, random_tensor({3, 4}, rng));
  EXPECT_EQ(y.shape(), (Shape{3, 4}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Adapter, FreshAdapterIsNoOp) {
  Rng rng(2);
  auto a = Adapter::fresh("T1", 16, 8, rng);
  EXPECT_EQ(a.bottleneck(), 8u);
  EXPECT_EQ(a.parameter_count(), 16u * 8 + 8 + 8 * 16 + 16);
  auto y = adapter_forward(a, random_tensor({5, 16}, rng));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(Adapter::fresh("T", 16, 0, rng), Error);
}

TEST(Adapter, NearLinearRegime) {
  Tensor down({4, 2}, 0.0);
  down.mutable_data()[0 * 2 + 0] = 1.0;
  down.mutable_data()[1 * 2 + 1] = 1.0;
  Adapter a{"T", down, Tensor({2}, 0.0), transpose(down).clone(), Tensor({4}, 0.0)};
  Tensor x({1, 4}, {1e-3, -2e-3, 5e-3, 7e-3});
  auto y = adapter_forward(a, x);
  EXPECT_DOUBLE_EQ(y.at(0), std::tanh(1e-3));
  EXPECT_DOUBLE_EQ(y.at(1), std::tanh(-2e-3));
  EXPECT_EQ(y.at(2), 0.0);
  EXPECT_EQ(y.at(3), 0.0);
  EXPECT_NEAR(y.at(0), 1e-3, 1e-9);
}

TEST(Adapter, GradcheckMeanSquare) {
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    auto a = Adapter::fresh("T", 6, 3, rng);
    randomize(collect_parameters("a", a), rng);
    Tensor x = random_tensor({4, 6}, rng);
    auto r = gradcheck([&] { auto y = adapter_forward(a, x); return mean(y * y); }, collect_parameters("adapter", a));
    EXPECT_TRUE(r.passed) << r.failure;
  }
}

TEST(Adapter, ShapePreserved) {
  Rng rng(3);
  for (std::size_t d : {2, 5, 16})
    for (std::size_t T : {1, 4}) {
      auto a = Adapter::fresh("T", d, 3, rng);
      EXPECT_EQ(adapter_forward(a, random_tensor({T, d}, rng)).shape(), (Shape{T, d}));
    }
}

TEST(EncoderBlock, ZeroOutputProjectionsGiveIdentity) {
  Rng rng(4);
  auto blk = EncoderBlock::init({16, 2, 32}, rng);
  blk.zero_output_projections();
  for (std::size_t T : {1, 3, 7}) {
    Tensor x = random_tensor({T, 16}, rng);
    auto y = encoder_block_forward(blk, x);
    EXPECT_TRUE(bitwise_equal(y.data(), x.data()));
  }
}

TEST(EncoderBlock, ShapeAndDeterminism) {
  Rng rng(5);
  auto blk = EncoderBlock::init({16, 2, 32}, rng);
  for (std::size_t T : {1, 3, 7}) {
    Tensor x = random_tensor({T, 16}, rng);
    auto y1 = encoder_block_forward(blk, x), y2 = encoder_block_forward(blk, x);
    EXPECT_EQ(y1.shape(), (Shape{T, 16}));
    EXPECT_TRUE(bitwise_equal(y1.data(), y2.data()));
  }
}

TEST(EncoderBlock, HeadsMustDivideModelDim) {
  Rng rng(6);
  try {
    EncoderBlock::init({10, 3, 16}, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(EncoderBlock, Gradcheck) {
  for (std::uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    auto blk = EncoderBlock::init({8, 2, 12}, rng);
    randomize(collect_parameters("blk", blk), rng, 0.4);
    Tensor x = random_tensor({3, 8}, rng);
    Tensor w = random_tensor({3, 8}, rng);
    auto params = collect_parameters("blk", blk);
    params.push_back({"x", x});
    auto r = gradcheck([&] { return sum(encoder_block_forward(blk, x) * w); }, params);
    EXPECT_TRUE(r.passed) << "seed " << seed << ": " << r.failure;
  }
}

TEST(Xavier, BoundDeterminismAndMean) {
  Rng a(17), b(17);
  auto t1 = xavier_init({4, 4}, a), t2 = xavier_init({4, 4}, b);
  EXPECT_TRUE(bitwise_equal(t1.data(), t2.data()));
  const double bound = std::sqrt(6.0 / 8.0);
  for (double v : t1.data()) EXPECT_LE(std::abs(v), bound);

  Rng rng(99);
  auto big = xavier_init({100, 100}, rng);
  double mean_v = 0.0;
  for (double v : big.data()) mean_v += v;
  mean_v /= 1e4;
  const double a_big = std::sqrt(6.0 / 200.0);
  const double sigma = a_big / std::sqrt(3.0) / std::sqrt(1e4);
  EXPECT_LT(std::abs(mean_v), 3.0 * sigma);
  EXPECT_THROW(xavier_init({2, 2, 2}, rng), Error);
}

TEST(GradcheckSuite, DeskShapesPassOnAllSeeds) {
  auto report = run_gradcheck_suite(ModelConfig{}, {1, 2, 3});
  EXPECT_EQ(report.cases.size(), 3 * gradcheck_suite_blocks().size());
  for (const auto& c : report.cases) EXPECT_TRUE(c.report.passed) << c.block << " seed " << c.seed << ": " << c.report.failure;
  EXPECT_TRUE(report.passed);
}

TEST(GradcheckSuite, InjectedFaultIsCaughtAndLocalized) {
  aaf::testing::inject_gradient_fault("softmax", 1.05);
  auto report = run_gradcheck_suite(ModelConfig{}, {1});
  aaf::testing::clear_gradient_faults();
  EXPECT_FALSE(report.passed);
  for (const auto& c : report.cases) {
    const bool uses_softmax = c.block == "softmax" || c.block == "aaf" || c.block == "encoder_block";
    EXPECT_EQ(c.report.passed, !uses_softmax) << c.block;
  }
}
