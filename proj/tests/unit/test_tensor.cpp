#include <gtest/gtest.h>

#include <bit>
#include <cmath>

#include "aaf/error.hpp"
#include "aaf/gradcheck.hpp"
#include "aaf/rng.hpp"
#include "aaf/tensor.hpp"

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

void expect_kind(ErrorKind kind, const std::function<void()>& f) {
  try {
    f();
    FAIL() << "expected " << to_string(kind) << " error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

}  // namespace

TEST(Matmul, IdentityAndAnnihilation) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor id({2, 2}, {1, 0, 0, 1});
  auto c = matmul(a, id);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{1, 2, 3, 4}));
  auto z = matmul(Tensor({2, 2}, {1, 0, 0, 0}), Tensor({2, 1}, {0, 5}));
  EXPECT_EQ(z.shape(), (Shape{2, 1}));
  EXPECT_EQ(z.at(0), 0.0);
  EXPECT_EQ(z.at(1), 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({2, 3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Dimension);
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  auto r = gradcheck([&] { return sum(matmul(a, b)); }, {{"A", a}, {"B", b}}, {1e-4, 1e-6, 1e-3});
  EXPECT_TRUE(r.passed) << r.failure;
  // d sum(AB)/dA[i,k] = sum_j B[k,j].
  a.set_requires_grad(true);
  Tape::active().clear();
  backward(sum(matmul(a, b)));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(a.grad()[i * 4 + k], b.at({k, 0}) + b.at({k, 1}), 1e-15);
  a.set_requires_grad(false);
}

TEST(Stack, ExamplesAndSlices) {
  auto s = stack({Tensor({2}, {1, 2}), Tensor({2}, {3, 4})}, 0);
  EXPECT_EQ(s.shape(), (Shape{2, 2}));
  EXPECT_EQ(s.at({1, 0}), 3.0);
  auto one = stack({Tensor({2, 3}, 7.0)}, 0);
  EXPECT_EQ(one.shape(), (Shape{1, 2, 3}));
  Rng rng(3);
  std::vector<Tensor> xs{random_tensor({2, 3}, rng), random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)};
  for (std::size_t axis = 0; axis <= 2; ++axis) {
    auto st = stack(xs, axis);
    for (std::size_t n = 0; n < 3; ++n) EXPECT_TRUE(bitwise_equal(select(st, axis, n).data(), xs[n].data()));
  }
  expect_kind(ErrorKind::EmptyInput, [] { stack({}, 0); });
  expect_kind(ErrorKind::Dimension, [] { stack({Tensor({2}), Tensor({3})}, 0); });
}

TEST(Stack, GradientPerSlice) {
  Rng rng(5);
  Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
  Tensor w = random_tensor({2, 2, 3}, rng);
  auto r = gradcheck([&] { return sum(stack({a, b}, 0) * w); }, {{"a", a}, {"b", b}});
  EXPECT_TRUE(r.passed) << r.failure;
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tape::active().clear();
  backward(sum(stack({a, b}, 0) * w));
  EXPECT_TRUE(bitwise_equal(a.grad(), select(w, 0, 0).data()));
  EXPECT_TRUE(bitwise_equal(b.grad(), select(w, 0, 1).data()));
}

TEST(Elementwise, Examples) {
  Tensor x({2}, {0.5, 2.0});
  auto y = exp(log(x));
  EXPECT_NEAR(y.at(0), 0.5, 1e-12);
  EXPECT_NEAR(y.at(1), 2.0, 1e-12);
  EXPECT_EQ(mean(Tensor({3}, {1, 2, 3})).item(), 2.0);
  expect_kind(ErrorKind::NumericDomain, [] { div(Tensor({1}, 1.0), Tensor({1}, 1e-13)); });
  expect_kind(ErrorKind::NumericDomain, [] { log(Tensor({2}, {1.0, 0.0})); });
  expect_kind(ErrorKind::NumericDomain, [] { log(Tensor({1}, -1.0)); });
  expect_kind(ErrorKind::Dimension, [] { add(Tensor({2}), Tensor({3})); });
  // Scalar broadcasting only.
  EXPECT_EQ(add(Tensor({3}, 1.0), Tensor({1}, 2.0)).at(2), 3.0);
}

TEST(Elementwise, CompositeGradcheck) {
  Rng rng(9);
  Tensor x = random_tensor({5}, rng);
  auto r = gradcheck([&] { return sum(tanh(x * x)); }, {{"x", x}}, {1e-4, 1e-6, 1e-3});
  EXPECT_TRUE(r.passed) << r.failure;
}

TEST(Backward, Examples) {
  Tensor x({2}, 1.0);
  x.set_requires_grad(true);
  backward(sum(x * 2.0));
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 2.0);

  Tensor a({3}, {1, 2, 3}), b({3}, {4, 5, 6});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  backward(sum(a * b));
  EXPECT_TRUE(bitwise_equal(a.grad(), b.data()));
  EXPECT_TRUE(bitwise_equal(b.grad(), a.data()));
}

TEST(Backward, NonScalarRootAndStaleTape) {
  Tensor x({2}, 1.0);
  x.set_requires_grad(true);
  auto y = x * 3.0;
  expect_kind(ErrorKind::Dimension, [&] { backward(y); });
  auto root = sum(x * 3.0);
  backward(root);
  expect_kind(ErrorKind::StaleTape, [&] { backward(root); });
  // A fresh forward makes backward legal again.
  backward(sum(x * 3.0));
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, AccumulatesAndZeroGradResets) {
  Tensor x({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  backward(sum(x * x));
  backward(sum(x * 3.0));
  EXPECT_EQ(x.grad()[0], 2.0 + 3.0);
  EXPECT_EQ(x.grad()[1], 4.0 + 3.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Gradcheck, TrivialSumHasZeroError) {
  Rng rng(1);
  Tensor x = random_tensor({4}, rng);
  auto r = gradcheck([&] { return sum(x); }, {{"x", x}});
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error(), 1e-10);
}

TEST(Gradcheck, DetectsCorruptedGradient) {
  Rng rng(2);
  Tensor x = random_tensor({4}, rng, 0.5, 1.5);
  aaf::testing::inject_gradient_fault("tanh", 1.01);
  auto r = gradcheck([&] { return sum(tanh(x)); }, {{"x", x}});
  aaf::testing::clear_gradient_faults();
  EXPECT_FALSE(r.passed);
  EXPECT_NEAR(r.max_rel_error(), 1e-2, 2e-3);
  EXPECT_NE(r.failure.find("x["), std::string::npos) << r.failure;
}

TEST(Gradcheck, NaNIsReportedWithLocation) {
  Tensor x({2}, {1.0, 1e-5});
  // log(x - h) is undefined for the second element at h = 1e-4.
  auto r = gradcheck([&] { return sum(log(x)); }, {{"x", x}});
  EXPECT_FALSE(r.passed);
  EXPECT_NE(r.failure.find("x[1]"), std::string::npos) << r.failure;
}

TEST(Gradcheck, RestoresParametersBitwise) {
  Rng rng(4);
  Tensor x = random_tensor({6}, rng);
  auto before = std::vector<double>(x.data().begin(), x.data().end());
  gradcheck([&] { return sum(exp(x)); }, {{"x", x}});
  EXPECT_TRUE(bitwise_equal(x.data(), before));
  EXPECT_FALSE(x.requires_grad());
}

TEST(Properties, Determinism) {
  auto run = [] {
    Rng rng(42);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 3}, rng);
    a.set_requires_grad(true);
    Tape::active().clear();
    auto loss = sum(tanh(matmul(a, b)) * 1.7);
    backward(loss);
    std::vector<double> out{loss.item()};
    out.insert(out.end(), a.grad().begin(), a.grad().end());
    return out;
  };
  EXPECT_TRUE(bitwise_equal(run(), run()));
}

TEST(Properties, ShapeAlgebra) {
  Rng rng(8);
  Tensor x = random_tensor({2, 3, 4}, rng);
  auto y = reshape(reshape(x, {6, 4}), {4, 6});
  EXPECT_TRUE(bitwise_equal(y.data(), reshape(x, {4, 6}).data()));
  Tensor m = random_tensor({3, 5}, rng);
  EXPECT_TRUE(bitwise_equal(transpose(transpose(m)).data(), m.data()));
  EXPECT_EQ(transpose(m).shape(), (Shape{5, 3}));
}

TEST(Properties, SumCanonicalIgnoresSliceOrder) {
  Rng rng(12);
  Tensor a = random_tensor({2, 3}, rng, -1e3, 1e3), b = random_tensor({2, 3}, rng), c = random_tensor({2, 3}, rng, -1e-3, 1e-3);
  auto s1 = sum_canonical(stack({a, b, c}, 0), 0);
  auto s2 = sum_canonical(stack({c, a, b}, 0), 0);
  EXPECT_TRUE(bitwise_equal(s1.data(), s2.data()));
}

// Every differentiable op, randomized shapes <= 8 per dim, fixed seeds.
class OpGradcheck : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(OpGradcheck, AllOps) {
  Rng rng(GetParam());
  auto dim = [&] { return 1 + rng.below(8); };
  const std::size_t m = dim(), n = dim(), p = dim();
  Tensor a = random_tensor({m, n}, rng), b = random_tensor({m, n}, rng);
  Tensor c = random_tensor({n, p}, rng);
  Tensor pos = random_tensor({m, n}, rng, 0.5, 2.0);
  Tensor s = random_tensor({1}, rng, 0.5, 1.5);
  Tensor bias = random_tensor({n}, rng);
  Tensor w = random_tensor({m, n}, rng);  // fixed weights make each output element matter
  const std::size_t rows[] = {0, m - 1, 0};

  struct Case {
    const char* name;
    std::function<Tensor()> f;
    std::vector<NamedTensor> params;
  };
  std::vector<Case> cases{
      {"matmul", [&] { return sum(tanh(matmul(a, c))); }, {{"a", a}, {"c", c}}},
      {"add", [&] { return sum((a + b) * w); }, {{"a", a}, {"b", b}}},
      {"sub", [&] { return sum((a - b) * w); }, {{"a", a}, {"b", b}}},
      {"mul", [&] { return sum(a * b * w); }, {{"a", a}, {"b", b}}},
      {"div", [&] { return sum(a / pos * w); }, {{"a", a}, {"pos", pos}}},
      {"scalar_bcast", [&] { return sum(a * s * w + s); }, {{"a", a}, {"s", s}}},
      {"scalar_ops", [&] { return sum(div_scalar(add_scalar(mul_scalar(a, 1.5), 0.3), 2.0) * w); }, {{"a", a}}},
      {"neg", [&] { return sum(-a * w); }, {{"a", a}}},
      {"exp", [&] { return sum(exp(a) * w); }, {{"a", a}}},
      {"log", [&] { return sum(log(pos) * w); }, {{"pos", pos}}},
      {"tanh", [&] { return sum(tanh(a) * w); }, {{"a", a}}},
      {"relu", [&] { return sum(relu(add_scalar(pos, -1.0)) * w); }, {{"pos", pos}}},
      {"mean", [&] { return mean(a * w); }, {{"a", a}}},
      {"sum_axes", [&] { return sum(tanh(sum(a * w, {0}))); }, {{"a", a}}},
      {"mean_axes", [&] { return sum(tanh(mean(a * w, {1}))); }, {{"a", a}}},
      {"sum_canonical", [&] { return sum(tanh(sum_canonical(stack({a, b, w}, 0), 0))); }, {{"a", a}, {"b", b}}},
      {"logsumexp", [&] { return sum(tanh(logsumexp(a, 1))); }, {{"a", a}}},
      {"transpose", [&] { return sum(tanh(matmul(transpose(a), b))); }, {{"a", a}, {"b", b}}},
      {"reshape", [&] { return sum(tanh(reshape(a, {n, m})) * transpose(w)); }, {{"a", a}}},
      {"stack", [&] { return sum(tanh(stack({a, b}, 1))); }, {{"a", a}, {"b", b}}},
      {"concat", [&] { return sum(tanh(concat({a, b}, 0)) * concat({w, w}, 0)); }, {{"a", a}, {"b", b}}},
      {"select", [&] { return sum(tanh(select(stack({a, b}, 0), 0, 1))); }, {{"a", a}, {"b", b}}},
      {"narrow", [&] { return sum(tanh(narrow(a, 1, 0, n))); }, {{"a", a}}},
      {"add_bias", [&] { return sum(tanh(add_bias(a, bias))); }, {{"a", a}, {"bias", bias}}},
      {"pairwise_add", [&] { return sum(tanh(pairwise_add(a, b))); }, {{"a", a}, {"b", b}}},
      {"gather_rows", [&] { return sum(tanh(gather_rows(a, rows))); }, {{"a", a}}},
  };
  for (auto& c : cases) {
    auto r = gradcheck(c.f, c.params);
    EXPECT_TRUE(r.passed) << c.name << ": " << r.failure;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradcheck, ::testing::Values(1u, 2u, 3u));
