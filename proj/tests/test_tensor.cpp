#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "healnet/error.hpp"
#include "healnet/gradcheck.hpp"
#include "healnet/ops.hpp"
#include "healnet/tensor.hpp"

using namespace healnet;

namespace {

Tensor iota_tensor(Shape shape, bool rg = false, double start = 0.0) {
  std::vector<double> v(shape_numel(shape));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = start + static_cast<double>(i);
  return Tensor(std::move(shape), std::move(v), rg);
}

}  // namespace

TEST(Tensor, DataLengthMatchesShape) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.data().size(), 24u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
}

TEST(Tensor, GradAbsentUntilBackward) {
  Tensor a({3}, {1, 2, 3}, true);
  Tensor b({3}, {1, 1, 1});
  EXPECT_FALSE(a.has_grad());
  backward(ops::sum(ops::mul(a, b)));
  ASSERT_TRUE(a.has_grad());
  EXPECT_EQ(a.grad().size(), a.numel());
  EXPECT_FALSE(b.has_grad());
}

TEST(Tensor, OnlyLeavesAreWritable) {
  Tensor a({2}, {1, 2}, true);
  Tensor b = ops::scale(a, 2.0);
  EXPECT_NO_THROW(a.mutable_data());
  EXPECT_THROW(b.mutable_data(), Error);
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  const Tensor p = ops::softmax(Tensor({1, 4}));
  for (double v : p.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  const Tensor p = ops::softmax(Tensor({2, 3}, {1000, 1001, 1002, -5, 0, 5}));
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += p.at(r * 3 + c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, ConcatChannels) {
  const Tensor parts[] = {Tensor({2, 4, 3, 3}), Tensor({2, 6, 3, 3})};
  EXPECT_EQ(ops::concat(parts, 1).shape(), (Shape{2, 10, 3, 3}));
}

TEST(Ops, ConcatPreservesValues) {
  const Tensor parts[] = {iota_tensor({2, 1}), iota_tensor({2, 2}, false, 10)};
  const Tensor c = ops::concat(parts, 1);
  const std::vector<double> expected = {0, 10, 11, 1, 12, 13};
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), expected);
}

TEST(Ops, ConvOutputShape) {
  const Tensor y = ops::conv2d(Tensor({1, 1, 5, 5}), Tensor({1, 1, 3, 3}), Tensor({1}), {1, 0});
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  const Tensor z = ops::conv2d(Tensor({1, 1, 5, 5}), Tensor({2, 1, 3, 3}), Tensor({2}), {2, 1});
  EXPECT_EQ(z.shape(), (Shape{1, 2, 3, 3}));
}

TEST(Ops, ConvMatchesDirectSum) {
  const Tensor x = iota_tensor({1, 2, 4, 4});
  std::vector<double> w(2 * 2 * 3 * 3);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(static_cast<double>(i));
  const Tensor wt({2, 2, 3, 3}, w);
  const Tensor b({2}, {0.5, -0.25});
  const Tensor y = ops::conv2d(x, wt, b, {1, 1});
  for (std::size_t o = 0; o < 2; ++o) {
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        double s = b.at(o);
        for (std::size_t c = 0; c < 2; ++c) {
          for (int ki = 0; ki < 3; ++ki) {
            for (int kj = 0; kj < 3; ++kj) {
              const int yi = i + ki - 1, xj = j + kj - 1;
              if (yi < 0 || yi >= 4 || xj < 0 || xj >= 4) continue;
              s += x.at((c * 4 + static_cast<std::size_t>(yi)) * 4 + static_cast<std::size_t>(xj)) *
                   w[((o * 2 + c) * 3 + static_cast<std::size_t>(ki)) * 3 + static_cast<std::size_t>(kj)];
            }
          }
        }
        EXPECT_NEAR(y.at((o * 4 + static_cast<std::size_t>(i)) * 4 + static_cast<std::size_t>(j)), s, 1e-12);
      }
    }
  }
}

TEST(Ops, MaxPoolAndGlobalAverage) {
  const Tensor x = iota_tensor({1, 1, 4, 4});
  const Tensor m = ops::max_pool2d(x, 2, 2);
  EXPECT_EQ(std::vector<double>(m.data().begin(), m.data().end()), (std::vector<double>{5, 7, 13, 15}));
  const Tensor g = ops::global_avg_pool(x);
  EXPECT_EQ(g.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(g.item(), 7.5);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  try {
    ops::mul(Tensor({2, 3}), Tensor({3, 2}));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("mul"), std::string::npos);
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3, 2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(ops::matmul(Tensor({2, 3}), Tensor({2, 3})), ShapeError);
  EXPECT_THROW(ops::conv2d(Tensor({1, 2, 5, 5}), Tensor({1, 3, 3, 3}), Tensor({1})), ShapeError);
  EXPECT_THROW(ops::conv2d(Tensor({1, 1, 2, 2}), Tensor({1, 1, 3, 3}), Tensor({1})), ShapeError);
}

TEST(Ops, NonFiniteInputRejected) {
  const Tensor bad({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  EXPECT_THROW(ops::relu(bad), NumericError);
  EXPECT_THROW(ops::add(bad, Tensor({2})), NumericError);
  const Tensor inf({1}, std::vector<double>{std::numeric_limits<double>::infinity()});
  EXPECT_THROW(ops::sigmoid(inf), NumericError);
}

TEST(Ops, DropoutRateValidatedAndEvalIsIdentity) {
  std::mt19937_64 rng(1);
  const Tensor x = iota_tensor({3, 3});
  EXPECT_THROW(ops::dropout(x, 1.0, true, rng), ValueError);
  EXPECT_THROW(ops::dropout(x, -0.1, true, rng), ValueError);
  const Tensor y = ops::dropout(x, 0.3, false, rng);
  EXPECT_TRUE(y.same_storage(x));
}

TEST(Ops, DropoutKeepsExpectedFraction) {
  std::mt19937_64 rng(3);
  const Tensor x({100000}, std::vector<double>(100000, 1.0));
  const Tensor y = ops::dropout(x, 0.3, true, rng);
  std::size_t kept = 0;
  for (double v : y.data()) {
    if (v != 0.0) {
      EXPECT_NEAR(v, 1.0 / 0.7, 1e-12);
      ++kept;
    }
  }
  EXPECT_NEAR(static_cast<double>(kept) / 100000.0, 0.7, 0.01);
}

TEST(Graph, NodeRecordedOnlyWhenInputRequiresGrad) {
  const Tensor plain = ops::relu(Tensor({2}, {1, -1}));
  EXPECT_FALSE(plain.requires_grad());
  const Tensor tracked = ops::relu(Tensor({2}, {1, -1}, true));
  EXPECT_TRUE(tracked.requires_grad());
  EXPECT_FALSE(tracked.is_leaf());
}

TEST(Graph, NoGradGuardSuppressesRecording) {
  Tensor a({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(ops::scale(a, 2.0).requires_grad());
  }
  EXPECT_TRUE(ops::scale(a, 2.0).requires_grad());
}

TEST(Graph, BackwardRequiresScalar) {
  Tensor a({2}, {1, 2}, true);
  EXPECT_THROW(backward(ops::scale(a, 2.0)), ShapeError);
}

TEST(Graph, RepeatedBackwardAccumulates) {
  Tensor a({3}, {1, -2, 3}, true);
  const Tensor loss = ops::sum(ops::mul(a, a));
  backward(loss);
  const std::vector<double> once(a.grad().begin(), a.grad().end());
  backward(loss);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(a.grad()[i], 2.0 * once[i]);
  a.zero_grad();
  EXPECT_FALSE(a.has_grad());
}

TEST(Graph, SharedSubexpressionVisitedOnce) {
  // y = x*x used twice: d/dx (x^2 + x^2) = 4x.
  Tensor x({1}, {3.0}, true);
  const Tensor y = ops::mul(x, x);
  backward(ops::sum(ops::add(y, y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Graph, EveryLeafReceivesGradient) {
  Tensor w({2, 2}, {1, 2, 3, 4}, true);
  Tensor b({2}, {0, 0}, true);
  Tensor x({1, 2}, {1, 1}, true);
  backward(ops::sum(ops::relu(ops::add(ops::matmul(x, w), b))));
  EXPECT_TRUE(w.has_grad());
  EXPECT_TRUE(b.has_grad());
  EXPECT_TRUE(x.has_grad());
}

TEST(GradCheck, DetectsWrongGradient) {
  // A function whose value and recorded gradient disagree must be flagged.
  const GradFunction f = [](std::span<const Tensor> in) {
    const Tensor detached = in[0].detach();
    return ops::sum(ops::add(ops::mul(detached, detached), in[0]));
  };
  const auto r = grad_check(f, {Tensor({3}, {0.5, -1.0, 2.0}, true)}, 0);
  EXPECT_GT(r.max_relative_error, 0.1);
}

class GradCheckKinds : public ::testing::TestWithParam<std::string> {};

TEST_P(GradCheckKinds, PassesOverSeeds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = grad_check_kind(GetParam(), seed);
    EXPECT_GT(r.checked, 0u);
    EXPECT_LT(r.max_relative_error, 1e-4) << GetParam() << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradCheckKinds, ::testing::ValuesIn(grad_check_kinds()),
                         [](const auto& info) { return info.param; });
