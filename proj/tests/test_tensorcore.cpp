#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "ssrc/ops.hpp"
#include "support/gradcheck.hpp"

using namespace ssrc;
using ssrc::testing::grad_check;
using ssrc::testing::random_tensor;
using ssrc::testing::weighted_sum;

namespace {

std::vector<Scalar> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(TensorCore, SoftmaxOfUniformLogits) {
  auto y = ops::softmax(Tensor::from_data({3}, {0, 0, 0}), 0);
  for (Scalar v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(TensorCore, MatmulShapeRule) {
  auto a = Tensor::zeros({2, 3});
  EXPECT_EQ(ops::matmul(a, Tensor::zeros({3, 4})).shape(), (Shape{2, 4}));
  try {
    ops::matmul(a, Tensor::zeros({4, 4}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
    EXPECT_NE(msg.find("[4, 4]"), std::string::npos);
  }
}

TEST(TensorCore, GradientOfSumOfSquares) {
  auto x = Tensor::from_data({3}, {1, 2, 3}, true);
  ops::sum(ops::mul(x, x)).backward();
  EXPECT_EQ(values(Tensor::from_data({3}, {x.grad()[0], x.grad()[1], x.grad()[2]})), (std::vector<Scalar>{2, 4, 6}));
}

TEST(TensorCore, MeanSquaredErrorGradient) {
  auto x = Tensor::from_data({4}, {0.5, -1, 2, 3}, true);
  auto c = Tensor::from_data({4}, {1, 1, 1, 1});
  ops::mean(ops::square(x - c)).backward();
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(x.grad()[i], 2.0 * (x.data()[i] - 1.0) / 4.0, 1e-15);
}

TEST(TensorCore, TwoConsumersAccumulate) {
  auto x = Tensor::from_data({2}, {1.5, -0.5}, true);
  auto a = ops::sum(ops::mul_scalar(x, 3));
  auto b = ops::sum(ops::square(x));
  (a + b).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 3 + 2 * 1.5);
  EXPECT_DOUBLE_EQ(x.grad()[1], 3 + 2 * -0.5);
}

TEST(TensorCore, NonScalarBackwardIsContractError) {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  EXPECT_THROW((x * 2.0).backward(), ContractError);
}

TEST(TensorCore, DomainErrors) {
  EXPECT_THROW(ops::log(Tensor::from_data({2}, {1, 0})), DomainError);
  EXPECT_THROW(ops::log(Tensor::from_data({1}, {-1})), DomainError);
  EXPECT_THROW(ops::div(Tensor::from_data({2}, {1, 1}), Tensor::from_data({2}, {1, 0})), DomainError);
}

TEST(TensorCore, BroadcastShapeError) {
  EXPECT_THROW(ops::add(Tensor::zeros({2, 3}), Tensor::zeros({4})), ShapeError);
  EXPECT_EQ(ops::add(Tensor::zeros({2, 3}), Tensor::zeros({3})).shape(), (Shape{2, 3}));
  EXPECT_EQ(ops::mul(Tensor::zeros({2, 1, 3}), Tensor::zeros({4, 1})).shape(), (Shape{2, 4, 3}));
}

TEST(TensorCore, DetachedTensorReceivesNoGradient) {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  auto d = x.detach();
  auto y = ops::sum(ops::square(d) + x);
  y.backward();
  EXPECT_FALSE(d.has_grad());
  EXPECT_TRUE(x.has_grad());
}

TEST(TensorCore, UnreachableParameterHasNoGradient) {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  auto unused = Tensor::from_data({2}, {1, 2}, true);
  ops::sum(x).backward();
  EXPECT_FALSE(unused.has_grad());
}

TEST(TensorCore, NoGradGuardSkipsRecording) {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  NoGradGuard guard;
  auto y = ops::sum(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(TensorCore, L2NormalizeZeroVector) {
  auto x = Tensor::from_data({2, 3}, {0, 0, 0, 3, 4, 0}, true);
  auto y = ops::l2_normalize(x, 1);
  EXPECT_EQ(values(y), (std::vector<Scalar>{0, 0, 0, 0.6, 0.8, 0}));
  weighted_sum(y, 3).backward();
  for (int i = 0; i < 3; ++i) EXPECT_EQ(x.grad()[i], 0.0);
  for (Scalar g : x.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(TensorCore, TransposedConvIsAdjointOfConv) {
  // <conv(x, w), y> == <x, conv_t(y, w)> for the same weights and geometry.
  std::mt19937_64 rng(11);
  auto x = random_tensor({2, 3, 8, 8}, rng);
  auto w = random_tensor({5, 3, 4, 4}, rng);
  auto y = random_tensor({2, 5, 4, 4}, rng);
  auto cx = ops::conv2d(x, w, Tensor(), 2, 1);
  ASSERT_EQ(cx.shape(), y.shape());
  auto ty = ops::transposed_conv2d(y, w, Tensor(), 2, 1);
  ASSERT_EQ(ty.shape(), x.shape());
  const double lhs = ops::sum(cx * y).item();
  const double rhs = ops::sum(x * ty).item();
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
}

TEST(TensorCore, Conv2dMatchesDirectLoop) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 2, 5, 6}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto b = random_tensor({3}, rng);
  auto y = ops::conv2d(x, w, b, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 3, 3}));
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 3; ++o)
      for (int oy = 0; oy < 3; ++oy)
        for (int ox = 0; ox < 3; ++ox) {
          double acc = b.data()[o];
          for (int c = 0; c < 2; ++c)
            for (int i = 0; i < 3; ++i)
              for (int j = 0; j < 3; ++j) {
                const int yy = oy * 2 - 1 + i, xx = ox * 2 - 1 + j;
                if (yy < 0 || yy >= 5 || xx < 0 || xx >= 6) continue;
                acc += x.at({n, c, yy, xx}) * w.at({o, c, i, j});
              }
          EXPECT_NEAR(y.at({n, o, oy, ox}), acc, 1e-12);
        }
}

TEST(TensorCore, CholeskySolveResidual) {
  auto a = Tensor::from_data({2, 2}, {4, 1, 1, 3});
  auto b = Tensor::from_data({2}, {1, 2});
  auto x = ops::cholesky_solve(a, b);
  EXPECT_NEAR(4 * x.data()[0] + 1 * x.data()[1], 1, 1e-14);
  EXPECT_NEAR(1 * x.data()[0] + 3 * x.data()[1], 2, 1e-14);
  EXPECT_THROW(ops::cholesky_solve(Tensor::from_data({2, 2}, {1, 2, 2, 1}), b), NumericalError);
}

TEST(TensorCore, BackwardIsBitwiseDeterministic) {
  auto run = [] {
    std::mt19937_64 rng(77);
    auto x = random_tensor({1, 2, 6, 6}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng);
    w.set_requires_grad(true);
    auto y = ops::tanh(ops::instance_norm(ops::conv2d(x, w, Tensor(), 1, 1)));
    weighted_sum(y, 9).backward();
    return std::vector<Scalar>(w.grad().begin(), w.grad().end());
  };
  const auto g1 = run();
  const auto g2 = run();
  ASSERT_EQ(g1.size(), g2.size());
  EXPECT_EQ(0, std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(Scalar)));
}

// ---- properties over seeds --------------------------------------------

namespace {

struct OpCase {
  const char* name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> make;
  std::function<Tensor(const std::vector<Tensor>&)> f;
  // Inputs closer than this to a kink of a piecewise-linear op are redrawn.
  std::function<bool(const std::vector<Tensor>&)> valid = [](const std::vector<Tensor>&) { return true; };
};

bool away_from_zero(const Tensor& t) {
  for (Scalar v : t.data())
    if (std::abs(v) < 1e-2) return false;
  return true;
}

std::vector<OpCase> op_cases() {
  using V = std::vector<Tensor>;
  auto pos = [](std::mt19937_64& r, Shape s) { return random_tensor(std::move(s), r, 0.5, 2.0); };
  return {
      {"add_broadcast", [](auto& r) { return V{random_tensor({3, 4}, r), random_tensor({4}, r)}; },
       [](const V& v) { return weighted_sum(v[0] + v[1], 1); }},
      {"sub_broadcast", [](auto& r) { return V{random_tensor({2, 1, 3}, r), random_tensor({4, 1}, r)}; },
       [](const V& v) { return weighted_sum(v[0] - v[1], 2); }},
      {"mul", [](auto& r) { return V{random_tensor({3, 4}, r), random_tensor({3, 4}, r)}; },
       [](const V& v) { return weighted_sum(v[0] * v[1], 3); }},
      {"div", [pos](auto& r) { return V{random_tensor({3, 4}, r), pos(r, {3, 1})}; },
       [](const V& v) { return weighted_sum(v[0] / v[1], 4); }},
      {"matmul", [](auto& r) { return V{random_tensor({3, 4}, r), random_tensor({4, 2}, r)}; },
       [](const V& v) { return weighted_sum(ops::matmul(v[0], v[1]), 5); }},
      {"tanh_sigmoid", [](auto& r) { return V{random_tensor({5}, r, -2, 2)}; },
       [](const V& v) { return weighted_sum(ops::tanh(v[0]) * ops::sigmoid(v[0]), 6); }},
      {"leaky_relu", [](auto& r) { return V{random_tensor({6}, r)}; },
       [](const V& v) { return weighted_sum(ops::leaky_relu(v[0], 0.2), 7); },
       [](const V& v) { return away_from_zero(v[0]); }},
      {"exp_log", [pos](auto& r) { return V{pos(r, {5})}; },
       [](const V& v) { return weighted_sum(ops::log(v[0]) + ops::exp(v[0]), 8); }},
      {"softplus", [](auto& r) { return V{random_tensor({5}, r, -3, 3)}; },
       [](const V& v) { return weighted_sum(ops::softplus(v[0]), 9); }},
      {"softmax", [](auto& r) { return V{random_tensor({3, 5}, r, -2, 2)}; },
       [](const V& v) { return weighted_sum(ops::softmax(v[0], 1), 10); }},
      {"log_softmax", [](auto& r) { return V{random_tensor({4, 3}, r, -2, 2)}; },
       [](const V& v) { return weighted_sum(ops::log_softmax(v[0], 0), 11); }},
      {"logsumexp", [](auto& r) { return V{random_tensor({3, 4}, r, -2, 2)}; },
       [](const V& v) { return weighted_sum(ops::logsumexp(v[0], 1), 12); }},
      {"sum_mean_axis", [](auto& r) { return V{random_tensor({2, 3, 4}, r)}; },
       [](const V& v) { return weighted_sum(ops::sum(v[0], 1) + ops::mean(v[0], 1), 13); }},
      {"l2_normalize", [](auto& r) { return V{random_tensor({4, 6}, r)}; },
       [](const V& v) { return weighted_sum(ops::l2_normalize(v[0], 1), 14); }},
      {"concat_slice", [](auto& r) { return V{random_tensor({2, 3}, r), random_tensor({2, 2}, r)}; },
       [](const V& v) { return weighted_sum(ops::slice(ops::concat({v[0], v[1]}, 1), 1, 1, 4), 15); }},
      {"reshape_permute", [](auto& r) { return V{random_tensor({2, 3, 4}, r)}; },
       [](const V& v) { return weighted_sum(ops::reshape(ops::permute(v[0], {2, 0, 1}), {4, 6}), 16); }},
      {"index_select_take", [](auto& r) { return V{random_tensor({4, 3}, r)}; },
       [](const V& v) {
         auto rows = ops::index_select(v[0], 0, {2, 0, 2});
         return weighted_sum(ops::take(rows, {0, 4, 8, 4}, {2, 2}), 17);
       }},
      {"cholesky_solve",
       [](auto& r) {
         auto m = random_tensor({3, 3}, r);
         auto spd = ops::matmul(m, ops::transpose(m)) + Tensor::from_data({3, 3}, {2, 0, 0, 0, 2, 0, 0, 0, 2});
         return V{spd.detach(), random_tensor({3, 2}, r)};
       },
       [](const V& v) { return weighted_sum(ops::cholesky_solve(v[0], v[1]), 18); }},
      {"conv2d_relu",
       [](auto& r) { return V{random_tensor({2, 2, 5, 5}, r), random_tensor({3, 2, 3, 3}, r), random_tensor({3}, r)}; },
       [](const V& v) { return weighted_sum(ops::relu(ops::conv2d(v[0], v[1], v[2], 2, 1)), 19); },
       [](const V& v) { return away_from_zero(ops::conv2d(v[0], v[1], v[2], 2, 1)); }},
      {"transposed_conv2d",
       [](auto& r) { return V{random_tensor({2, 3, 3, 3}, r), random_tensor({3, 2, 4, 4}, r), random_tensor({2}, r)}; },
       [](const V& v) { return weighted_sum(ops::transposed_conv2d(v[0], v[1], v[2], 2, 1), 20); }},
      {"instance_norm", [](auto& r) { return V{random_tensor({2, 2, 3, 3}, r)}; },
       [](const V& v) { return weighted_sum(ops::instance_norm(v[0]), 21); }},
  };
}

}  // namespace

TEST(TensorCoreProperty, FiniteDifferenceAgreementOver100Seeds) {
  for (const auto& c : op_cases()) {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed * 7919 + 1);
      auto inputs = c.make(rng);
      while (!c.valid(inputs)) inputs = c.make(rng);
      auto r = grad_check(c.f, inputs);
      worst = std::max(worst, r.max_relative_error);
    }
    EXPECT_LT(worst, 1e-4) << c.name;
  }
}

TEST(TensorCoreProperty, SoftmaxIsADistribution) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    auto y = ops::softmax(random_tensor({4, 7}, rng, -30, 30), 1);
    for (int r = 0; r < 4; ++r) {
      double s = 0;
      for (int k = 0; k < 7; ++k) {
        EXPECT_GE(y.at({r, k}), 0.0);
        s += y.at({r, k});
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(TensorCoreProperty, L2NormalizeHasUnitNorm) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    auto y = ops::l2_normalize(random_tensor({5, 9}, rng, -10, 10), 1);
    for (int r = 0; r < 5; ++r) {
      double s = 0;
      for (int k = 0; k < 9; ++k) s += y.at({r, k}) * y.at({r, k});
      EXPECT_NEAR(std::sqrt(s), 1.0, 1e-7);
    }
  }
}

TEST(TensorCore, CompositeConvNetMatchesFiniteDifferences) {
  // Small net (< 1k parameters): conv -> relu -> conv -> mean squared error.
  std::mt19937_64 rng(2024);
  auto x = random_tensor({2, 3, 6, 6}, rng);
  auto target = random_tensor({2, 2, 3, 3}, rng);
  std::vector<Tensor> params{random_tensor({8, 3, 3, 3}, rng, -0.5, 0.5), random_tensor({8}, rng),
                             random_tensor({2, 8, 3, 3}, rng, -0.5, 0.5), random_tensor({2}, rng)};
  std::size_t count = 0;
  for (auto& p : params) count += static_cast<std::size_t>(p.numel());
  ASSERT_LE(count, 1000u);
  auto f = [&](const std::vector<Tensor>& p) {
    auto h = ops::relu(ops::conv2d(x, p[0], p[1], 1, 1));
    auto y = ops::conv2d(h, p[2], p[3], 2, 1);
    return ops::mean(ops::square(y - target));
  };
  auto r = grad_check(f, params, 1e-3);
  EXPECT_LT(r.max_relative_error, 1e-4);
}
