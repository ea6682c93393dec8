#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "qann/autodiff.hpp"
#include "qann/errors.hpp"
#include "qann/grad_check.hpp"

using namespace qann;
using namespace qann::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// Plain triple loop, independent of the op implementation.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) out.at(i, j) += a.at(i, k) * b.at(k, j);
  return out;
}

}  // namespace

TEST(Tensor, RejectsDataOfWrongLength) {
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Tensor, ItemNeedsOneElement) {
  EXPECT_DOUBLE_EQ(Tensor::scalar(4.5).item(), 4.5);
  EXPECT_THROW(Tensor({2}).item(), DimensionError);
}

TEST(MatMul, IdentityIsNeutral) {
  std::mt19937_64 rng(3);
  Tape tape;
  const Tensor a = random_tensor({4, 4}, rng);
  Var out = matmul(tape.constant(Tensor::identity(4)), tape.constant(a));
  EXPECT_EQ(out.value(), a);
}

TEST(MatMul, RankOneProjectorIsIdempotent) {
  Tape tape;
  const double s = 1.0 / std::sqrt(2.0);
  Var v = tape.constant(Tensor::matrix(2, 1, {s, s}));
  Var projector = matmul(v, transpose(v));
  Var twice = matmul(projector, projector);
  EXPECT_LT(max_abs_diff(twice.value(), projector.value()), 1e-15);
}

TEST(MatMul, MatchesTripleLoop) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> dim(1, 6);
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    const Tensor a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
    Tape tape;
    EXPECT_LT(max_abs_diff(matmul(tape.constant(a), tape.constant(b)).value(), naive_matmul(a, b)),
              1e-12);
  }
}

TEST(MatMul, VectorOperandIsAColumn) {
  Tape tape;
  Var m = tape.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var out = matmul(m, tape.constant(Tensor::vector({1, 0, -1})));
  EXPECT_EQ(out.value(), Tensor::vector({-2, -2}));
}

TEST(MatMul, InnerDimensionMismatchNamesShapes) {
  Tape tape;
  try {
    matmul(tape.constant(Tensor({2, 3})), tape.constant(Tensor({2, 2})));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
  }
}

TEST(Elementwise, SigmoidAndTanhValues) {
  Tape tape;
  Var x = tape.constant(Tensor::vector({0.0, 1.0, -1.0}));
  const Tensor s = sigmoid(x).value();
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_NEAR(s[1], 0.7310585786300049, 1e-15);
  EXPECT_NEAR(s[2], 0.2689414213699951, 1e-15);
  const Tensor t = ad::tanh(x).value();
  EXPECT_DOUBLE_EQ(t[0], 0.0);
  EXPECT_NEAR(t[1], 0.7615941559557649, 1e-15);
}

TEST(Elementwise, SigmoidSaturatesWithoutOverflow) {
  EXPECT_EQ(stable_sigmoid(1000.0), 1.0);
  EXPECT_EQ(stable_sigmoid(-1000.0), 0.0);
  EXPECT_FALSE(std::isnan(stable_sigmoid(-1e308)));
}

TEST(Elementwise, ShapeMismatchThrows) {
  Tape tape;
  EXPECT_THROW(add(tape.constant(Tensor({3})), tape.constant(Tensor({2}))), DimensionError);
  EXPECT_THROW(mul(tape.constant(Tensor({3})), tape.constant(Tensor({3, 1}))), DimensionError);
}

TEST(Softmax, LogOneLogThree) {
  Tape tape;
  const Tensor p = softmax(tape.constant(Tensor::vector({std::log(1.0), std::log(3.0)}))).value();
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, LargeLogitsStayFinite) {
  Tape tape;
  const Tensor p = softmax(tape.constant(Tensor::vector({1000.0, 0.0}))).value();
  EXPECT_EQ(p[0], 1.0);
  EXPECT_GE(p[1], 0.0);
  EXPECT_LT(p[1], 1e-300);
  const Tensor lp = log_softmax(tape.constant(Tensor::vector({1000.0, 0.0}))).value();
  EXPECT_DOUBLE_EQ(lp[0], 0.0);
  EXPECT_DOUBLE_EQ(lp[1], -1000.0);
}

TEST(Softmax, EmptyInputThrows) {
  EXPECT_THROW(stable_softmax(std::span<const double>{}), EmptySupportError);
  Tape tape;
  EXPECT_THROW(softmax(tape.constant(Tensor({0}))), EmptySupportError);
}

TEST(Softmax, ShiftInvariant) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor({7}, rng, 3.0);
    std::vector<double> shifted(x.data().begin(), x.data().end());
    for (double& v : shifted) v += 123.25;
    const auto a = stable_softmax(x.data());
    const auto b = stable_softmax(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    EXPECT_EQ(argmax(x.data()), argmax(shifted));
  }
}

TEST(Argmax, TiesGoToLowestIndex) {
  const std::vector<double> v = {1.0, 3.0, 3.0, 2.0};
  EXPECT_EQ(argmax(v), 1u);
}

TEST(LogSumExp, MatchesDirectSum) {
  const std::vector<double> v = {0.5, -1.0, 2.0};
  EXPECT_NEAR(log_sum_exp(v), std::log(std::exp(0.5) + std::exp(-1.0) + std::exp(2.0)), 1e-14);
}

TEST(GatherRows, PicksRowsAndScatterAddsGradients) {
  Tape tape;
  Tensor table = Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6});
  Var t = tape.parameter(table);
  const std::vector<std::size_t> ids = {2, 0, 2};
  Var g = gather_rows(t, ids);
  EXPECT_EQ(g.value(), Tensor::matrix(3, 2, {5, 6, 1, 2, 5, 6}));
  tape.backward(sum(g));
  EXPECT_EQ(tape.grad(t), Tensor::matrix(3, 2, {1, 1, 0, 0, 2, 2}));
}

TEST(GatherRows, EmptyIndexListGivesZeroRows) {
  Tape tape;
  Tensor table({4, 3}, 1.0);
  Var g = gather_rows(tape.parameter(table), std::vector<std::size_t>{});
  EXPECT_EQ(g.value().shape(), (Shape{0, 3}));
}

TEST(GatherRows, OutOfRangeIdThrows) {
  Tape tape;
  Tensor table({4, 3});
  EXPECT_THROW(gather_rows(tape.parameter(table), std::vector<std::size_t>{4}), IndexError);
}

TEST(GatherRows, FiniteDifferenceCheck) {
  std::mt19937_64 rng(17);
  Tensor table = random_tensor({5, 3}, rng);
  Tensor weights = random_tensor({4, 3}, rng);
  Tensor* params[] = {&table};
  const auto result = grad_check(
      [&](Tape& tape, std::span<const Var> p) {
        const std::vector<std::size_t> ids = {1, 4, 1, 0};
        Var rows = gather_rows(p[0], ids);
        return sum(mul(ad::tanh(rows), tape.constant(weights)));
      },
      params);
  EXPECT_TRUE(result.passed(1e-7)) << result.describe();
}

TEST(ConcatSlice, SplitInvertsConcat) {
  Tape tape;
  Var a = tape.constant(Tensor::vector({1, 2}));
  Var b = tape.constant(Tensor::vector({3, 4, 5}));
  const std::array<Var, 2> parts = {a, b};
  Var c = concat(parts);
  EXPECT_EQ(c.value(), Tensor::vector({1, 2, 3, 4, 5}));
  EXPECT_EQ(slice_rows(c, 0, 2).value(), a.value());
  EXPECT_EQ(slice_rows(c, 2, 3).value(), b.value());
  EXPECT_THROW(slice_rows(c, 4, 2), IndexError);
}

TEST(ConcatSlice, TrailingExtentsMustAgree) {
  Tape tape;
  const std::array<Var, 2> parts = {tape.constant(Tensor({1, 2})), tape.constant(Tensor({1, 3}))};
  EXPECT_THROW(concat(parts), DimensionError);
}

TEST(Backward, ProductRule) {
  Tape tape;
  Tensor x = Tensor::vector({2.0, -3.0});
  Tensor y = Tensor::vector({5.0, 7.0});
  Var vx = tape.parameter(x), vy = tape.parameter(y);
  tape.backward(dot(vx, vy));
  EXPECT_EQ(tape.grad(vx), y);
  EXPECT_EQ(tape.grad(vy), x);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Tape tape;
  Tensor x = Tensor::vector({3.0});
  Var vx = tape.parameter(x);
  tape.backward(sum(add(mul(vx, vx), vx)));  // x^2 + x
  EXPECT_DOUBLE_EQ(tape.grad(vx)[0], 7.0);
}

TEST(Backward, UnreachedParameterHasZeroGradient) {
  Tape tape;
  Tensor x = Tensor::vector({1.0, 2.0}), y = Tensor::vector({4.0});
  Var vx = tape.parameter(x), vy = tape.parameter(y);
  tape.backward(sum(vx));
  EXPECT_EQ(tape.grad(vy), Tensor({1}));
}

TEST(Backward, SecondCallWithoutResetThrows) {
  Tape tape;
  Tensor x = Tensor::vector({1.0});
  Var loss = sum(tape.parameter(x));
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), ContractError);
  tape.zero_grad();
  EXPECT_NO_THROW(tape.backward(loss));
}

TEST(Backward, LossMustBeScalar) {
  Tape tape;
  Tensor x = Tensor::vector({1.0, 2.0});
  EXPECT_THROW(tape.backward(tape.parameter(x)), ContractError);
}

TEST(Backward, MaxRoutesToFirstMaximizer) {
  Tape tape;
  Tensor x = Tensor::vector({1.0, 4.0, 4.0});
  Var vx = tape.parameter(x);
  tape.backward(ad::max(vx));
  EXPECT_EQ(tape.grad(vx), Tensor::vector({0.0, 1.0, 0.0}));
}

TEST(GradCheck, QuadraticIsExact) {
  Tensor a = Tensor::vector({0.3, -1.2, 2.0});
  Tensor* params[] = {&a};
  const auto result = grad_check([](Tape&, std::span<const Var> p) { return dot(p[0], p[0]); }, params);
  EXPECT_TRUE(result.passed(1e-9)) << result.describe();
  EXPECT_EQ(a, Tensor::vector({0.3, -1.2, 2.0}));  // restored after perturbation
}

TEST(GradCheck, EveryOpPassesComposedCheck) {
  std::mt19937_64 rng(23);
  Tensor m = random_tensor({3, 4}, rng), v = random_tensor({4}, rng), w = random_tensor({3}, rng);
  Tensor s = Tensor::scalar(0.4);
  Tensor* params[] = {&m, &v, &w, &s};
  const auto result = grad_check(
      [](Tape&, std::span<const Var> p) {
        Var h = ad::tanh(matmul(p[0], p[1]));
        Var g = sigmoid(add(h, p[2]));
        Var mixed = add(mul(g, one_minus(g)), scale(sub(h, p[2]), 0.5));
        const std::array<Var, 2> parts = {mixed, mul_scalar(p[3], p[2])};
        Var joined = concat(parts);
        Var lp = log_softmax(joined);
        return add(pick(lp, 2), add(ad::max(softmax(slice_rows(joined, 1, 4))),
                                    sum(matmul(transpose(p[0]), p[2]))));
      },
      params);
  EXPECT_TRUE(result.passed(1e-6)) << result.describe();
}

TEST(GradCheck, FivePointStencilHasSmallerTruncationError) {
  Tensor a = Tensor::vector({0.9, -0.6, 1.3});
  Tensor* params[] = {&a};
  auto f = [](Tape&, std::span<const Var> p) {
    Var t = ad::tanh(p[0]);
    return sum(mul(t, mul(t, t)));
  };
  const auto three = grad_check(f, params, 1e-2, Stencil::kThreePoint);
  const auto five = grad_check(f, params, 1e-2, Stencil::kFivePoint);
  // Truncation scales as eps^2 vs eps^4.
  EXPECT_GT(three.max_rel_error, 1e-5);
  EXPECT_LT(five.max_rel_error, 1e-7);
  EXPECT_EQ(a, Tensor::vector({0.9, -0.6, 1.3}));
}

// A deliberately wrong gradient must be caught: feed the checker a builder
// whose analytic path differs from its numeric path.
TEST(GradCheck, DetectsWrongGradient) {
  Tensor a = Tensor::vector({0.7, -0.4});
  Tensor* params[] = {&a};
  bool first = true;
  const auto result = grad_check(
      [&](Tape& tape, std::span<const Var> p) {
        if (first) {
          first = false;  // analytic pass: gradient of 2*sum(a)
          return scale(sum(p[0]), 2.0);
        }
        return scale(sum(p[0]), 3.0);
      },
      params);
  EXPECT_FALSE(result.passed(1e-4)) << result.describe();
  EXPECT_GT(result.max_rel_error, 0.3);
}

TEST(GradCheck, ReportsNaN) {
  Tensor a = Tensor::vector({1.0});
  Tensor* params[] = {&a};
  const auto result = grad_check(
      [](Tape& tape, std::span<const Var> p) {
        return mul(p[0], tape.constant(Tensor::vector({std::numeric_limits<double>::quiet_NaN()})));
      },
      params);
  EXPECT_TRUE(result.nan_found);
  EXPECT_FALSE(result.passed(1.0));
}

TEST(Backward, SumGivesAllOnes) {
  Tape tape;
  Tensor x({2, 3}, 0.5);
  Var vx = tape.parameter(x);
  tape.backward(sum(vx));
  EXPECT_EQ(tape.grad(vx), Tensor({2, 3}, 1.0));
}

TEST(GradCheck, SigmoidOfDotProduct) {
  std::mt19937_64 rng(29);
  Tensor w = random_tensor({5}, rng), x = random_tensor({5}, rng);
  Tensor* params[] = {&w, &x};
  const auto result =
      grad_check([](Tape&, std::span<const Var> p) { return sigmoid(dot(p[0], p[1])); }, params, 1e-5);
  EXPECT_TRUE(result.passed(1e-6)) << result.describe();
}

TEST(Tape, ReplayIsBitIdentical) {
  std::mt19937_64 rng(37);
  const Tensor m = random_tensor({4, 4}, rng), v = random_tensor({4}, rng);
  auto run = [&] {
    Tape tape;
    Var h = ad::tanh(matmul(tape.parameter(m), tape.parameter(v)));
    return softmax(add(h, sigmoid(h))).value();
  };
  EXPECT_EQ(run(), run());
}
