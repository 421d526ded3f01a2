#include <gtest/gtest.h>

#include "space/ops.hpp"
#include "space/tensor.hpp"

using space::Tensor;
namespace ops = space::ops;

TEST(Tensor, FactoriesAndShape) {
  auto z = Tensor<float>::zeros({2, 3});
  EXPECT_EQ(z.dim(), 2u);
  EXPECT_EQ(z.numel(), 6u);
  for (float v : z.data()) EXPECT_EQ(v, 0.0f);
  auto s = Tensor<double>::scalar(2.5);
  EXPECT_EQ(s.dim(), 0u);
  EXPECT_EQ(s.item(), 2.5);
  EXPECT_THROW(Tensor<double>::from_data({2, 2}, {1, 2, 3}), space::ShapeError);
  EXPECT_THROW(Tensor<double>::zeros({2, 0}), space::ShapeError);
}

TEST(Tensor, DetachSharesNothing) {
  auto a = Tensor<double>::from_data({2}, {1, 2}, true);
  auto b = a.detach();
  b.data()[0] = 5;
  EXPECT_EQ(a.data()[0], 1);
  EXPECT_FALSE(b.requires_grad());
}

TEST(Tape, BackwardAccumulatesAndClears) {
  space::TapeScope<double> scope;
  auto x = Tensor<double>::from_data({3}, {1, 2, 3}, true);
  auto y = ops::sum(ops::mul(x, x));
  EXPECT_GT(scope.tape().size(), 0u);
  scope.tape().backward(y);
  EXPECT_TRUE(scope.tape().empty());
  EXPECT_DOUBLE_EQ(x.grad()[0], 2);
  EXPECT_DOUBLE_EQ(x.grad()[2], 6);

  // Gradients accumulate across passes until cleared.
  auto y2 = ops::sum(x);
  scope.tape().backward(y2);
  EXPECT_DOUBLE_EQ(x.grad()[0], 3);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0);
}

TEST(Tape, RejectsNonScalarAndUntrackedLoss) {
  space::TapeScope<double> scope;
  auto x = Tensor<double>::from_data({2}, {1, 2}, true);
  EXPECT_THROW(scope.tape().backward(ops::mul_scalar(x, 2.0)), space::ShapeError);
  auto c = Tensor<double>::scalar(1.0);
  EXPECT_THROW(scope.tape().backward(c), std::logic_error);
}

TEST(Tape, NoGradGuardRecordsNothing) {
  space::TapeScope<double> scope;
  auto x = Tensor<double>::from_data({2}, {1, 2}, true);
  {
    space::NoGradGuard guard;
    EXPECT_FALSE(space::grad_enabled());
    auto y = ops::exp(x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(space::grad_enabled());
  EXPECT_TRUE(scope.tape().empty());
}

TEST(Tape, ScopesNest) {
  space::TapeScope<double> outer;
  auto x = Tensor<double>::from_data({1}, {3}, true);
  auto a = ops::mul_scalar(x, 2.0);
  {
    space::TapeScope<double> inner;
    auto b = ops::sum(ops::mul_scalar(x, 5.0));
    inner.tape().backward(b);
    EXPECT_DOUBLE_EQ(x.grad()[0], 5);
  }
  EXPECT_EQ(outer.tape().size(), 1u);
  EXPECT_EQ(&space::Tape<double>::active(), &outer.tape());
}
