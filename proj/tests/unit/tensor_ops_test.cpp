#include <gtest/gtest.h>

#include <cmath>

#include "tamseg/ops.hpp"
#include "test_util.hpp"

namespace tamseg {
namespace {

using testing::random_tensor;

TEST(TensorTest, ShapeAndDataInvariant) {
  Tensor t = Tensor::zeros({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.data<float>().size(), 24u);
  EXPECT_THROW((void)t.data<double>(), ShapeError);
  EXPECT_THROW(Tensor::from_values({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST(TensorTest, ValidateFiniteFlagsNaN) {
  Tensor t = Tensor::from_values({3}, {1.0, NAN, 2.0});
  EXPECT_THROW(t.validate_finite("x"), NumericError);
  EXPECT_NO_THROW(Tensor::from_values({2}, {1.0, 2.0}).validate_finite());
}

TEST(MatmulTest, IdentityLeavesOperandUnchanged) {
  Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from_values({2, 2}, {3, 4, 5, 6});
  EXPECT_EQ(matmul(eye, b).to_vector(), (std::vector<double>{3, 4, 5, 6}));
}

TEST(MatmulTest, RowTimesColumn) {
  Tensor a = Tensor::from_values({1, 2}, {1, 2});
  Tensor b = Tensor::from_values({2, 1}, {3, 4});
  Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(c.item(), 11.0);
}

TEST(MatmulTest, GradientOfSumWrtLeftOperand) {
  // d/da sum(a b) = b^T, confirmed by central differences (linear in a).
  Tensor a = Tensor::from_values({1, 2}, {1, 2}, DType::kFloat64);
  Tensor b = Tensor::from_values({2, 1}, {3, 4}, DType::kFloat64);
  a.requires_grad_();
  Tape tape;
  tape.backward(sum(matmul(a, b)));
  EXPECT_EQ(a.grad().to_vector(), (std::vector<double>{3, 4}));
}

TEST(MatmulTest, ShapeMismatchNamesBothShapes) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    (void)matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(SoftmaxTest, SymmetricInputIsUniform) {
  auto y = softmax(Tensor::from_values({2}, {0, 0}), 0).to_vector();
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(SoftmaxTest, LargeLogitDoesNotOverflow) {
  auto y = softmax(Tensor::from_values({2}, {1000, 0}), 0).to_vector();
  EXPECT_TRUE(std::isfinite(y[0]) && std::isfinite(y[1]));
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_LT(y[1], 1e-300);
}

TEST(SoftmaxTest, LogTwoGivesTwoThirds) {
  auto y = softmax(Tensor::from_values({2}, {std::log(2.0), 0}, DType::kFloat64), 0).to_vector();
  EXPECT_NEAR(y[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(y[1], 1.0 / 3.0, 1e-15);
}

TEST(SoftmaxTest, SlicesSumToOneOnRandomInputs) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({3, 5, 4}, rng, -5, 5, DType::kFloat32);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      Tensor y = softmax(x, axis);
      Tensor s = sum(y, axis);
      for (double v : s.to_vector()) EXPECT_NEAR(v, 1.0, 1e-6);
      for (double v : y.to_vector()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
      }
    }
  }
}

TEST(ElementwiseTest, ReluSigmoidMean) {
  EXPECT_EQ(relu(Tensor::from_values({2}, {-1, 2})).to_vector(), (std::vector<double>{0, 2}));
  EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0)).item(), 0.5);
  Tensor m = mean(Tensor::from_values({2, 2}, {1, 3, 5, 7}), 0);
  EXPECT_EQ(m.shape(), (Shape{2}));
  EXPECT_EQ(m.to_vector(), (std::vector<double>{3, 5}));
}

TEST(ElementwiseTest, NoImplicitBroadcasting) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3});
  EXPECT_THROW((void)add(a, b), ShapeError);
  EXPECT_THROW((void)mul(a, Tensor::zeros({3, 2})), ShapeError);
  // A single-element operand is a scalar.
  Tensor s = add(a, Tensor::scalar(2));
  EXPECT_EQ(s.shape(), (Shape{2, 3}));
  EXPECT_DOUBLE_EQ(s.at(5), 2.0);
  EXPECT_THROW((void)add(a, Tensor::zeros({2, 3}, DType::kFloat64)), ShapeError);
}

TEST(ShapeOpsTest, ConcatThenSliceRecoversParts) {
  std::mt19937_64 rng(11);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Shape sa{2, 3, 4};
    Shape sb{2, 3, 4};
    sb[axis] = 5;
    Tensor a = random_tensor(sa, rng);
    Tensor b = random_tensor(sb, rng);
    Tensor c = concat({a, b}, axis);
    EXPECT_EQ(slice(c, axis, 0, sa[axis]).to_vector(), a.to_vector());
    EXPECT_EQ(slice(c, axis, sa[axis], sb[axis]).to_vector(), b.to_vector());
  }
}

TEST(ShapeOpsTest, TransposeAndReshape) {
  Tensor x = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(transpose(x).to_vector(), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(reshape(x, {3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW((void)reshape(x, {4, 2}), ShapeError);
}

TEST(DeterminismTest, IdenticalInputsGiveBitwiseIdenticalOutputs) {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tensor a = random_tensor({8, 16}, rng, -1, 1, DType::kFloat32);
    Tensor b = random_tensor({16, 8}, rng, -1, 1, DType::kFloat32);
    return softmax(matmul(a, b), 1).to_vector();
  };
  EXPECT_EQ(run(), run());
}

TEST(MacCounterTest, CountsMatmulOnlyInsideScope) {
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({4, 5});
  (void)matmul(a, b);
  MacCounterScope counter;
  (void)matmul(a, b);
  (void)relu(a);
  EXPECT_EQ(counter.macs(), 60u);
}

}  // namespace
}  // namespace tamseg
