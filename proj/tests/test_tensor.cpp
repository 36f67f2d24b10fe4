#include <gtest/gtest.h>

#include <cmath>

#include "dcag/random.hpp"
#include "dcag/tensor.hpp"
#include "oracles.hpp"

namespace dcag {
namespace {

TEST(TensorTest, RejectsDataShapeMismatch) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_NO_THROW(Tensor({2, 3}, std::vector<double>(6)));
}

TEST(MatmulTest, IdentityLeavesMatrixUnchanged) {
  const Tensor a = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
  EXPECT_EQ(matmul(Tensor::identity(3), a), a);
}

TEST(MatmulTest, SmallProductMatchesHandExpansion) {
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  const Tensor b = Tensor::from_rows({{0, 1}, {1, 0}});
  const Tensor expected = Tensor::from_rows({{2, 1}, {4, 3}});
  EXPECT_EQ(oracle::naive_matmul(a, b), expected);
  EXPECT_EQ(matmul(a, b), expected);
}

TEST(MatmulTest, ZerosAnnihilate) {
  Rng rng(3);
  const Tensor out = matmul(Tensor({2, 3}), random_normal({3, 4}, rng));
  EXPECT_EQ(out, Tensor({2, 4}));
}

TEST(MatmulTest, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 5}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x5]"), std::string::npos);
  }
}

TEST(MatmulTest, AssociativeOnRandom16x16) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = random_normal({16, 16}, rng), b = random_normal({16, 16}, rng), c = random_normal({16, 16}, rng);
    const Tensor left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
    EXPECT_LE(max_abs_diff(left, right), 1e-9 * max_abs(left));
  }
}

TEST(MatmulTest, BitReproducible) {
  Rng r1(5), r2(5);
  const Tensor a = random_normal({7, 9}, r1), b = random_normal({9, 4}, r1);
  const Tensor a2 = random_normal({7, 9}, r2), b2 = random_normal({9, 4}, r2);
  EXPECT_TRUE(bitwise_equal(matmul(a, b), matmul(a2, b2)));
}

TEST(SoftmaxTest, EqualLogitsAreUniform) {
  const Tensor p = softmax_rows(Tensor::from_rows({{2.5, 2.5, 2.5}}));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(p(0, j), 1.0 / 3.0, 1e-15);
}

TEST(SoftmaxTest, LogTwoClosedForm) {
  const Tensor p = softmax_rows(Tensor::from_rows({{0.0, std::log(2.0)}}));
  EXPECT_NEAR(p(0, 0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(p(0, 1), 2.0 / 3.0, 1e-15);
}

TEST(SoftmaxTest, RowsSumToOneAndShiftInvariant) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_normal({6, 13}, rng, 4.0);
    const Tensor p = softmax_rows(x);
    Tensor shifted = x;
    for (std::size_t i = 0; i < 6; ++i) {
      const double c = rng.uniform(-50, 50);
      for (std::size_t j = 0; j < 13; ++j) shifted(i, j) += c;
    }
    const Tensor ps = softmax_rows(shifted);
    for (std::size_t i = 0; i < 6; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 13; ++j) {
        EXPECT_GE(p(i, j), 0.0);
        sum += p(i, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
    EXPECT_LE(max_abs_diff(p, ps), 1e-12);
  }
}

TEST(SoftmaxTest, EmptyRowIsDomainError) { EXPECT_THROW(softmax_rows(Tensor({3, 0})), DomainError); }

TEST(SoftmaxTest, NonFiniteInputIsDomainError) {
  EXPECT_THROW(softmax_rows(Tensor::from_rows({{0.0, NAN}})), DomainError);
}

TEST(MeanOverTokensTest, Examples) {
  EXPECT_EQ(mean_over_tokens(Tensor::from_rows({{3, -1, 2}})), Tensor::from_rows({{3, -1, 2}}));
  EXPECT_EQ(mean_over_tokens(Tensor::from_rows({{1, 0}, {0, 1}})), Tensor::from_rows({{0.5, 0.5}}));
  EXPECT_THROW(mean_over_tokens(Tensor({0, 4})), DomainError);
}

TEST(MeanOverTokensTest, ShiftAndLinearity) {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_normal({9, 5}, rng), y = random_normal({9, 5}, rng);
    const Tensor c = random_normal({1, 5}, rng);
    EXPECT_LE(max_abs_diff(mean_over_tokens(add_row(x, c)), add(mean_over_tokens(x), c)), 1e-12);
    const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3);
    EXPECT_LE(max_abs_diff(mean_over_tokens(axpby(a, x, b, y)), axpby(a, mean_over_tokens(x), b, mean_over_tokens(y))),
              1e-12);
  }
}

TEST(NormTest, Examples) {
  EXPECT_EQ(l2_norm(Tensor({4, 2})), 0.0);
  EXPECT_EQ(l2_norm(Tensor::from_rows({{3, 4}})), 5.0);
  EXPECT_EQ(rowwise_l2(Tensor::from_rows({{3, 4}, {0, 0}})), Tensor({2, 1}, {5.0, 0.0}));
}

TEST(TensorTest, SliceAndAssignRows) {
  Tensor x({4, 2, 2});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  const Tensor mid = x.slice_rows(1, 3);
  EXPECT_EQ(mid.shape(), (Shape{2, 2, 2}));
  EXPECT_EQ(mid[0], 4.0);
  Tensor y({4, 2, 2});
  y.assign_rows(1, mid);
  EXPECT_EQ(y.slice_rows(1, 3), mid);
  EXPECT_THROW(y.assign_rows(3, mid), ShapeError);
  EXPECT_THROW(x.slice_rows(2, 5), ShapeError);
}

TEST(TensorTest, BitwiseEqualSeesSignedZero) {
  EXPECT_TRUE(Tensor({1}, {0.0}) == Tensor({1}, {-0.0}));
  EXPECT_FALSE(bitwise_equal(Tensor({1}, {0.0}), Tensor({1}, {-0.0})));
}

}  // namespace
}  // namespace dcag
