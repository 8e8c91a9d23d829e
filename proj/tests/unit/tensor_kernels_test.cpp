#include <danil/kernels.hpp>

#include <gtest/gtest.h>

#include <cmath>

#include "support/oracles.hpp"

using namespace danil;

TEST(Tensor, RejectsDataLengthMismatch) {
    EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, ScalarHasRankZeroAndOneElement) {
    const auto s = Tensor::scalar(3.5);
    EXPECT_EQ(s.rank(), 0u);
    EXPECT_EQ(s.size(), 1u);
    EXPECT_EQ(s.item(), 3.5);
}

TEST(Kernels, ScalarBroadcastOnly) {
    const Tensor a(Shape{2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(kernels::add(a, Tensor::scalar(1)).values(), (std::vector<double>{2, 3, 4, 5}));
    EXPECT_EQ(kernels::sub(Tensor::scalar(1), a).values(), (std::vector<double>{0, -1, -2, -3}));
    try {
        kernels::add(a, Tensor(Shape{2}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("[2, 2]"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("[2]"), std::string::npos);
    }
}

TEST(Kernels, MatmulShapeErrorNamesBothShapes) {
    try {
        kernels::matmul(Tensor(Shape{2, 3}), Tensor(Shape{2, 3}));
        FAIL();
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2, 3] and [2, 3]"), std::string::npos) << msg;
    }
}

TEST(Kernels, PermuteAndExpand) {
    const Tensor a(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(kernels::permute(a, {1, 0}).values(), (std::vector<double>{1, 4, 2, 5, 3, 6}));
    const Tensor row(Shape{1, 3}, {1, 2, 3});
    EXPECT_EQ(kernels::expand(row, Shape{2, 3}).values(), (std::vector<double>{1, 2, 3, 1, 2, 3}));
    EXPECT_EQ(kernels::sum_keep(a, 0).values(), (std::vector<double>{5, 7, 9}));
    EXPECT_EQ(kernels::sum_keep(a, 1).values(), (std::vector<double>{6, 15}));
}

TEST(Kernels, SoftmaxIsStableForLargeLogits) {
    const auto s = kernels::softmax(Tensor::vector({1000.0, 1000.0}), 0);
    EXPECT_DOUBLE_EQ(s[0], 0.5);
    EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(Kernels, Conv2dMatchesNaiveLoops) {
    SplitMix64 rng(11);
    struct Case {
        std::size_t c, h, w, o, k, stride, pad;
    };
    for (const auto& cs : {Case{1, 5, 5, 1, 3, 1, 0}, Case{2, 6, 5, 3, 3, 2, 1}, Case{3, 4, 4, 2, 2, 1, 2},
                           Case{1, 7, 7, 2, 3, 3, 0}}) {
        const auto x = oracle::random_tensor({cs.c, cs.h, cs.w}, rng);
        const auto k = oracle::random_tensor({cs.o, cs.c, cs.k, cs.k}, rng);
        const auto got = kernels::conv2d(x, k, cs.stride, cs.pad);
        const auto want = oracle::naive_conv2d(x, k, cs.stride, cs.pad);
        ASSERT_EQ(got.shape(), want.shape());
        EXPECT_LT(oracle::max_abs_diff(got, want), 1e-13);
    }
}

TEST(Kernels, Im2ColAndCol2ImAreAdjoint) {
    // <im2col(x), y> == <x, col2im(y)>
    SplitMix64 rng(3);
    const auto x = oracle::random_tensor({2, 2, 5, 4}, rng);
    const auto cols = kernels::im2col(x, 3, 2, 2, 1);
    const auto y = oracle::random_tensor(cols.shape(), rng);
    const auto back = kernels::col2im(y, x.shape(), 3, 2, 2, 1);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < cols.size(); ++i) lhs += cols[i] * y[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
    EXPECT_NEAR(lhs, rhs, 1e-12);
}

TEST(Kernels, ConvKernelMustFitPaddedInput) {
    EXPECT_THROW(kernels::conv2d(Tensor(Shape{1, 2, 2}), Tensor(Shape{1, 1, 3, 3}), 1, 0), ShapeError);
    EXPECT_NO_THROW(kernels::conv2d(Tensor(Shape{1, 2, 2}), Tensor(Shape{1, 1, 3, 3}), 1, 1));
}

TEST(Kernels, MaxPoolTieGoesToLowestIndex) {
    const Tensor a(Shape{1, 2, 2}, {5, 5, 5, 5});
    const auto r = kernels::maxpool2d(a, 2);
    EXPECT_EQ(r.value.item(), 5.0);
    EXPECT_EQ((*r.argmax)[0], 0u);
}

TEST(Kernels, ReciprocalShiftRejectsNonPositiveEps) {
    EXPECT_THROW(kernels::reciprocal_shift(Tensor::scalar(1), 0.0), DomainError);
    EXPECT_THROW(kernels::reciprocal_shift(Tensor::scalar(1), -1e-4), DomainError);
    EXPECT_DOUBLE_EQ(kernels::reciprocal_shift(Tensor::scalar(1), 1e-4).item(), 1.0 / (1.0 + 1e-4));
}
