// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "multilora/lora.hpp"
#include "multilora/matrix.hpp"
#include "multilora/rng.hpp"
#include "test_util.hpp"

using namespace multilora;
using testutil::random_delta;
using testutil::random_matrix;

namespace {

// Scalar triple-loop product in double precision, independent of matmul.
std::vector<double> oracle_matmul(const Matrix& lhs, const Matrix& rhs) {
    std::vector<double> out(lhs.rows() * rhs.cols(), 0.0);
    for (std::size_t i = 0; i < lhs.rows(); ++i) {
        for (std::size_t k = 0; k < lhs.cols(); ++k) {
            for (std::size_t j = 0; j < rhs.cols(); ++j) {
                out[i * rhs.cols() + j] +=
                    static_cast<double>(lhs(i, k)) * static_cast<double>(rhs(k, j));
            }
        }
    }
    return out;
}

// Dense (W + (alpha/rank) * B * A) * x in double precision.
std::vector<double> oracle_dense_forward(const Matrix& x, const Matrix* w,
                                         const LoraLayerDelta& delta) {
    const std::size_t d_out = delta.d_out();
    const std::size_t d_in = delta.d_in();
    const double scale = static_cast<double>(delta.alpha) / delta.rank;
    std::vector<double> dense(d_out * d_in, 0.0);
    for (std::size_t i = 0; i < d_out; ++i) {
        for (std::size_t j = 0; j < d_in; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < delta.rank; ++k) {
                acc += static_cast<double>(delta.b(i, k)) * static_cast<double>(delta.a(k, j));
            }
            dense[i * d_in + j] = scale * acc + (w != nullptr ? (*w)(i, j) : 0.0);
        }
    }
    std::vector<double> y(d_out, 0.0);
    for (std::size_t i = 0; i < d_out; ++i) {
        for (std::size_t j = 0; j < d_in; ++j) {
            y[i] += dense[i * d_in + j] * static_cast<double>(x(j, 0));
        }
    }
    return y;
}

}  // namespace

TEST(Matrix, ConstructorRejectsBadLength) {
    EXPECT_THROW(Matrix(2, 2, {1.0f, 2.0f}), Error);
}

TEST(Matrix, ConstructorRejectsNonFinite) {
    EXPECT_THROW(Matrix(1, 2, {1.0f, std::nanf("")}), Error);
    EXPECT_THROW(Matrix(1, 1, {INFINITY}), Error);
}

TEST(Matmul, IdentityPassesThrough) {
    Matrix identity = Matrix::from_rows({{1, 0}, {0, 1}});
    Matrix x = Matrix::from_rows({{3}, {4}});
    EXPECT_EQ(matmul(identity, x), x);
}

TEST(Matmul, ZeroAnnihilates) {
    Matrix zero(2, 2);
    Matrix x = Matrix::from_rows({{5, 1, 2}, {-6, 0, 3}});
    Matrix out = matmul(zero, x);
    for (float v : out.data()) {
        EXPECT_EQ(v, 0.0f);
    }
}

TEST(Matmul, MatchesTripleLoopOracle) {
    Matrix lhs = Matrix::from_rows({{1, 2}, {3, 4}});
    Matrix rhs = Matrix::from_rows({{5}, {6}});
    Matrix out = matmul(lhs, rhs);
    // Frozen from the oracle: [[17], [39]].
    EXPECT_EQ(out(0, 0), 17.0f);
    EXPECT_EQ(out(1, 0), 39.0f);
    auto expected = oracle_matmul(lhs, rhs);
    EXPECT_EQ(out(0, 0), static_cast<float>(expected[0]));
    EXPECT_EQ(out(1, 0), static_cast<float>(expected[1]));
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
    Matrix a(2, 3);
    Matrix b(2, 3);
    try {
        matmul(a, b);
        FAIL() << "expected shape error";
    } catch (const Error& err) {
        EXPECT_EQ(err.kind(), ErrorKind::ShapeMismatch);
        EXPECT_NE(std::string(err.what()).find("2x3"), std::string::npos);
    }
}

TEST(Matmul, AssociativeAtTolerance) {
    SplitMix64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix a = random_matrix(rng, 8, 8);
        Matrix b = random_matrix(rng, 8, 8);
        Matrix c = random_matrix(rng, 8, 8);
        Matrix left = matmul(matmul(a, b), c);
        Matrix right = matmul(a, matmul(b, c));
        for (std::size_t k = 0; k < left.size(); ++k) {
            EXPECT_NEAR(left.data()[k], right.data()[k], 1e-4);
        }
    }
}

TEST(LoraDelta, ZeroBGivesExactZeros) {
    LoraLayerDelta delta(Matrix::from_rows({{0.5f, -1, 2}}), Matrix(3, 1), 1.0f, 1);
    Matrix y = lora_delta_apply(Matrix::column({1, 2, 3}), delta);
    for (float v : y.data()) {
        EXPECT_EQ(v, 0.0f);
    }
}

TEST(LoraDelta, MatchesDenseOracle) {
    LoraLayerDelta delta(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{2}, {0}}), 1.0f, 1);
    Matrix x = Matrix::column({3, 4});
    Matrix y = lora_delta_apply(x, delta);
    // Frozen from the dense (alpha/r) * B * A oracle: [6, 0].
    EXPECT_EQ(y(0, 0), 6.0f);
    EXPECT_EQ(y(1, 0), 0.0f);
    auto expected = oracle_dense_forward(x, nullptr, delta);
    EXPECT_EQ(y(0, 0), static_cast<float>(expected[0]));
    EXPECT_EQ(y(1, 0), static_cast<float>(expected[1]));
}

TEST(LoraDelta, LinearInAlpha) {
    LoraLayerDelta delta(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{2}, {0}}), 2.0f, 1);
    Matrix y = lora_delta_apply(Matrix::column({3, 4}), delta);
    EXPECT_EQ(y(0, 0), 12.0f);
    EXPECT_EQ(y(1, 0), 0.0f);

    SplitMix64 rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        std::size_t d = 1 + rng.next_below(16);
        std::uint32_t rank = 1 + static_cast<std::uint32_t>(rng.next_below(std::min<std::size_t>(d, 4)));
        float alpha = static_cast<float>(0.25 + rng.next_unit() * 2.0);
        Matrix a = random_matrix(rng, rank, d);
        Matrix b = random_matrix(rng, d, rank);
        Matrix x = random_matrix(rng, d, 1);
        Matrix once = lora_delta_apply(x, LoraLayerDelta(a, b, alpha, rank));
        Matrix twice = lora_delta_apply(x, LoraLayerDelta(a, b, 2.0f * alpha, rank));
        for (std::size_t k = 0; k < once.size(); ++k) {
            EXPECT_NEAR(twice.data()[k], 2.0f * once.data()[k],
                        1e-6 * std::abs(2.0f * once.data()[k]) + 1e-30);
        }
    }
}

TEST(LoraDelta, DimensionMismatchThrows) {
    LoraLayerDelta delta(Matrix(1, 2), Matrix(2, 1), 1.0f, 1);
    EXPECT_THROW(lora_delta_apply(Matrix::column({1, 2, 3}), delta), Error);
}

TEST(LoraForward, ZeroDeltaIsBitwiseBase) {
    Matrix w = Matrix::from_rows({{1, 0}, {0, 1}});
    LoraLayerDelta zero_b(Matrix::from_rows({{0.3f, -0.7f}}), Matrix(2, 1), 1.0f, 1);
    Matrix x = Matrix::column({3, 4});
    EXPECT_EQ(lora_forward(x, w, zero_b), matmul(w, x));

    Matrix ones = Matrix::from_rows({{1, 1}, {1, 1}});
    Matrix y = lora_forward(Matrix::column({1, 1}), ones, zero_b);
    EXPECT_EQ(y(0, 0), 2.0f);
    EXPECT_EQ(y(1, 0), 2.0f);
}

TEST(LoraForward, MatchesDenseOracle) {
    Matrix w = Matrix::from_rows({{1, 0}, {0, 1}});
    LoraLayerDelta delta(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{2}, {0}}), 1.0f, 1);
    Matrix x = Matrix::column({3, 4});
    Matrix y = lora_forward(x, w, delta);
    // Frozen from the dense (W + scale * B * A) * x oracle: [9, 4].
    EXPECT_EQ(y(0, 0), 9.0f);
    EXPECT_EQ(y(1, 0), 4.0f);
}

TEST(LoraForward, RandomSweepAgainstDenseOracle) {
    SplitMix64 rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t d_in = 1 + rng.next_below(32);
        std::size_t d_out = 1 + rng.next_below(32);
        std::uint32_t max_rank =
            static_cast<std::uint32_t>(std::min({d_in, d_out, std::size_t{4}}));
        std::uint32_t rank = 1 + static_cast<std::uint32_t>(rng.next_below(max_rank));
        float alpha = static_cast<float>(0.25 + rng.next_unit() * 3.75);
        LoraLayerDelta delta = random_delta(rng, d_in, d_out, rank, alpha);
        Matrix w = random_matrix(rng, d_out, d_in);
        Matrix x = random_matrix(rng, d_in, 1);
        Matrix y = lora_forward(x, w, delta);
        auto expected = oracle_dense_forward(x, &w, delta);
        for (std::size_t i = 0; i < d_out; ++i) {
            EXPECT_NEAR(y(i, 0), expected[i], 1e-5) << "trial " << trial << " row " << i;
        }
    }
}

TEST(MergeWeights, ZeroBReturnsInputBitwise) {
    SplitMix64 rng(41);
    Matrix w = random_matrix(rng, 5, 7);
    LoraLayerDelta zero_b(random_matrix(rng, 2, 7), Matrix(5, 2), 1.5f, 2);
    EXPECT_EQ(merge_weights(w, zero_b), w);
    EXPECT_EQ(unmerge_weights(w, zero_b), w);
}

TEST(MergeWeights, MatchesDenseOracle) {
    Matrix w = Matrix::from_rows({{1, 0}, {0, 1}});
    LoraLayerDelta delta(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{2}, {0}}), 1.0f, 1);
    Matrix merged = merge_weights(w, delta);
    // Frozen from the dense product oracle: [[3, 0], [0, 1]].
    EXPECT_EQ(merged, Matrix::from_rows({{3, 0}, {0, 1}}));

    // Merging then forwarding agrees with the explicit pathway.
    Matrix via_merge = matmul(merged, Matrix::column({3, 4}));
    EXPECT_EQ(via_merge(0, 0), 9.0f);
    EXPECT_EQ(via_merge(1, 0), 4.0f);
}

TEST(MergeWeights, RoundTripBounded) {
    Matrix w = Matrix::from_rows({{1, 0}, {0, 1}});
    LoraLayerDelta delta(Matrix::from_rows({{1, 0}}), Matrix::from_rows({{2}, {0}}), 1.0f, 1);
    Matrix back = unmerge_weights(merge_weights(w, delta), delta);
    for (std::size_t k = 0; k < back.size(); ++k) {
        EXPECT_NEAR(back.data()[k], w.data()[k], 1e-6);
    }

    SplitMix64 rng(51);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t d_in = 1 + rng.next_below(16);
        std::size_t d_out = 1 + rng.next_below(16);
        std::uint32_t max_rank =
            static_cast<std::uint32_t>(std::min({d_in, d_out, std::size_t{4}}));
        std::uint32_t rank = 1 + static_cast<std::uint32_t>(rng.next_below(max_rank));
        LoraLayerDelta delta = random_delta(rng, d_in, d_out, rank,
                                            static_cast<float>(0.25 + rng.next_unit() * 3.75));
        Matrix orig = random_matrix(rng, d_out, d_in);
        Matrix back2 = unmerge_weights(merge_weights(orig, delta), delta);
        for (std::size_t k = 0; k < back2.size(); ++k) {
            EXPECT_NEAR(back2.data()[k], orig.data()[k], 1e-5);
        }
    }
}

TEST(LoraLayerDelta, InvariantsEnforced) {
    EXPECT_THROW(LoraLayerDelta(Matrix(2, 3), Matrix(3, 1), 1.0f, 1), Error);  // a.rows != rank
    EXPECT_THROW(LoraLayerDelta(Matrix(1, 3), Matrix(3, 2), 1.0f, 1), Error);  // b.cols != rank
    EXPECT_THROW(LoraLayerDelta(Matrix(3, 2), Matrix(4, 3), 1.0f, 3), Error);  // rank > d_in
    EXPECT_THROW(LoraLayerDelta(Matrix(1, 3), Matrix(3, 1), 0.0f, 1), Error);  // alpha <= 0
}
