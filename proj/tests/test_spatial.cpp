#include <random>

#include <gtest/gtest.h>

#include "sqar/spatial.hpp"

namespace {

using sqar::Matrix;
using sqar::SpatialWeights;
using sqar::Vector;

Vector random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
    return v;
}

TEST(BlockWeights, SmallCases) {
    const auto w12 = sqar::build_block_weight_matrix(1, 2);
    Matrix expected(2, 2);
    expected << 0, 1, 1, 0;
    EXPECT_EQ(w12.values(), expected);

    const auto w23 = sqar::build_block_weight_matrix(2, 3);
    ASSERT_EQ(w23.n(), 6);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            const double want = (i / 3 == j / 3 && i != j) ? 0.5 : 0.0;
            EXPECT_EQ(w23(i, j), want);
        }
    }
}

TEST(BlockWeights, ExampleSizeIsRowNormalizedAndSymmetric) {
    const auto w = sqar::build_block_weight_matrix(20, 4);
    ASSERT_EQ(w.n(), 80);
    EXPECT_TRUE(w.row_normalized());
    EXPECT_EQ(w.values(), w.values().transpose());
    for (Eigen::Index i = 0; i < 80; ++i) {
        EXPECT_EQ(w(i, i), 0.0);
        EXPECT_NEAR(w.values().row(i).sum(), 1.0, 1e-15);
    }
}

TEST(BlockWeights, PropertySweep) {
    for (int m1 = 1; m1 <= 5; ++m1) {
        for (int m2 = 2; m2 <= 6; ++m2) {
            const auto w = sqar::build_block_weight_matrix(m1, m2);
            EXPECT_EQ(w.n(), m1 * m2);
            EXPECT_TRUE(w.row_normalized());
            EXPECT_EQ(w.values(), w.values().transpose());
            EXPECT_EQ(w.values().diagonal().cwiseAbs().maxCoeff(), 0.0);
        }
    }
}

TEST(BlockWeights, RejectsBadSizes) {
    EXPECT_THROW(sqar::build_block_weight_matrix(1, 1), sqar::InvalidArgument);
    EXPECT_THROW(sqar::build_block_weight_matrix(0, 3), sqar::InvalidArgument);
}

TEST(Weights, Validation) {
    Matrix nonsquare(2, 3);
    nonsquare.setZero();
    EXPECT_THROW(SpatialWeights{nonsquare}, sqar::DimensionMismatch);
    Matrix diag = Matrix::Identity(2, 2);
    EXPECT_THROW(SpatialWeights{diag}, sqar::DataError);
    Matrix neg(2, 2);
    neg << 0, -1, 1, 0;
    EXPECT_THROW(SpatialWeights{neg}, sqar::DataError);
}

TEST(RowNormalize, Examples) {
    Matrix a(2, 2);
    a << 0, 2, 3, 0;
    const auto na = sqar::row_normalize(SpatialWeights(a));
    Matrix ea(2, 2);
    ea << 0, 1, 1, 0;
    EXPECT_EQ(na.values(), ea);
    EXPECT_TRUE(na.row_normalized());
    EXPECT_FALSE(SpatialWeights(a).row_normalized());

    EXPECT_EQ(sqar::row_normalize(na).values(), na.values());

    Matrix b(3, 3);
    b << 0, 1, 1, 0, 0, 0, 1, 0, 0;
    Matrix eb(3, 3);
    eb << 0, .5, .5, 0, 0, 0, 1, 0, 0;
    const auto nb = sqar::row_normalize(SpatialWeights(b));
    EXPECT_EQ(nb.values(), eb);
    EXPECT_TRUE(nb.row_normalized());
}

TEST(SpatialSolve, Examples) {
    const auto w = sqar::build_block_weight_matrix(1, 2);
    Vector b(2);
    b << 1, 1;
    EXPECT_EQ(sqar::solve_spatial_system(0.0, w, b), b);
    const Vector x = sqar::solve_spatial_system(0.5, w, b);
    EXPECT_NEAR(x(0), 2.0, 1e-14);
    EXPECT_NEAR(x(1), 2.0, 1e-14);
}

TEST(SpatialSolve, RoundTripRandomDraws) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> lam(-0.99, 0.99);
    const auto w = sqar::build_block_weight_matrix(2, 3);
    const auto w_big = sqar::build_block_weight_matrix(20, 4);
    for (int trial = 0; trial < 100; ++trial) {
        const auto& ww = trial % 2 == 0 ? w : w_big;
        const double l = trial == 0 ? 0.8 : lam(rng);
        const Vector b = random_vector(rng, ww.n(), 10.0);
        const Vector x = sqar::solve_spatial_system(l, ww, b);
        const Vector r = sqar::spatial_operator(l, ww) * x - b;
        EXPECT_LT(r.cwiseAbs().maxCoeff(), 1e-10 * (1.0 + b.cwiseAbs().maxCoeff()));
    }
}

TEST(SpatialSolve, LambdaGuard) {
    const auto w = sqar::build_block_weight_matrix(1, 3);
    const Vector b = Vector::Ones(3);
    EXPECT_THROW(sqar::solve_spatial_system(1.0, w, b), sqar::InvalidLambda);
    EXPECT_THROW(sqar::solve_spatial_system(-1.5, w, b), sqar::InvalidLambda);
    // I - 2W is invertible for this W (eigenvalues 1 and -1/2), so opting out works.
    const Vector x = sqar::solve_spatial_system(2.0, w, b, sqar::LambdaGuard::skip);
    EXPECT_LT((sqar::spatial_operator(2.0, w) * x - b).cwiseAbs().maxCoeff(), 1e-12);
    // lambda = 1 makes I - W singular (row sums one).
    EXPECT_THROW(sqar::solve_spatial_system(1.0, w, b, sqar::LambdaGuard::skip),
                 sqar::SingularSystem);
}

TEST(ReducedForm, NoSpatialFeedback) {
    std::mt19937_64 rng(4);
    const auto w = sqar::build_block_weight_matrix(2, 3);
    const Vector a = random_vector(rng, 6), bx = random_vector(rng, 6), e = random_vector(rng, 6);
    const Vector y = sqar::reduced_form_response(a, Vector::Zero(6), bx, e, w);
    EXPECT_EQ(y, a + bx + e);
    const Vector zero = sqar::reduced_form_response(Vector::Zero(6), Vector::Constant(6, 0.4),
                                                    Vector::Zero(6), Vector::Zero(6), w);
    EXPECT_EQ(zero.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ReducedForm, MatchesDenseInverse) {
    std::mt19937_64 rng(5);
    const auto w = sqar::build_block_weight_matrix(2, 3);
    const Vector a = random_vector(rng, 6), bx = random_vector(rng, 6), e = random_vector(rng, 6);
    const Vector y = sqar::reduced_form_response(a, Vector::Constant(6, 0.2), bx, e, w);
    const Matrix inv = (Matrix::Identity(6, 6) - 0.2 * w.values()).inverse();
    const Vector expected = inv * (a + bx + e);
    EXPECT_LT((y - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ReducedForm, HeterogeneousLambdaRoundTrip) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> lam(-0.9, 0.9);
    const auto w = sqar::build_block_weight_matrix(20, 4);
    for (int trial = 0; trial < 20; ++trial) {
        Vector l(80);
        for (Eigen::Index i = 0; i < 80; ++i) l(i) = lam(rng);
        const Vector a = random_vector(rng, 80), bx = random_vector(rng, 80),
                     e = random_vector(rng, 80);
        const Vector y = sqar::reduced_form_response(a, l, bx, e, w);
        const Vector back = y - l.cwiseProduct(w.values() * y) - a - bx;
        EXPECT_LT((back - e).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(ReducedForm, RejectsBadInput) {
    const auto w = sqar::build_block_weight_matrix(1, 3);
    EXPECT_THROW(sqar::reduced_form_response(Vector::Zero(3), Vector::Constant(3, 1.0),
                                             Vector::Zero(3), Vector::Zero(3), w),
                 sqar::InvalidLambda);
    EXPECT_THROW(sqar::reduced_form_response(Vector::Zero(2), Vector::Zero(3), Vector::Zero(3),
                                             Vector::Zero(3), w),
                 sqar::DimensionMismatch);
}

sqar::SqarDataset random_dataset(std::mt19937_64& rng, int m1, int m2, int p) {
    const auto w = sqar::build_block_weight_matrix(m1, m2);
    const Eigen::Index n = w.n();
    Matrix x(n, p);
    for (int j = 0; j < p; ++j) x.col(j) = random_vector(rng, n);
    return {random_vector(rng, n), x, w};
}

TEST(NoiseVariance, ZeroWhenResponseIsTheSignal) {
    std::mt19937_64 rng(7);
    auto data = random_dataset(rng, 5, 4, 2);
    Vector beta(2);
    beta << 0.7, -1.2;
    const Vector signal = sqar::solve_spatial_system(
        0.3, data.weights(), (data.x() * beta).array() + 1.5);
    const sqar::SqarDataset exact(signal, data.x(), data.weights());
    EXPECT_NEAR(sqar::estimate_noise_variance(1.5, 0.3, beta, exact), 0.0, 1e-24);
}

TEST(NoiseVariance, ZeroLambdaIsPlainResidualVariance) {
    std::mt19937_64 rng(8);
    auto data = random_dataset(rng, 5, 4, 2);
    Vector beta(2);
    beta << 0.2, 0.4;
    const Vector r = data.y() - (data.x() * beta).array().matrix() - Vector::Constant(20, 0.1);
    EXPECT_NEAR(sqar::estimate_noise_variance(0.1, 0.0, beta, data),
                r.squaredNorm() / 20.0, 1e-14);
}

// Sandwich form e' [A^{-1} A^{-T}]^{-1} e / n with e = Y - A^{-1}(alpha + X beta),
// every inverse formed explicitly.
TEST(NoiseVariance, AgreesWithSandwichOracle) {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> lam(-0.9, 0.9);
    for (int trial = 0; trial < 25; ++trial) {
        auto data = random_dataset(rng, 4, 5, 3);
        const double alpha = lam(rng) * 3.0;
        const double l = lam(rng);
        const Vector beta = random_vector(rng, 3);
        const Eigen::Index n = data.n();
        const Matrix a = Matrix::Identity(n, n) - l * data.weights().values();
        const Matrix ainv = a.inverse();
        const Vector mean = (data.x() * beta).array() + alpha;
        const Vector e = data.y() - ainv * mean;
        const double oracle =
            (e.transpose() * (ainv * ainv.transpose()).inverse() * e)(0, 0) /
            static_cast<double>(n);
        // Equivalently ||A Y - alpha - X beta||^2 / n.
        const double direct = (a * data.y() - mean).squaredNorm() / static_cast<double>(n);
        const double got = sqar::estimate_noise_variance(alpha, l, beta, data);
        EXPECT_NEAR(got, oracle, 1e-10 * oracle);
        EXPECT_NEAR(got, direct, 1e-10 * direct);
        EXPECT_GE(got, 0.0);
    }
}

TEST(Dataset, Validation) {
    const auto w = sqar::build_block_weight_matrix(1, 4);
    EXPECT_THROW(sqar::SqarDataset(Vector::Zero(4), Matrix::Zero(3, 1), w),
                 sqar::DimensionMismatch);
    EXPECT_THROW(sqar::SqarDataset(Vector::Zero(4), Matrix::Zero(4, 2), w), sqar::DataError);
    Vector y = Vector::Zero(4);
    y(1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(sqar::SqarDataset(y, Matrix::Zero(4, 1), w), sqar::DataError);
    EXPECT_NO_THROW(sqar::SqarDataset(Vector::Zero(4), Matrix::Zero(4, 1), w));
}

}  // namespace
