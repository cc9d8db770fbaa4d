#include <random>

#include <gtest/gtest.h>

#include "sqar/reparam.hpp"

namespace {

using sqar::CoefficientSheet;
using sqar::Index;
using sqar::Layout;
using sqar::Matrix;
using sqar::QuantileGrid;
using sqar::ThetaIndex;
using sqar::Vector;

CoefficientSheet random_sheet(std::mt19937_64& rng, Index K, Index p) {
    std::normal_distribution<double> normal(0.0, 2.0);
    Vector a(K), l(K);
    Matrix b(K, p);
    for (Index k = 0; k < K; ++k) {
        a(k) = normal(rng);
        l(k) = normal(rng);
        for (Index j = 0; j < p; ++j) b(k, j) = normal(rng);
    }
    return {a, l, b};
}

QuantileGrid even_grid(Index K) {
    std::vector<double> t;
    for (Index k = 1; k <= K; ++k) t.push_back(static_cast<double>(k) / static_cast<double>(K + 1));
    return QuantileGrid(t);
}

TEST(QuantileGrid, Validation) {
    EXPECT_EQ(QuantileGrid::deciles().size(), 9);
    EXPECT_DOUBLE_EQ(QuantileGrid::deciles()[4], 0.5);
    EXPECT_THROW(QuantileGrid(std::vector<double>{}), sqar::InvalidArgument);
    EXPECT_THROW(QuantileGrid({0.0, 0.5}), sqar::InvalidArgument);
    EXPECT_THROW(QuantileGrid({0.5, 1.0}), sqar::InvalidArgument);
    EXPECT_THROW(QuantileGrid({0.5, 0.5}), sqar::InvalidArgument);
    EXPECT_THROW(QuantileGrid({0.6, 0.5}), sqar::InvalidArgument);
    EXPECT_NO_THROW(QuantileGrid({0.25}));
}

TEST(Reparam, RoundTripBothLayouts) {
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<Index> kd(1, 9), pd(1, 3);
    for (int trial = 0; trial < 100; ++trial) {
        const Index K = kd(rng), p = pd(rng);
        const CoefficientSheet s = random_sheet(rng, K, p);
        for (Layout layout : {Layout::fal, Layout::fas}) {
            const auto theta = sqar::to_theta(s, layout);
            ASSERT_EQ(theta.values.size(), (p + 2) * K);
            const CoefficientSheet back = sqar::from_theta(theta, K, p);
            EXPECT_LE((back.alpha - s.alpha).cwiseAbs().maxCoeff(), 1e-12);
            EXPECT_LE((back.lambda - s.lambda).cwiseAbs().maxCoeff(), 1e-12);
            EXPECT_LE((back.beta - s.beta).cwiseAbs().maxCoeff(), 1e-12);
        }
    }
}

TEST(Reparam, IndexLayoutsArePermutations) {
    for (Index K : {1, 2, 5, 9}) {
        for (Index p : {1, 2}) {
            for (Layout layout : {Layout::fal, Layout::fas}) {
                const ThetaIndex ix(layout, K, p);
                std::vector<int> hit(static_cast<std::size_t>(ix.size()), 0);
                for (Index k = 0; k < K; ++k) ++hit[static_cast<std::size_t>(ix.intercept(k))];
                for (Index l = 0; l <= p; ++l) ++hit[static_cast<std::size_t>(ix.level(l))];
                for (Index j : ix.differences()) ++hit[static_cast<std::size_t>(j)];
                for (int h : hit) EXPECT_EQ(h, 1);
            }
        }
    }
}

TEST(Reparam, FalLayoutPositions) {
    const ThetaIndex ix(Layout::fal, 3, 1);
    EXPECT_EQ(ix.intercept(2), 2);
    EXPECT_EQ(ix.level(0), 3);
    EXPECT_EQ(ix.level(1), 4);
    EXPECT_EQ(ix.difference(1, 0), 5);
    EXPECT_EQ(ix.difference(2, 1), 8);
    const ThetaIndex fs(Layout::fas, 3, 1);
    EXPECT_EQ(fs.level(1), 1);
    EXPECT_EQ(fs.intercept(0), 2);
    EXPECT_EQ(fs.difference(1, 0), 5);
    EXPECT_EQ(fs.difference(2, 1), 8);
}

TEST(Reparam, FromThetaRejectsWrongLength) {
    sqar::ThetaVector t{Vector::Zero(5), Layout::fal};
    EXPECT_THROW(sqar::from_theta(t, 2, 1), sqar::DimensionMismatch);
}

TEST(JointDesign, RowIdentity) {
    std::mt19937_64 rng(32);
    std::normal_distribution<double> normal;
    std::uniform_int_distribution<Index> kd(2, 9), pd(1, 2), nd(3, 12);
    for (int trial = 0; trial < 100; ++trial) {
        const Index K = kd(rng), p = pd(rng), n = nd(rng);
        const QuantileGrid grid = even_grid(K);
        Vector y(n);
        Matrix x(n, p), u(n, K);
        for (Index i = 0; i < n; ++i) {
            y(i) = normal(rng);
            for (Index j = 0; j < p; ++j) x(i, j) = normal(rng);
            for (Index k = 0; k < K; ++k) u(i, k) = normal(rng);
        }
        for (Layout layout : {Layout::fal, Layout::fas}) {
            const auto prob = sqar::build_joint_design(y, x, u, grid, layout);
            ASSERT_EQ(prob.rows(), K * n);
            Vector theta(prob.cols());
            for (Index j = 0; j < theta.size(); ++j) theta(j) = normal(rng);
            const CoefficientSheet s = sqar::from_theta({theta, layout}, K, p);
            const Vector fitted = prob.design * theta;
            for (Index k = 0; k < K; ++k) {
                for (Index i = 0; i < n; ++i) {
                    const double direct = s.alpha(k) + s.lambda(k) * u(i, k) + x.row(i).dot(s.beta.row(k));
                    EXPECT_NEAR(fitted(k * n + i), direct, 1e-12 * (1.0 + std::abs(direct)));
                    EXPECT_DOUBLE_EQ(prob.response(k * n + i), y(i));
                    EXPECT_DOUBLE_EQ(prob.tau(k * n + i), grid[k]);
                }
            }
        }
    }
}

TEST(JointDesign, LayoutsGiveSameFittedValues) {
    std::mt19937_64 rng(33);
    std::normal_distribution<double> normal;
    const Index K = 4, p = 2, n = 7;
    const QuantileGrid grid = even_grid(K);
    Vector y(n);
    Matrix x(n, p), u(n, K);
    for (Index i = 0; i < n; ++i) {
        y(i) = normal(rng);
        for (Index j = 0; j < p; ++j) x(i, j) = normal(rng);
        for (Index k = 0; k < K; ++k) u(i, k) = normal(rng);
    }
    const CoefficientSheet s = random_sheet(rng, K, p);
    const auto a = sqar::build_joint_design(y, x, u, grid, Layout::fal);
    const auto b = sqar::build_joint_design(y, x, u, grid, Layout::fas);
    const Vector fa = a.design * sqar::to_theta(s, Layout::fal).values;
    const Vector fb = b.design * sqar::to_theta(s, Layout::fas).values;
    EXPECT_LE((fa - fb).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(JointDesign, TwoQuantileCumulativeStructure) {
    Vector y(1);
    y << 5.0;
    Matrix x(1, 1);
    x << 2.0;
    Matrix u(1, 2);
    u << 0.3, 0.7;
    const auto prob = sqar::build_joint_design(y, x, u, QuantileGrid({0.25, 0.75}), Layout::fal);
    // columns: alpha_1, alpha_2, d_{1,0}, d_{1,1}, d_{2,0}, d_{2,1}
    Matrix expect(2, 6);
    expect << 1, 0, 0.3, 2, 0, 0,
              0, 1, 0.7, 2, 0.7, 2;
    EXPECT_EQ(prob.design, expect);
}

TEST(JointDesign, ShapeMismatch) {
    EXPECT_THROW(sqar::build_joint_design(Vector::Zero(3), Matrix::Zero(3, 1), Matrix::Zero(3, 1),
                                          QuantileGrid({0.2, 0.8}), Layout::fal),
                 sqar::DimensionMismatch);
}

}  // namespace
