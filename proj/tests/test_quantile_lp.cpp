#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "sqar/quantile_lp.hpp"

namespace {

using sqar::CheckLossProblem;
using sqar::Index;
using sqar::Matrix;
using sqar::PenaltySpec;
using sqar::Vector;

CheckLossProblem random_problem(std::mt19937_64& rng, Index n, Index q, Index blocks) {
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif(0.05, 0.95);
    Matrix z(n * blocks, q);
    Vector y(n * blocks);
    Vector tau(n * blocks);
    for (Index k = 0; k < blocks; ++k) {
        const double t = unif(rng);
        for (Index i = 0; i < n; ++i) {
            const Index r = k * n + i;
            z(r, 0) = 1.0;
            for (Index j = 1; j < q; ++j) z(r, j) = normal(rng);
            y(r) = 1.0 + z.row(r).sum() + normal(rng);
            tau(r) = t;
        }
    }
    return {z, y, tau};
}

TEST(CheckLoss, Values) {
    EXPECT_DOUBLE_EQ(sqar::check_loss(0.5, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(sqar::check_loss(0.5, 1.0), 0.5);
    EXPECT_DOUBLE_EQ(sqar::check_loss(0.1, -1.0), 0.9);
    EXPECT_THROW(sqar::check_loss(0.0, 1.0), sqar::InvalidArgument);
    EXPECT_THROW(sqar::check_loss(1.0, 1.0), sqar::InvalidArgument);
}

TEST(CheckLoss, ConvexOnRandomTriples) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> r(-5, 5), s(0, 1), t(0.01, 0.99);
    for (int trial = 0; trial < 2000; ++trial) {
        const double tau = t(rng), r1 = r(rng), r2 = r(rng), w = s(rng);
        const double lhs = sqar::check_loss(tau, w * r1 + (1 - w) * r2);
        const double rhs = w * sqar::check_loss(tau, r1) + (1 - w) * sqar::check_loss(tau, r2);
        EXPECT_LE(lhs, rhs + 1e-12);
        EXPECT_GE(sqar::check_loss(tau, r1), 0.0);
    }
}

// rho(r - s) - rho(r) = -s (tau - 1[r < 0]) + int_0^s (1[r <= u] - 1[r <= 0]) du
TEST(CheckLoss, KnightDecomposition) {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> r(-3, 3), t(0.01, 0.99);
    for (int trial = 0; trial < 500; ++trial) {
        const double tau = t(rng), rr = r(rng), ss = r(rng);
        const double lhs = sqar::check_loss(tau, rr - ss) - sqar::check_loss(tau, rr);
        // Midpoint quadrature of the indicator difference; exact up to the
        // single cell containing the jump at u = r.
        const int cells = 200000;
        const double h = ss / cells;
        double integral = 0.0;
        for (int c = 0; c < cells; ++c) {
            const double u = (c + 0.5) * h;
            integral += ((rr <= u ? 1.0 : 0.0) - (rr <= 0.0 ? 1.0 : 0.0)) * h;
        }
        const double rhs = -ss * (tau - (rr < 0.0 ? 1.0 : 0.0)) + integral;
        EXPECT_NEAR(lhs, rhs, 2.0 * std::abs(h) + 1e-12);
    }
}

TEST(Solve, InterceptOnlyMedian) {
    Matrix z = Matrix::Ones(3, 1);
    Vector y(3);
    y << 1, 2, 3;
    auto sol = sqar::solve(CheckLossProblem::single(z, y, 0.5));
    EXPECT_NEAR(sol.theta(0), 2.0, 1e-9);
    EXPECT_NEAR(sol.objective, 1.0, 1e-9);
    EXPECT_EQ(sol.status, sqar::LpStatus::optimal);
}

TEST(Solve, InterceptOnlyLowQuantile) {
    Matrix z = Matrix::Ones(3, 1);
    Vector y(3);
    y << 1, 2, 3;
    const auto problem = CheckLossProblem::single(z, y, 0.1);
    // Grid oracle over the order statistics.
    double best = 1e300, arg = 0;
    for (double c : {1.0, 2.0, 3.0}) {
        const double v = problem.loss(Vector::Constant(1, c));
        if (v < best) best = v, arg = c;
    }
    EXPECT_DOUBLE_EQ(arg, 1.0);
    auto sol = sqar::solve(problem);
    EXPECT_NEAR(sol.theta(0), 1.0, 1e-9);
    EXPECT_NEAR(sol.objective, best, 1e-9);
}

TEST(Solve, MatchesBruteForceOnRandomInstances) {
    std::mt19937_64 rng(2024);
    sqar::QuantileLpSolver solver;
    for (int trial = 0; trial < 50; ++trial) {
        const auto problem = random_problem(rng, 10, 2, 1);
        const auto lp = solver.solve(problem);
        const auto oracle = sqar::brute_force_oracle(problem);
        EXPECT_NEAR(lp.objective, oracle.objective, 1e-8 * (1.0 + oracle.objective));
        EXPECT_LT(lp.duality_gap, 1e-8 * (1.0 + lp.objective));
    }
}

TEST(Solve, ZeroBudgetPinsPenalizedCoordinate) {
    // Two quantile blocks sharing X; theta = (a1, a2, b1, d) with slope b1 + d in block 2.
    std::mt19937_64 rng(5);
    std::normal_distribution<double> normal;
    const Index n = 30;
    Matrix z = Matrix::Zero(2 * n, 4);
    Vector y(2 * n), tau(2 * n);
    Vector x(n), yy(n);
    for (Index i = 0; i < n; ++i) {
        x(i) = normal(rng);
        yy(i) = 1 + 2 * x(i) + normal(rng);
    }
    for (Index k = 0; k < 2; ++k) {
        for (Index i = 0; i < n; ++i) {
            const Index r = k * n + i;
            z(r, k) = 1.0;
            z(r, 2) = x(i);
            z(r, 3) = k == 1 ? x(i) : 0.0;
            y(r) = yy(i);
            tau(r) = k == 0 ? 0.3 : 0.7;
        }
    }
    const CheckLossProblem problem(z, y, tau);
    const auto pen = PenaltySpec::weighted_l1({{3, 1.0}}, 0.0);
    const auto sol = sqar::solve(problem, pen);
    EXPECT_EQ(sol.theta(3), 0.0);

    // Oracle: eliminate d and solve the composite fit directly.
    const CheckLossProblem reduced(z.leftCols(3), y, tau);
    const auto ref = sqar::solve(reduced);
    EXPECT_NEAR(sol.objective, ref.objective, 1e-9 * (1 + ref.objective));
    for (Index j = 0; j < 3; ++j) EXPECT_NEAR(sol.theta(j), ref.theta(j), 1e-7);

    // Same constraint through the sup-norm route.
    const auto sup = sqar::solve(problem, PenaltySpec::group_supnorm({{{3}, 2.0}}, 0.0));
    EXPECT_EQ(sup.theta(3), 0.0);
    EXPECT_NEAR(sup.objective, ref.objective, 1e-9 * (1 + ref.objective));
}

TEST(Solve, KktCertificateUnpenalized) {
    std::mt19937_64 rng(99);
    sqar::QuantileLpSolver solver;
    for (int trial = 0; trial < 20; ++trial) {
        const auto problem = random_problem(rng, 40, 3, 2);
        const auto sol = solver.solve(problem);
        const Vector r = problem.response - problem.design * sol.theta;
        // Subgradient from nonzero residuals must be cancelled by the zero-residual rows,
        // each contributing a multiplier in [tau - 1, tau].
        Vector g = Vector::Zero(problem.cols());
        std::vector<Index> zero_rows;
        for (Index i = 0; i < r.size(); ++i) {
            if (std::abs(r(i)) < 1e-9) {
                zero_rows.push_back(i);
            } else {
                g += (problem.tau(i) - (r(i) < 0 ? 1.0 : 0.0)) * problem.design.row(i).transpose();
            }
        }
        ASSERT_GE(zero_rows.size(), static_cast<std::size_t>(problem.cols()));
        // Solve sum_z a_i z_i = -g on the zero rows (least squares), check a_i bounds.
        Matrix zr(problem.cols(), static_cast<Index>(zero_rows.size()));
        for (std::size_t k = 0; k < zero_rows.size(); ++k) {
            zr.col(static_cast<Index>(k)) = problem.design.row(zero_rows[k]).transpose();
        }
        const Vector a = zr.completeOrthogonalDecomposition().solve(-g);
        EXPECT_LT((zr * a + g).cwiseAbs().maxCoeff(), 1e-7);
        for (std::size_t k = 0; k < zero_rows.size(); ++k) {
            const double tau = problem.tau(zero_rows[k]);
            EXPECT_GE(a(static_cast<Index>(k)), tau - 1.0 - 1e-7);
            EXPECT_LE(a(static_cast<Index>(k)), tau + 1e-7);
        }
    }
}

TEST(Solve, MonotoneInBudgetAndInactiveRecovery) {
    std::mt19937_64 rng(7);
    const auto problem = random_problem(rng, 30, 3, 2);
    sqar::QuantileLpSolver solver;
    const auto free_fit = solver.solve(problem);
    const double needed = std::abs(free_fit.theta(1)) + 2.0 * std::abs(free_fit.theta(2));
    double previous = 1e300;
    for (int g = 0; g < 10; ++g) {
        const double t = needed * g / 9.0;
        const auto pen = PenaltySpec::weighted_l1({{1, 1.0}, {2, 2.0}}, t);
        const auto sol = solver.solve(problem, pen);
        EXPECT_LE(sol.objective, previous + 1e-9 * (1 + previous));
        EXPECT_LE(pen.evaluate(sol.theta), t + 1e-8);
        previous = sol.objective;
    }
    const auto loose = solver.solve(problem, PenaltySpec::weighted_l1({{1, 1.0}, {2, 2.0}}, needed * 1.5));
    EXPECT_EQ(loose.status, sqar::LpStatus::budget_inactive);
    for (Index j = 0; j < 3; ++j) EXPECT_NEAR(loose.theta(j), free_fit.theta(j), 1e-6);
}

TEST(Solve, SupNormRespectsBudget) {
    std::mt19937_64 rng(8);
    const auto problem = random_problem(rng, 30, 3, 1);
    sqar::QuantileLpSolver solver;
    const auto pen = PenaltySpec::group_supnorm({{{1, 2}, 1.5}}, 0.3);
    const auto sol = solver.solve(problem, pen);
    EXPECT_LE(pen.evaluate(sol.theta), 0.3 + 1e-8);
    EXPECT_NEAR(pen.evaluate(sol.theta), 0.3, 1e-7);  // active at the optimum
}

TEST(Penalty, Validation) {
    EXPECT_THROW(PenaltySpec::weighted_l1({{0, -1.0}}, 1.0).validate(2), sqar::InvalidArgument);
    EXPECT_THROW(PenaltySpec::weighted_l1({{5, 1.0}}, 1.0).validate(2), sqar::InvalidArgument);
    EXPECT_THROW(PenaltySpec::weighted_l1({{1, 1.0}}, -1.0).validate(2), sqar::InvalidBudget);
    EXPECT_THROW(PenaltySpec::group_supnorm({{{0, 1}, 1.0}, {{1}, 1.0}}, 1.0).validate(2),
                 sqar::InvalidArgument);
}

TEST(BruteForce, ConstantResponseAndSingleRow) {
    Matrix z(5, 2);
    z.col(0).setOnes();
    z.col(1) << 1, 2, 3, 4, 5;
    const auto sol = sqar::brute_force_oracle(CheckLossProblem::single(z, Vector::Constant(5, 4.0), 0.3));
    EXPECT_NEAR(sol.objective, 0.0, 1e-12);
    EXPECT_NEAR(sol.theta(0), 4.0, 1e-12);
    EXPECT_NEAR(sol.theta(1), 0.0, 1e-12);

    const auto one = sqar::brute_force_oracle(
        CheckLossProblem::single(Matrix::Ones(1, 1), Vector::Constant(1, 2.5), 0.5));
    EXPECT_DOUBLE_EQ(one.theta(0), 2.5);
    EXPECT_DOUBLE_EQ(one.objective, 0.0);
}

TEST(BruteForce, RejectsLargeProblems) {
    std::mt19937_64 rng(1);
    EXPECT_THROW(sqar::brute_force_oracle(random_problem(rng, 15, 2, 1)), sqar::TooLarge);
    EXPECT_THROW(sqar::brute_force_oracle(random_problem(rng, 10, 4, 1)), sqar::TooLarge);
}

}  // namespace
