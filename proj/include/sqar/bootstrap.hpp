#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "sqar/distributions.hpp"
#include "sqar/estimator.hpp"

namespace sqar {

struct EqualityTestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    int df = 0;
    int replicates = 0;        // bootstrap draws that produced a fit
    bool degenerate = false;   // contrast covariance inverted by pseudo-inverse
};

namespace detail {

/// Type-7 sample quantile of sorted values.
inline double sorted_quantile(const std::vector<double>& v, double p) {
    const double h = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline Vector ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    Vector r(static_cast<Index>(v.size()));
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j);
        for (std::size_t t = i; t <= j; ++t) r(static_cast<Index>(order[t])) = mid;
        i = j + 1;
    }
    return r;
}

}  // namespace detail

/// Covariance of bootstrap draws from normalized interquartile ranges and
/// Spearman correlations mapped to the Gaussian scale, 2 sin(pi rho / 6).
/// A few wild resamples (weakly identified spatial lag) do not inflate it.
inline Matrix robust_covariance(const std::vector<Vector>& draws) {
    const Index d = draws.front().size();
    const std::size_t B = draws.size();
    Vector scale(d);
    std::vector<Vector> rank(static_cast<std::size_t>(d));
    for (Index j = 0; j < d; ++j) {
        std::vector<double> v(B);
        for (std::size_t b = 0; b < B; ++b) v[b] = draws[b](j);
        rank[static_cast<std::size_t>(j)] = detail::ranks(v);
        std::sort(v.begin(), v.end());
        scale(j) = (detail::sorted_quantile(v, 0.75) - detail::sorted_quantile(v, 0.25)) / 1.3489795003921634;
    }
    Matrix cov(d, d);
    for (Index i = 0; i < d; ++i) {
        cov(i, i) = scale(i) * scale(i);
        for (Index j = 0; j < i; ++j) {
            const Vector a = rank[static_cast<std::size_t>(i)].array() - rank[static_cast<std::size_t>(i)].mean();
            const Vector b = rank[static_cast<std::size_t>(j)].array() - rank[static_cast<std::size_t>(j)].mean();
            const double den = std::sqrt(a.squaredNorm() * b.squaredNorm());
            const double rho = den > 0.0 ? a.dot(b) / den : 0.0;
            const double r = 2.0 * std::sin(3.14159265358979323846 * rho / 6.0);
            cov(i, j) = cov(j, i) = r * scale(i) * scale(j);
        }
    }
    return cov;
}

/// Wald test of equal coefficients across the quantiles in `subset`.
/// column 0 is the spatial lag, column l >= 1 the l-th predictor slope.
/// Covariance of the adjacent contrasts comes from a pairs bootstrap of the
/// two-stage RQ fit (robust_covariance); the statistic is referred to
/// chi-square(|subset| - 1).
inline EqualityTestResult bootstrap_equality_test(const SqarDataset& data,
                                                  const QuantileGrid& grid, Index column,
                                                  const std::vector<Index>& subset, int B = 500,
                                                  std::uint64_t seed = 1) {
    if (subset.size() < 2) throw InvalidArgument("equality test needs at least two quantiles");
    if (B < 100) throw InvalidArgument("equality test needs B >= 100 bootstrap draws");
    if (column < 0 || column > data.p()) throw InvalidArgument("coefficient column out of range");
    std::vector<double> taus;
    for (std::size_t j = 0; j < subset.size(); ++j) {
        const Index k = subset[j];
        if (k < 0 || k >= grid.size()) throw InvalidArgument("quantile index out of range");
        if (j > 0 && k <= subset[j - 1]) {
            throw InvalidArgument("quantile subset must be strictly increasing");
        }
        taus.push_back(grid[k]);
    }
    const QuantileGrid sub(taus);
    const Index m = sub.size();

    auto estimate = [&](const IvSample& s) {
        const FirstStageResult fs = first_stage_iv(s, sub);
        return Vector(rq_sheet(s, fs, sub).slopes().col(column));
    };
    auto contrasts = [&](const Vector& c) {
        Vector d(m - 1);
        for (Index k = 1; k < m; ++k) d(k - 1) = c(k) - c(k - 1);
        return d;
    };

    const IvSample full = make_sample(data);
    const Vector d_hat = contrasts(estimate(full));

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Index> pick(0, full.n() - 1);
    std::vector<Vector> draws;
    std::vector<Index> idx(static_cast<std::size_t>(full.n()));
    for (int b = 0; b < B; ++b) {
        for (auto& i : idx) i = pick(rng);
        try {
            draws.push_back(contrasts(estimate(full.rows(idx))));
        } catch (const NumericalError&) {
        }
    }

    EqualityTestResult out;
    out.df = static_cast<int>(m - 1);
    out.replicates = static_cast<int>(draws.size());
    if (draws.size() < 2) throw NumericalError("bootstrap produced fewer than two fits");

    const Matrix cov = robust_covariance(draws);
    Eigen::LDLT<Matrix> ldlt(cov);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-12) {
        out.statistic = d_hat.dot(ldlt.solve(d_hat));
    } else {
        out.degenerate = true;
        out.statistic = d_hat.dot(cov.completeOrthogonalDecomposition().pseudoInverse() * d_hat);
    }
    out.p_value = chi_squared_upper_tail(static_cast<double>(out.df), out.statistic);
    return out;
}

}  // namespace sqar
