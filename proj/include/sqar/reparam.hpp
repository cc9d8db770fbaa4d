#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sqar/error.hpp"
#include "sqar/quantile_lp.hpp"

namespace sqar {

/// Strictly increasing quantile levels in (0, 1).
class QuantileGrid {
public:
    QuantileGrid() = default;

    explicit QuantileGrid(std::vector<double> taus) : taus_(std::move(taus)) {
        if (taus_.empty()) throw InvalidArgument("quantile grid is empty");
        for (std::size_t k = 0; k < taus_.size(); ++k) {
            if (!(taus_[k] > 0.0 && taus_[k] < 1.0)) {
                throw InvalidArgument("quantile level " + std::to_string(taus_[k]) +
                                      " is outside (0, 1)");
            }
            if (k > 0 && !(taus_[k] > taus_[k - 1])) {
                throw InvalidArgument("quantile levels must be strictly increasing");
            }
        }
    }

    /// {0.1, 0.2, ..., 0.9}.
    static QuantileGrid deciles() {
        std::vector<double> t;
        for (int k = 1; k <= 9; ++k) t.push_back(k / 10.0);
        return QuantileGrid(std::move(t));
    }

    Index size() const noexcept { return static_cast<Index>(taus_.size()); }
    double operator[](Index k) const { return taus_[static_cast<std::size_t>(k)]; }
    const std::vector<double>& taus() const noexcept { return taus_; }

private:
    std::vector<double> taus_;
};

/// Per-quantile coefficients: row k holds (alpha_k, lambda_k, beta_k).
struct CoefficientSheet {
    Vector alpha;
    Vector lambda;
    Matrix beta;  // K x p
    std::optional<Vector> sigma2;

    CoefficientSheet() = default;
    CoefficientSheet(Vector a, Vector l, Matrix b)
        : alpha(std::move(a)), lambda(std::move(l)), beta(std::move(b)) {
        if (alpha.size() != lambda.size() || beta.rows() != alpha.size()) {
            throw DimensionMismatch("coefficient sheet columns disagree in length");
        }
    }

    Index K() const noexcept { return alpha.size(); }
    Index p() const noexcept { return beta.cols(); }

    /// K x (p+1) table of (lambda_k, beta_k); column 0 is the spatial lag.
    Matrix slopes() const {
        Matrix s(K(), p() + 1);
        s.col(0) = lambda;
        s.rightCols(p()) = beta;
        return s;
    }

    static CoefficientSheet from_slopes(Vector alpha, const Matrix& slopes) {
        const Index p = slopes.cols() - 1;
        return {std::move(alpha), slopes.col(0), slopes.rightCols(p)};
    }

    /// (alpha_k, lambda_k, beta_k) as one vector.
    Vector row(Index k) const {
        Vector r(p() + 2);
        r(0) = alpha(k);
        r(1) = lambda(k);
        r.tail(p()) = beta.row(k).transpose();
        return r;
    }

    bool lambda_in_range() const { return (lambda.array().abs() < 1.0).all(); }
};

enum class Layout { fal, fas };

inline const char* to_string(Layout l) { return l == Layout::fal ? "FAL" : "FAS"; }

/// Reparameterized coefficient vector of length (p+2)K.
struct ThetaVector {
    Vector values;
    Layout layout = Layout::fal;
};

/// Coordinate positions inside a theta vector for given K and p.
///   FAL: (alpha_1..alpha_K, d_1, ..., d_K), d_k = (d_{k,0}, ..., d_{k,p}).
///   FAS: (d_(-2), alpha_1..alpha_K, d_(0), ..., d_(p)), d_(l) in R^{K-1}.
/// k is 0-based; difference(k, l) needs k >= 1 and level(l) is the tau_1 value.
class ThetaIndex {
public:
    ThetaIndex(Layout layout, Index K, Index p) : layout_(layout), K_(K), p_(p) {
        if (K < 1) throw InvalidArgument("need at least one quantile level");
        if (p < 0) throw InvalidArgument("negative predictor count");
    }

    Layout layout() const noexcept { return layout_; }
    Index K() const noexcept { return K_; }
    Index p() const noexcept { return p_; }
    Index size() const noexcept { return (p_ + 2) * K_; }

    Index intercept(Index k) const { return layout_ == Layout::fal ? k : p_ + 1 + k; }

    Index level(Index l) const { return layout_ == Layout::fal ? K_ + l : l; }

    Index difference(Index k, Index l) const {
        if (layout_ == Layout::fal) return K_ + k * (p_ + 1) + l;
        return p_ + 1 + K_ + l * (K_ - 1) + (k - 1);
    }

    /// Every interquantile difference coordinate, ordered by (k, l) for FAL
    /// and by (l, k) for FAS.
    std::vector<Index> differences() const {
        std::vector<Index> out;
        if (layout_ == Layout::fal) {
            for (Index k = 1; k < K_; ++k) {
                for (Index l = 0; l <= p_; ++l) out.push_back(difference(k, l));
            }
        } else {
            for (Index l = 0; l <= p_; ++l) {
                for (Index k = 1; k < K_; ++k) out.push_back(difference(k, l));
            }
        }
        return out;
    }

private:
    Layout layout_;
    Index K_;
    Index p_;
};

inline ThetaVector to_theta(const CoefficientSheet& sheet, Layout layout) {
    const Index K = sheet.K();
    const Index p = sheet.p();
    const ThetaIndex ix(layout, K, p);
    const Matrix s = sheet.slopes();
    Vector theta(ix.size());
    for (Index k = 0; k < K; ++k) theta(ix.intercept(k)) = sheet.alpha(k);
    for (Index l = 0; l <= p; ++l) {
        theta(ix.level(l)) = s(0, l);
        for (Index k = 1; k < K; ++k) theta(ix.difference(k, l)) = s(k, l) - s(k - 1, l);
    }
    return {theta, layout};
}

inline CoefficientSheet from_theta(const ThetaVector& theta, Index K, Index p) {
    const ThetaIndex ix(theta.layout, K, p);
    if (theta.values.size() != ix.size()) {
        throw DimensionMismatch("theta has length " + std::to_string(theta.values.size()) +
                                ", expected " + std::to_string(ix.size()));
    }
    Vector alpha(K);
    Matrix s(K, p + 1);
    for (Index k = 0; k < K; ++k) alpha(k) = theta.values(ix.intercept(k));
    for (Index l = 0; l <= p; ++l) {
        double acc = theta.values(ix.level(l));
        s(0, l) = acc;
        for (Index k = 1; k < K; ++k) {
            acc += theta.values(ix.difference(k, l));
            s(k, l) = acc;
        }
    }
    return CoefficientSheet::from_slopes(std::move(alpha), s);
}

/// Stacked design with row (k, i) equal to (1, u_hat(i, k), x_i) T_k, in the
/// coordinate order of the chosen layout. Rows are grouped by quantile.
inline CheckLossProblem build_joint_design(const Vector& y, const Matrix& x, const Matrix& u_hat,
                                           const QuantileGrid& grid, Layout layout) {
    const Index n = y.size();
    const Index p = x.cols();
    const Index K = grid.size();
    if (x.rows() != n || u_hat.rows() != n || u_hat.cols() != K) {
        throw DimensionMismatch("joint design inputs disagree in shape");
    }
    const ThetaIndex ix(layout, K, p);
    Matrix z = Matrix::Zero(K * n, ix.size());
    Vector response(K * n);
    Vector tau(K * n);
    for (Index k = 0; k < K; ++k) {
        for (Index i = 0; i < n; ++i) {
            const Index r = k * n + i;
            z(r, ix.intercept(k)) = 1.0;
            for (Index l = 0; l <= p; ++l) {
                const double c = l == 0 ? u_hat(i, k) : x(i, l - 1);
                z(r, ix.level(l)) = c;
                for (Index kk = 1; kk <= k; ++kk) z(r, ix.difference(kk, l)) = c;
            }
            response(r) = y(i);
            tau(r) = grid[k];
        }
    }
    return {std::move(z), std::move(response), std::move(tau)};
}

}  // namespace sqar
