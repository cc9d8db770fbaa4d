#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "sqar/error.hpp"

namespace sqar {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Dense n x n matrix of neighbour weights. Diagonal is zero and every entry
/// is nonnegative; row_normalized() reports whether each nonzero row sums to 1.
class SpatialWeights {
public:
    SpatialWeights() = default;

    explicit SpatialWeights(Matrix values) : values_(std::move(values)) {
        if (values_.rows() != values_.cols()) {
            throw DimensionMismatch("spatial weights must be square, got " +
                                    std::to_string(values_.rows()) + "x" +
                                    std::to_string(values_.cols()));
        }
        if (values_.rows() == 0) throw InvalidArgument("spatial weights must be non-empty");
        for (Eigen::Index i = 0; i < values_.rows(); ++i) {
            for (Eigen::Index j = 0; j < values_.cols(); ++j) {
                const double v = values_(i, j);
                if (!std::isfinite(v)) throw DataError("non-finite spatial weight");
                if (v < 0.0) throw DataError("negative spatial weight at (" + std::to_string(i) +
                                             "," + std::to_string(j) + ")");
            }
            if (values_(i, i) != 0.0) {
                throw DataError("spatial weight diagonal must be zero (unit " + std::to_string(i) +
                                ")");
            }
        }
        row_normalized_ = check_row_normalized(values_);
    }

    Eigen::Index n() const noexcept { return values_.rows(); }
    const Matrix& values() const noexcept { return values_; }
    bool row_normalized() const noexcept { return row_normalized_; }

    double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

private:
    static bool check_row_normalized(const Matrix& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            const double s = m.row(i).sum();
            if (s != 0.0 && std::abs(s - 1.0) > 1e-12) return false;
        }
        return true;
    }

    Matrix values_;
    bool row_normalized_ = false;
};

/// Response, covariates (no intercept column) and the weights they live on.
class SqarDataset {
public:
    SqarDataset() = default;

    SqarDataset(Vector y, Matrix x, SpatialWeights weights)
        : y_(std::move(y)), x_(std::move(x)), weights_(std::move(weights)) {
        if (x_.rows() != y_.size()) {
            throw DimensionMismatch("x has " + std::to_string(x_.rows()) + " rows but y has " +
                                    std::to_string(y_.size()));
        }
        if (weights_.n() != y_.size()) {
            throw DimensionMismatch("weights are " + std::to_string(weights_.n()) +
                                    "x" + std::to_string(weights_.n()) + " but data has n=" +
                                    std::to_string(y_.size()));
        }
        if (y_.size() < x_.cols() + 3) {
            throw DataError("need n >= p + 3 observations (n=" + std::to_string(y_.size()) +
                            ", p=" + std::to_string(x_.cols()) + ")");
        }
        if (!y_.allFinite() || !x_.allFinite()) throw DataError("dataset has non-finite entries");
    }

    Eigen::Index n() const noexcept { return y_.size(); }
    Eigen::Index p() const noexcept { return x_.cols(); }
    const Vector& y() const noexcept { return y_; }
    const Matrix& x() const noexcept { return x_; }
    const SpatialWeights& weights() const noexcept { return weights_; }

    /// Spatial lag of the response, U = W Y.
    Vector spatial_lag() const { return weights_.values() * y_; }

private:
    Vector y_;
    Matrix x_;
    SpatialWeights weights_;
};

/// W = I_{m1} (x) B_{m2} with B = (J - I) / (m2 - 1).
inline SpatialWeights build_block_weight_matrix(int m1, int m2) {
    if (m1 < 1) throw InvalidArgument("m1 must be >= 1");
    if (m2 < 2) throw InvalidArgument("m2 must be >= 2");
    const Eigen::Index n = static_cast<Eigen::Index>(m1) * m2;
    const double off = 1.0 / static_cast<double>(m2 - 1);
    Matrix w = Matrix::Zero(n, n);
    for (int b = 0; b < m1; ++b) {
        const Eigen::Index base = static_cast<Eigen::Index>(b) * m2;
        for (int i = 0; i < m2; ++i) {
            for (int j = 0; j < m2; ++j) {
                if (i != j) w(base + i, base + j) = off;
            }
        }
    }
    return SpatialWeights(std::move(w));
}

inline SpatialWeights row_normalize(const SpatialWeights& w) {
    Matrix m = w.values();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double s = m.row(i).sum();
        if (s > 0.0) m.row(i) /= s;
    }
    return SpatialWeights(std::move(m));
}

enum class LambdaGuard { enforce, skip };

namespace detail {

inline void check_lambda(double lambda, LambdaGuard guard) {
    if (!std::isfinite(lambda)) throw InvalidLambda("spatial lag parameter is not finite");
    if (guard == LambdaGuard::enforce && std::abs(lambda) >= 1.0) {
        throw InvalidLambda("|lambda| must be < 1, got " + std::to_string(lambda));
    }
}

// Solves A x = b with partial-pivot LU plus one refinement step.
inline Vector solve_dense(const Matrix& a, const Vector& b) {
    Eigen::PartialPivLU<Matrix> lu(a);
    const double rcond = lu.rcond();
    if (!(rcond > 1e-12)) {
        throw SingularSystem("spatial system is numerically singular (rcond=" +
                             std::to_string(rcond) + ")");
    }
    Vector x = lu.solve(b);
    const Vector r = b - a * x;
    x += lu.solve(r);
    return x;
}

}  // namespace detail

/// I - lambda W.
inline Matrix spatial_operator(double lambda, const SpatialWeights& w) {
    return Matrix::Identity(w.n(), w.n()) - lambda * w.values();
}

/// Solves (I - lambda W) x = b.
inline Vector solve_spatial_system(double lambda, const SpatialWeights& w, const Vector& b,
                                   LambdaGuard guard = LambdaGuard::enforce) {
    detail::check_lambda(lambda, guard);
    if (b.size() != w.n()) throw DimensionMismatch("rhs length does not match weights");
    if (lambda == 0.0) return b;
    return detail::solve_dense(spatial_operator(lambda, w), b);
}

/// Y solving (I - diag(lambda) W) Y = alpha + beta_x + eps. Each entry is the
/// per-observation coefficient, so heterogeneous spatial lags are allowed.
inline Vector reduced_form_response(const Vector& alpha, const Vector& lambda,
                                    const Vector& beta_x, const Vector& eps,
                                    const SpatialWeights& w) {
    const Eigen::Index n = w.n();
    if (alpha.size() != n || lambda.size() != n || beta_x.size() != n || eps.size() != n) {
        throw DimensionMismatch("reduced_form_response inputs must all have length n");
    }
    for (Eigen::Index i = 0; i < n; ++i) detail::check_lambda(lambda(i), LambdaGuard::enforce);
    const Vector rhs = alpha + beta_x + eps;
    if ((lambda.array() == 0.0).all()) return rhs;
    const Matrix a = Matrix::Identity(n, n) - lambda.asDiagonal() * w.values();
    return detail::solve_dense(a, rhs);
}

/// sigma^2_k = ||(I - lambda_k W)(Y - P_k)||^2 / n with P_k = (I - lambda_k W)^{-1}(alpha_k + X beta_k).
inline double estimate_noise_variance(double alpha_k, double lambda_k, const Vector& beta_k,
                                      const SqarDataset& data,
                                      LambdaGuard guard = LambdaGuard::enforce) {
    if (beta_k.size() != data.p()) throw DimensionMismatch("beta length does not match p");
    const SpatialWeights& w = data.weights();
    const Vector mean_part = (data.x() * beta_k).array() + alpha_k;
    const Vector p_k = solve_spatial_system(lambda_k, w, mean_part, guard);
    const Vector diff = data.y() - p_k;
    const Vector resid = diff - lambda_k * (w.values() * diff);
    return resid.squaredNorm() / static_cast<double>(data.n());
}

}  // namespace sqar
