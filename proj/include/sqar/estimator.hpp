#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sqar/error.hpp"
#include "sqar/parallel.hpp"
#include "sqar/quantile_lp.hpp"
#include "sqar/reparam.hpp"
#include "sqar/spatial.hpp"

namespace sqar {

enum class Method { rq, fl, fal, fs, fas, sar2sls };
enum class Criterion { aic, bic };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::rq: return "RQ";
        case Method::fl: return "FL";
        case Method::fal: return "FAL";
        case Method::fs: return "FS";
        case Method::fas: return "FAS";
        case Method::sar2sls: return "SAR2SLS";
    }
    return "?";
}

inline const char* to_string(Criterion c) { return c == Criterion::aic ? "AIC" : "BIC"; }

namespace detail {

inline std::string lower(std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

}  // namespace detail

inline Method parse_method(const std::string& name) {
    const std::string s = detail::lower(name);
    if (s == "rq") return Method::rq;
    if (s == "fl") return Method::fl;
    if (s == "fal") return Method::fal;
    if (s == "fs") return Method::fs;
    if (s == "fas") return Method::fas;
    if (s == "sar2sls" || s == "2sls") return Method::sar2sls;
    throw InvalidArgument("unknown method '" + name + "'");
}

inline Criterion parse_criterion(const std::string& name) {
    const std::string s = detail::lower(name);
    if (s == "aic") return Criterion::aic;
    if (s == "bic") return Criterion::bic;
    throw InvalidArgument("unknown criterion '" + name + "'");
}

inline bool is_fused(Method m) {
    return m == Method::fl || m == Method::fal || m == Method::fs || m == Method::fas;
}

inline bool is_adaptive(Method m) { return m == Method::fal || m == Method::fas; }

inline Layout layout_for(Method m) {
    return (m == Method::fs || m == Method::fas) ? Layout::fas : Layout::fal;
}

/// Largest meaningful budget: (K-1)(p+1) for the lasso penalties, p+1 for sup-norm.
inline double t_max(Method m, Index K, Index p) {
    if (!is_fused(m)) throw InvalidArgument("t_max is defined for fused methods only");
    return layout_for(m) == Layout::fal ? static_cast<double>((K - 1) * (p + 1))
                                        : static_cast<double>(p + 1);
}

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kFusionTolerance = 1e-6;

struct TuningTrace {
    Criterion criterion = Criterion::bic;
    std::vector<double> grid;
    std::vector<double> loss;
    std::vector<int> edf;
    std::vector<double> aic;
    std::vector<double> bic;
    std::size_t chosen = 0;
};

struct FitResult {
    Method method = Method::rq;
    QuantileGrid grid;
    CoefficientSheet sheet;
    BoolMatrix fused_mask;       // (K-1) x (p+1)
    Vector quantile_loss;        // sum_i rho_tau_k(residual) per k
    std::optional<double> chosen_t;
    std::optional<TuningTrace> trace;
    std::vector<std::string> warnings;
};

/// |s_{k,l} - s_{k-1,l}| < tol on the slope table (spatial lag first).
inline BoolMatrix fused_mask(const CoefficientSheet& sheet, double tol = kFusionTolerance) {
    const Matrix s = sheet.slopes();
    const Index K = s.rows();
    BoolMatrix mask(std::max<Index>(K - 1, 0), s.cols());
    for (Index k = 1; k < K; ++k) {
        for (Index l = 0; l < s.cols(); ++l) mask(k - 1, l) = std::abs(s(k, l) - s(k - 1, l)) < tol;
    }
    return mask;
}

/// Nonzero unique slope values: per column, runs split where a difference
/// reaches tol, counting runs whose level is nonzero at tol.
inline int edf(const CoefficientSheet& sheet, double tol = kFusionTolerance) {
    const Matrix s = sheet.slopes();
    int total = 0;
    for (Index l = 0; l < s.cols(); ++l) {
        Index start = 0;
        for (Index k = 1; k <= s.rows(); ++k) {
            if (k == s.rows() || std::abs(s(k, l) - s(k - 1, l)) >= tol) {
                if (std::abs(s(start, l)) >= tol) ++total;
                start = k;
            }
        }
    }
    return total;
}

inline int edf(const FitResult& fit, double tol = kFusionTolerance) { return edf(fit.sheet, tol); }

/// Rows of an IV regression: response, covariates, spatial lag U = WY and
/// instruments V = [1, X, WX]. Resampling rows keeps each unit's own lags.
struct IvSample {
    Vector y;
    Matrix x;
    Vector u;
    Matrix v;

    Index n() const noexcept { return y.size(); }
    Index p() const noexcept { return x.cols(); }

    IvSample rows(const std::vector<Index>& idx) const {
        IvSample out;
        const Index m = static_cast<Index>(idx.size());
        out.y.resize(m);
        out.x.resize(m, x.cols());
        out.u.resize(m);
        out.v.resize(m, v.cols());
        for (Index r = 0; r < m; ++r) {
            const Index i = idx[static_cast<std::size_t>(r)];
            out.y(r) = y(i);
            out.x.row(r) = x.row(i);
            out.u(r) = u(i);
            out.v.row(r) = v.row(i);
        }
        return out;
    }
};

/// V = [1, X, WX].
inline Matrix build_instruments(const SqarDataset& data) {
    const Index n = data.n();
    const Index p = data.p();
    Matrix v(n, 2 * p + 1);
    v.col(0).setOnes();
    v.middleCols(1, p) = data.x();
    v.rightCols(p) = data.weights().values() * data.x();
    return v;
}

inline IvSample make_sample(const SqarDataset& data) {
    return {data.y(), data.x(), data.spatial_lag(), build_instruments(data)};
}

namespace detail {

inline Vector least_squares(const Matrix& a, const Vector& y, const char* what) {
    const Matrix gram = a.transpose() * a;
    Eigen::LDLT<Matrix> ldlt(gram);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-12)) {
        throw RankDeficient(std::string(what) + " Gram matrix is numerically singular");
    }
    return ldlt.solve(a.transpose() * y);
}

inline Matrix second_stage_design(const Vector& u_hat, const Matrix& x) {
    Matrix d(x.rows(), x.cols() + 2);
    d.col(0).setOnes();
    d.col(1) = u_hat;
    d.rightCols(x.cols()) = x;
    return d;
}

inline LpSolution checked(LpSolution s) {
    if (s.status == LpStatus::max_iter) {
        throw MaxIterations("linear program did not converge within " +
                            std::to_string(s.iterations) + " iterations");
    }
    return s;
}

inline Vector quantile_losses(const IvSample& s, const Matrix& u_hat, const QuantileGrid& grid,
                              const CoefficientSheet& sheet) {
    Vector out(grid.size());
    for (Index k = 0; k < grid.size(); ++k) {
        const Vector fitted = (s.x * sheet.beta.row(k).transpose()).array() + sheet.alpha(k) +
                              sheet.lambda(k) * u_hat.col(k).array();
        const Vector r = s.y - fitted;
        double total = 0.0;
        for (Index i = 0; i < r.size(); ++i) total += check_loss(grid[k], r(i));
        out(k) = total;
    }
    return out;
}

inline void attach_variance(FitResult& fit, const SqarDataset& data) {
    const Index K = fit.sheet.K();
    Vector s2(K);
    for (Index k = 0; k < K; ++k) {
        s2(k) = estimate_noise_variance(fit.sheet.alpha(k), fit.sheet.lambda(k),
                                        fit.sheet.beta.row(k).transpose(), data,
                                        LambdaGuard::skip);
    }
    fit.sheet.sigma2 = std::move(s2);
    if (!fit.sheet.lambda_in_range()) {
        fit.warnings.push_back("estimated spatial lag outside (-1, 1) at some quantile");
    }
}

}  // namespace detail

/// Two-stage least squares: OLS of WY on V, then OLS of Y on [1, U_hat, X].
inline CoefficientSheet fit_sar_2sls(const SqarDataset& data) {
    const IvSample s = make_sample(data);
    const Vector pi = detail::least_squares(s.v, s.u, "first-stage");
    const Vector u_hat = s.v * pi;
    const Vector coef = detail::least_squares(detail::second_stage_design(u_hat, s.x), s.y,
                                              "second-stage");
    Vector alpha(1), lambda(1);
    alpha(0) = coef(0);
    lambda(0) = coef(1);
    Matrix beta = coef.tail(s.p()).transpose();
    CoefficientSheet sheet(alpha, lambda, beta);
    Vector s2(1);
    s2(0) = estimate_noise_variance(alpha(0), lambda(0), beta.row(0).transpose(), data,
                                    LambdaGuard::skip);
    sheet.sigma2 = s2;
    return sheet;
}

struct FirstStageResult {
    Matrix pi;     // (2p+1) x K
    Matrix u_hat;  // n x K, equal to V pi
};

inline FirstStageResult first_stage_iv(const IvSample& s, const QuantileGrid& grid) {
    QuantileLpSolver solver;
    FirstStageResult out;
    out.pi.resize(s.v.cols(), grid.size());
    for (Index k = 0; k < grid.size(); ++k) {
        const auto sol = detail::checked(solver.solve(CheckLossProblem::single(s.v, s.u, grid[k])));
        out.pi.col(k) = sol.theta;
    }
    out.u_hat = s.v * out.pi;
    return out;
}

inline FirstStageResult first_stage_iv(const SqarDataset& data, const QuantileGrid& grid) {
    return first_stage_iv(make_sample(data), grid);
}

/// Separate second-stage quantile regressions of Y on [1, U_hat_k, X].
inline CoefficientSheet rq_sheet(const IvSample& s, const FirstStageResult& fs,
                                 const QuantileGrid& grid) {
    QuantileLpSolver solver;
    const Index K = grid.size();
    Vector alpha(K), lambda(K);
    Matrix beta(K, s.p());
    for (Index k = 0; k < K; ++k) {
        const Matrix d = detail::second_stage_design(fs.u_hat.col(k), s.x);
        const auto sol = detail::checked(solver.solve(CheckLossProblem::single(d, s.y, grid[k])));
        alpha(k) = sol.theta(0);
        lambda(k) = sol.theta(1);
        beta.row(k) = sol.theta.tail(s.p()).transpose();
    }
    return {alpha, lambda, beta};
}

inline FitResult fit_rq(const SqarDataset& data, const QuantileGrid& grid) {
    const IvSample s = make_sample(data);
    const FirstStageResult fs = first_stage_iv(s, grid);
    FitResult out;
    out.method = Method::rq;
    out.grid = grid;
    out.sheet = rq_sheet(s, fs, grid);
    out.fused_mask = fused_mask(out.sheet);
    out.quantile_loss = detail::quantile_losses(s, fs.u_hat, grid, out.sheet);
    detail::attach_variance(out, data);
    return out;
}

namespace detail {

inline double clamp_denominator(double d) { return std::max(std::abs(d), 1e-8); }

}  // namespace detail

/// 1 / |s_{k,l} - s_{k-1,l}| for k = 2..K (row k-2), l = 0..p.
inline Matrix adaptive_weights_fal(const CoefficientSheet& initial) {
    const Matrix s = initial.slopes();
    Matrix w(std::max<Index>(s.rows() - 1, 0), s.cols());
    for (Index k = 1; k < s.rows(); ++k) {
        for (Index l = 0; l < s.cols(); ++l) {
            w(k - 1, l) = 1.0 / detail::clamp_denominator(s(k, l) - s(k - 1, l));
        }
    }
    return w;
}

/// 1 / max_k |s_{k,l} - s_{k-1,l}| per slope column.
inline Vector adaptive_weights_fas(const CoefficientSheet& initial) {
    const Matrix s = initial.slopes();
    Vector w(s.cols());
    for (Index l = 0; l < s.cols(); ++l) {
        double mx = 0.0;
        for (Index k = 1; k < s.rows(); ++k) mx = std::max(mx, std::abs(s(k, l) - s(k - 1, l)));
        w(l) = 1.0 / detail::clamp_denominator(mx);
    }
    return w;
}

/// Joint penalized fit for one method on one dataset. Construction runs the
/// first stage and the initial RQ fit once; fit(t) is const and thread-safe.
class FusedEstimator {
public:
    FusedEstimator(const SqarDataset& data, QuantileGrid grid, Method method,
                   std::optional<CoefficientSheet> initial = std::nullopt)
        : data_(data), grid_(std::move(grid)), method_(method), sample_(make_sample(data)) {
        if (!is_fused(method_)) throw InvalidArgument("FusedEstimator needs FL, FAL, FS or FAS");
        if (grid_.size() < 2) throw InvalidArgument("fusion penalties need at least two quantiles");
        first_stage_ = first_stage_iv(sample_, grid_);
        initial_ = initial ? *initial : rq_sheet(sample_, first_stage_, grid_);
        if (initial_.K() != grid_.size() || initial_.p() != data.p()) {
            throw DimensionMismatch("initial sheet does not match grid and predictors");
        }
        problem_ = build_joint_design(sample_.y, sample_.x, first_stage_.u_hat, grid_,
                                      layout_for(method_));
        build_weights();
    }

    Method method() const noexcept { return method_; }
    const QuantileGrid& grid() const noexcept { return grid_; }
    const FirstStageResult& first_stage() const noexcept { return first_stage_; }
    const CoefficientSheet& initial() const noexcept { return initial_; }
    const CheckLossProblem& problem() const noexcept { return problem_; }
    Index n() const noexcept { return sample_.n(); }
    double t_max() const { return sqar::t_max(method_, grid_.size(), sample_.p()); }

    PenaltySpec penalty(double t) const {
        if (!(t >= 0.0) || t > t_max() * (1.0 + 1e-12)) {
            throw InvalidBudget("budget t=" + std::to_string(t) + " outside [0, " +
                                std::to_string(t_max()) + "]");
        }
        if (layout_for(method_) == Layout::fal) return PenaltySpec::weighted_l1(coords_, t);
        return PenaltySpec::group_supnorm(groups_, t);
    }

    FitResult fit(double t) const {
        QuantileLpSolver solver;
        const auto sol = detail::checked(solver.solve(problem_, penalty(t)));
        FitResult out;
        out.method = method_;
        out.grid = grid_;
        out.sheet = from_theta({sol.theta, layout_for(method_)}, grid_.size(), sample_.p());
        out.fused_mask = fused_mask(out.sheet);
        out.quantile_loss = detail::quantile_losses(sample_, first_stage_.u_hat, grid_, out.sheet);
        out.chosen_t = t;
        detail::attach_variance(out, data_);
        return out;
    }

private:
    void build_weights() {
        const Index K = grid_.size();
        const Index p = sample_.p();
        const ThetaIndex ix(layout_for(method_), K, p);
        if (ix.layout() == Layout::fal) {
            const Matrix w = is_adaptive(method_) ? adaptive_weights_fal(initial_)
                                                  : Matrix::Ones(K - 1, p + 1);
            for (Index k = 1; k < K; ++k) {
                for (Index l = 0; l <= p; ++l) coords_.push_back({ix.difference(k, l), w(k - 1, l)});
            }
        } else {
            const Vector w = is_adaptive(method_) ? adaptive_weights_fas(initial_)
                                                  : Vector::Ones(p + 1);
            for (Index l = 0; l <= p; ++l) {
                CoordinateGroup g{{}, w(l)};
                for (Index k = 1; k < K; ++k) g.indices.push_back(ix.difference(k, l));
                groups_.push_back(std::move(g));
            }
        }
    }

    SqarDataset data_;
    QuantileGrid grid_;
    Method method_;
    IvSample sample_;
    FirstStageResult first_stage_;
    CoefficientSheet initial_;
    CheckLossProblem problem_;
    std::vector<WeightedCoordinate> coords_;
    std::vector<CoordinateGroup> groups_;
};

inline FitResult fit_fused(const SqarDataset& data, const QuantileGrid& grid, Method method,
                           double t) {
    return FusedEstimator(data, grid, method).fit(t);
}

namespace detail {

inline double log_loss(const Vector& quantile_loss) {
    double total = 0.0;
    for (Index k = 0; k < quantile_loss.size(); ++k) {
        total += std::log(std::max(quantile_loss(k), std::numeric_limits<double>::min()));
    }
    return total;
}

}  // namespace detail

/// Evaluates AIC and BIC over grid_size equally spaced budgets in [0, t_max]
/// and returns the fit at the criterion's minimizer (earliest t on ties).
inline FitResult tune(const FusedEstimator& est, Criterion criterion, int grid_size = 50,
                      int threads = 1) {
    if (grid_size < 2) throw InvalidArgument("tuning grid needs at least two points");
    const double top = est.t_max();
    const auto g = static_cast<std::size_t>(grid_size);
    std::vector<FitResult> fits(g);
    std::vector<double> ts(g);
    for (std::size_t j = 0; j < g; ++j) {
        ts[j] = j + 1 == g ? top : top * static_cast<double>(j) / static_cast<double>(g - 1);
    }
    parallel_for(g, threads, [&](std::size_t j) { fits[j] = est.fit(ts[j]); });

    const double n = static_cast<double>(est.n());
    TuningTrace trace;
    trace.criterion = criterion;
    trace.grid = ts;
    std::size_t best = 0;
    double best_value = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < g; ++j) {
        const double loss = detail::log_loss(fits[j].quantile_loss);
        const int e = edf(fits[j]);
        const double aic = loss + e / n;
        const double bic = loss + std::log(n) * e / (2.0 * n);
        trace.loss.push_back(loss);
        trace.edf.push_back(e);
        trace.aic.push_back(aic);
        trace.bic.push_back(bic);
        const double value = criterion == Criterion::aic ? aic : bic;
        if (value < best_value) {
            best_value = value;
            best = j;
        }
    }
    trace.chosen = best;
    FitResult out = std::move(fits[best]);
    out.trace = std::move(trace);
    return out;
}

inline FitResult tune(const SqarDataset& data, const QuantileGrid& grid, Method method,
                      Criterion criterion, int grid_size = 50, int threads = 1) {
    return tune(FusedEstimator(data, grid, method), criterion, grid_size, threads);
}

}  // namespace sqar
