#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace sqar::lp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// min c'x  s.t.  A x = b,  0 <= x <= upper   (upper_j may be +inf).
//
// The dual is  max b'y - upper'w  s.t.  A'y + z - w = c,  z, w >= 0.
// Few rows and many columns is the intended regime: every iteration factors
// the m x m normal matrix A diag(theta) A'.
struct BoundedProblem {
    Matrix a;
    Vector b;
    Vector c;
    Vector upper;
};

struct StartPoint {
    Vector x;  // strictly inside the bounds
    Vector y;
};

struct IpmOptions {
    int max_iterations = 200;
    double gap_tolerance = 1e-10;
    double feasibility_tolerance = 1e-9;
    // Accepted when the iteration stalls short of the targets above.
    double acceptable_gap = 1e-9;
    double acceptable_infeasibility = 1e-8;
};

struct IpmResult {
    Vector x;
    Vector y;
    Vector z;
    Vector w;
    double primal_objective = 0.0;
    double dual_objective = 0.0;
    int iterations = 0;
    bool converged = false;

    double relative_gap() const {
        return std::abs(primal_objective - dual_objective) / (1.0 + std::abs(primal_objective));
    }
};

/// Primal-dual interior point method with Mehrotra predictor-corrector steps.
/// Holds its workspace, so one solve per instance at a time.
class InteriorPointSolver {
public:
    explicit InteriorPointSolver(IpmOptions options = {}) : options_(options) {}

    const IpmOptions& options() const noexcept { return options_; }

    IpmResult solve(const BoundedProblem& problem, const std::optional<StartPoint>& start = {}) {
        const Eigen::Index m = problem.a.rows();
        const Eigen::Index n = problem.a.cols();

        // Row equilibration; y is mapped back at the end.
        row_scale_.resize(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            const double mx = problem.a.row(i).cwiseAbs().maxCoeff();
            row_scale_(i) = mx > 0.0 ? 1.0 / mx : 1.0;
        }
        a_ = row_scale_.asDiagonal() * problem.a;
        b_ = row_scale_.cwiseProduct(problem.b);
        const Vector& c = problem.c;
        const Vector& u = problem.upper;

        bounded_.resize(n);
        Eigen::Index bounded_count = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
            bounded_[j] = std::isfinite(u(j));
            bounded_count += bounded_[j] ? 1 : 0;
        }
        const double complementarity_count = static_cast<double>(n + bounded_count);

        Vector x(n), s(n), y(m), z(n), w(n);
        if (start) {
            x = start->x;
            y = start->y.cwiseQuotient(row_scale_);
        } else {
            for (Eigen::Index j = 0; j < n; ++j) x(j) = bounded_[j] ? 0.5 * u(j) : 1.0;
            y.setZero();
        }
        for (Eigen::Index j = 0; j < n; ++j) {
            if (bounded_[j]) {
                x(j) = std::clamp(x(j), 1e-3 * u(j), (1.0 - 1e-3) * u(j));
                s(j) = u(j) - x(j);
            } else {
                x(j) = std::max(x(j), 1e-6);
                s(j) = 1.0;
            }
        }
        {
            const Vector slack = c - a_.transpose() * y;
            const double eta = 0.1 * slack.cwiseAbs().mean() + 1e-2;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (bounded_[j]) {
                    z(j) = std::max(slack(j), 0.0) + eta;
                    w(j) = std::max(-slack(j), 0.0) + eta;
                } else {
                    z(j) = std::max(slack(j), eta);
                    w(j) = 0.0;
                }
            }
        }

        const double b_norm = 1.0 + b_.cwiseAbs().maxCoeff();
        const double c_norm = 1.0 + c.cwiseAbs().maxCoeff();

        IpmResult result;
        Vector rp(m), rd(n), ru(n), theta(n), rho(n), rxz(n), rsw(n);
        Vector dx(n), ds(n), dy(m), dz(n), dw(n);
        Vector dx_aff(n), ds_aff(n), dz_aff(n), dw_aff(n);
        Matrix scaled(m, n);
        Matrix normal(m, m);
        Eigen::LDLT<Matrix> ldlt;

        struct Snapshot {
            Vector x, y, z, w;
            double pobj = 0.0, dobj = 0.0, gap = kInfinity, pinf = kInfinity, dinf = kInfinity;
        } best;
        double best_merit = kInfinity;

        int iter = 0;
        for (; iter < options_.max_iterations; ++iter) {
            rp = b_ - a_ * x;
            rd = c - a_.transpose() * y - z + w;
            for (Eigen::Index j = 0; j < n; ++j) ru(j) = bounded_[j] ? u(j) - x(j) - s(j) : 0.0;

            const double pobj = c.dot(x);
            double dobj = b_.dot(y);
            double comp = x.dot(z);
            for (Eigen::Index j = 0; j < n; ++j) {
                if (bounded_[j]) {
                    dobj -= u(j) * w(j);
                    comp += s(j) * w(j);
                }
            }
            const double mu = comp / complementarity_count;
            const double gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj));
            const double pinf = rp.cwiseAbs().maxCoeff() / b_norm;
            const double dinf = rd.cwiseAbs().maxCoeff() / c_norm;
            const double merit = std::max({gap, pinf, dinf});
            if (merit < best_merit) {
                best_merit = merit;
                best = {x, y, z, w, pobj, dobj, gap, pinf, dinf};
            }
            if (gap < options_.gap_tolerance && pinf < options_.feasibility_tolerance &&
                dinf < options_.feasibility_tolerance) {
                break;
            }
            // Complementarity exhausted: further steps only add rounding noise.
            if (mu < 1e-16 * (1.0 + std::abs(pobj)) / complementarity_count) break;

            for (Eigen::Index j = 0; j < n; ++j) {
                double d = z(j) / x(j);
                if (bounded_[j]) d += w(j) / s(j);
                theta(j) = 1.0 / d;
            }
            scaled = a_ * theta.cwiseSqrt().asDiagonal();
            normal.setZero();
            normal.selfadjointView<Eigen::Lower>().rankUpdate(scaled);
            normal.triangularView<Eigen::StrictlyUpper>() = normal.transpose();
            const double ridge = 1e-14 * (1.0 + normal.diagonal().cwiseAbs().maxCoeff());
            normal.diagonal().array() += ridge;
            ldlt.compute(normal);

            auto direction = [&](const Vector& r_xz, const Vector& r_sw, Vector& ddx, Vector& dds,
                                 Vector& ddz, Vector& ddw) {
                for (Eigen::Index j = 0; j < n; ++j) {
                    double v = rd(j) - r_xz(j) / x(j);
                    if (bounded_[j]) v += (r_sw(j) - w(j) * ru(j)) / s(j);
                    rho(j) = v;
                }
                const Vector rhs = rp + a_ * theta.cwiseProduct(rho);
                dy = ldlt.solve(rhs);
                for (int refine = 0; refine < 2; ++refine) dy += ldlt.solve(rhs - normal * dy);
                ddx = theta.cwiseProduct(a_.transpose() * dy - rho);
                for (Eigen::Index j = 0; j < n; ++j) {
                    ddz(j) = (r_xz(j) - z(j) * ddx(j)) / x(j);
                    if (bounded_[j]) {
                        dds(j) = ru(j) - ddx(j);
                        ddw(j) = (r_sw(j) - w(j) * dds(j)) / s(j);
                    } else {
                        dds(j) = 0.0;
                        ddw(j) = 0.0;
                    }
                }
            };

            auto max_step = [&](const Vector& v, const Vector& dv, bool bounded_only) {
                double alpha = 1.0;
                for (Eigen::Index j = 0; j < n; ++j) {
                    if (bounded_only && !bounded_[j]) continue;
                    if (dv(j) < 0.0) alpha = std::min(alpha, -v(j) / dv(j));
                }
                return alpha;
            };

            // Predictor.
            rxz = -x.cwiseProduct(z);
            for (Eigen::Index j = 0; j < n; ++j) rsw(j) = bounded_[j] ? -s(j) * w(j) : 0.0;
            direction(rxz, rsw, dx_aff, ds_aff, dz_aff, dw_aff);
            const double ap = std::min(max_step(x, dx_aff, false), max_step(s, ds_aff, true));
            const double ad = std::min(max_step(z, dz_aff, false), max_step(w, dw_aff, true));
            double comp_aff = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                comp_aff += (x(j) + ap * dx_aff(j)) * (z(j) + ad * dz_aff(j));
                if (bounded_[j]) comp_aff += (s(j) + ap * ds_aff(j)) * (w(j) + ad * dw_aff(j));
            }
            const double mu_aff = comp_aff / complementarity_count;
            const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3.0);

            // Corrector.
            for (Eigen::Index j = 0; j < n; ++j) {
                rxz(j) = sigma * mu - x(j) * z(j) - dx_aff(j) * dz_aff(j);
                rsw(j) = bounded_[j] ? sigma * mu - s(j) * w(j) - ds_aff(j) * dw_aff(j) : 0.0;
            }
            direction(rxz, rsw, dx, ds, dz, dw);

            const double step_p =
                std::min(1.0, 0.99995 * std::min(max_step(x, dx, false), max_step(s, ds, true)));
            const double step_d =
                std::min(1.0, 0.99995 * std::min(max_step(z, dz, false), max_step(w, dw, true)));

            x += step_p * dx;
            y += step_d * dy;
            z += step_d * dz;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (bounded_[j]) {
                    s(j) += step_p * ds(j);
                    w(j) += step_d * dw(j);
                }
            }
        }

        result.iterations = iter;
        if (best.x.size() == 0) {
            best = {x, y, z, w, c.dot(x), b_.dot(y), kInfinity, kInfinity, kInfinity};
        }
        result.primal_objective = best.pobj;
        result.dual_objective = best.dobj;
        result.converged = best.gap < options_.acceptable_gap &&
                           best.pinf < options_.acceptable_infeasibility &&
                           best.dinf < options_.acceptable_infeasibility;
        result.x = std::move(best.x);
        result.y = row_scale_.cwiseProduct(best.y);
        result.z = std::move(best.z);
        result.w = std::move(best.w);
        return result;
    }

private:
    IpmOptions options_;
    Vector row_scale_;
    Matrix a_;
    Vector b_;
    std::vector<bool> bounded_;
};

}  // namespace sqar::lp
