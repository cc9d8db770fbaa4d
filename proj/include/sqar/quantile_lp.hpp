#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sqar/error.hpp"
#include "sqar/lp.hpp"

namespace sqar {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// rho_tau(r) = tau * r for r > 0, (tau - 1) * r otherwise.
inline double check_loss(double tau, double r) {
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidArgument("tau must lie in (0, 1)");
    return r > 0.0 ? tau * r : (tau - 1.0) * r;
}

/// Stacked check-loss problem: one row per (quantile block, observation).
struct CheckLossProblem {
    Matrix design;
    Vector response;
    Vector tau;

    CheckLossProblem() = default;
    CheckLossProblem(Matrix design_, Vector response_, Vector tau_)
        : design(std::move(design_)), response(std::move(response_)), tau(std::move(tau_)) {
        validate();
    }

    /// Single-quantile problem.
    static CheckLossProblem single(Matrix design, Vector response, double tau) {
        const Index n = response.size();
        return {std::move(design), std::move(response), Vector::Constant(n, tau)};
    }

    Index rows() const noexcept { return design.rows(); }
    Index cols() const noexcept { return design.cols(); }

    void validate() const {
        if (design.rows() != response.size() || tau.size() != response.size()) {
            throw DimensionMismatch("check-loss problem: design, response and tau disagree in rows");
        }
        if (design.rows() == 0 || design.cols() == 0) {
            throw InvalidArgument("check-loss problem must have rows and columns");
        }
        for (Index r = 0; r < tau.size(); ++r) {
            if (!(tau(r) > 0.0 && tau(r) < 1.0)) throw InvalidArgument("tau must lie in (0, 1)");
        }
        if (!design.allFinite() || !response.allFinite()) {
            throw DataError("check-loss problem has non-finite entries");
        }
    }

    double loss(const Vector& theta) const {
        const Vector r = response - design * theta;
        double total = 0.0;
        for (Index i = 0; i < r.size(); ++i) {
            total += r(i) > 0.0 ? tau(i) * r(i) : (tau(i) - 1.0) * r(i);
        }
        return total;
    }
};

enum class PenaltyKind { none, weighted_l1, group_supnorm };

struct WeightedCoordinate {
    Index index;
    double weight;
};

struct CoordinateGroup {
    std::vector<Index> indices;
    double weight;
};

/// Budget constraint on selected coordinates: sum_j w_j |theta_j| <= budget
/// (weighted_l1) or sum_l w_l max_{j in G_l} |theta_j| <= budget (group_supnorm).
struct PenaltySpec {
    PenaltyKind kind = PenaltyKind::none;
    std::vector<WeightedCoordinate> coordinates;
    std::vector<CoordinateGroup> groups;
    double budget = 0.0;

    static PenaltySpec none() { return {}; }

    static PenaltySpec weighted_l1(std::vector<WeightedCoordinate> coords, double budget) {
        PenaltySpec p;
        p.kind = PenaltyKind::weighted_l1;
        p.coordinates = std::move(coords);
        p.budget = budget;
        return p;
    }

    static PenaltySpec group_supnorm(std::vector<CoordinateGroup> groups, double budget) {
        PenaltySpec p;
        p.kind = PenaltyKind::group_supnorm;
        p.groups = std::move(groups);
        p.budget = budget;
        return p;
    }

    /// Every coordinate touched by the constraint, in declaration order.
    std::vector<Index> penalized_indices() const {
        std::vector<Index> out;
        if (kind == PenaltyKind::weighted_l1) {
            for (const auto& c : coordinates) out.push_back(c.index);
        } else if (kind == PenaltyKind::group_supnorm) {
            for (const auto& g : groups) out.insert(out.end(), g.indices.begin(), g.indices.end());
        }
        return out;
    }

    /// Value of the constrained function at theta.
    double evaluate(const Vector& theta) const {
        double total = 0.0;
        if (kind == PenaltyKind::weighted_l1) {
            for (const auto& c : coordinates) total += c.weight * std::abs(theta(c.index));
        } else if (kind == PenaltyKind::group_supnorm) {
            for (const auto& g : groups) {
                double mx = 0.0;
                for (Index j : g.indices) mx = std::max(mx, std::abs(theta(j)));
                total += g.weight * mx;
            }
        }
        return total;
    }

    void validate(Index q) const {
        if (kind == PenaltyKind::none) return;
        if (!(std::isfinite(budget) && budget >= 0.0)) {
            throw InvalidBudget("budget must be finite and >= 0");
        }
        auto check_weight = [](double w) {
            if (!(std::isfinite(w) && w > 0.0)) {
                throw InvalidArgument("penalty weights must be finite and > 0");
            }
        };
        if (kind == PenaltyKind::weighted_l1) {
            for (const auto& c : coordinates) check_weight(c.weight);
        } else {
            for (const auto& g : groups) {
                check_weight(g.weight);
                if (g.indices.empty()) throw InvalidArgument("empty penalty group");
            }
        }
        std::vector<Index> idx = penalized_indices();
        for (Index j : idx) {
            if (j < 0 || j >= q) throw InvalidArgument("penalized index out of range");
        }
        std::sort(idx.begin(), idx.end());
        if (std::adjacent_find(idx.begin(), idx.end()) != idx.end()) {
            throw InvalidArgument("penalized coordinates must be distinct and groups disjoint");
        }
    }
};

enum class LpStatus { optimal, budget_inactive, max_iter };

inline const char* to_string(LpStatus s) {
    switch (s) {
        case LpStatus::optimal: return "optimal";
        case LpStatus::budget_inactive: return "budget_inactive";
        case LpStatus::max_iter: return "max_iter";
    }
    return "?";
}

struct LpSolution {
    Vector theta;
    double objective = 0.0;
    double duality_gap = 0.0;
    LpStatus status = LpStatus::optimal;
    int iterations = 0;
};

namespace detail {

// Least-squares start for the free coordinates; zero where the normal matrix is singular.
inline Vector least_squares_start(const Matrix& design, const Vector& response) {
    const Matrix gram = design.transpose() * design;
    Eigen::LDLT<Matrix> ldlt(gram);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() > 1e-12)) {
        return Vector::Zero(design.cols());
    }
    Vector beta = ldlt.solve(design.transpose() * response);
    if (!beta.allFinite()) beta.setZero();
    return beta;
}

}  // namespace detail

/// Exact minimizer of the stacked check loss under an optional budget
/// constraint, by linear programming. Holds solver workspace; use one instance
/// per thread.
class QuantileLpSolver {
public:
    explicit QuantileLpSolver(lp::IpmOptions options = {}) : ipm_(options) {}

    LpSolution solve(const CheckLossProblem& problem, const PenaltySpec& penalty = {}) {
        problem.validate();
        const Index q = problem.cols();
        penalty.validate(q);

        if (penalty.kind != PenaltyKind::none && penalty.budget == 0.0) {
            return solve_pinned(problem, penalty);
        }

        Build build = build_lp(problem, penalty);
        lp::IpmResult ipm = ipm_.solve(build.lp, build.start);

        Vector y = ipm.y;
        std::optional<Vertex> vertex = crossover(build.lp, ipm, false);
        if (!vertex) vertex = crossover(build.lp, ipm, true);
        std::optional<double> certified_gap;
        if (vertex) {
            y = vertex->y;
            certified_gap = vertex->gap;
        }

        LpSolution out;
        out.theta = y.head(q);
        out.objective = problem.loss(out.theta);
        out.duality_gap = certified_gap ? *certified_gap
                                        : std::abs(ipm.primal_objective - ipm.dual_objective);
        out.iterations = ipm.iterations;
        if (!certified_gap && !ipm.converged) {
            out.status = LpStatus::max_iter;
        } else if (penalty.kind != PenaltyKind::none &&
                   penalty.evaluate(out.theta) < penalty.budget - 1e-9 * (1.0 + penalty.budget)) {
            out.status = LpStatus::budget_inactive;
        } else {
            out.status = LpStatus::optimal;
        }
        return out;
    }

private:
    struct Build {
        lp::BoundedProblem lp;
        lp::StartPoint start;
        Index residual_columns = 0;
    };

    // theta_P = 0 is forced when the budget is zero; solve on the remaining columns.
    LpSolution solve_pinned(const CheckLossProblem& problem, const PenaltySpec& penalty) {
        const Index q = problem.cols();
        std::vector<bool> pinned(static_cast<std::size_t>(q), false);
        for (Index j : penalty.penalized_indices()) pinned[static_cast<std::size_t>(j)] = true;
        std::vector<Index> keep;
        for (Index j = 0; j < q; ++j) {
            if (!pinned[static_cast<std::size_t>(j)]) keep.push_back(j);
        }
        LpSolution out;
        out.theta = Vector::Zero(q);
        if (keep.empty()) {
            out.objective = problem.loss(out.theta);
            return out;
        }
        Matrix reduced(problem.rows(), static_cast<Index>(keep.size()));
        for (std::size_t k = 0; k < keep.size(); ++k) {
            reduced.col(static_cast<Index>(k)) = problem.design.col(keep[k]);
        }
        CheckLossProblem sub(std::move(reduced), problem.response, problem.tau);
        LpSolution inner = solve(sub, PenaltySpec::none());
        for (std::size_t k = 0; k < keep.size(); ++k) {
            out.theta(keep[k]) = inner.theta(static_cast<Index>(k));
        }
        out.objective = problem.loss(out.theta);
        out.duality_gap = inner.duality_gap;
        out.iterations = inner.iterations;
        out.status = inner.status == LpStatus::max_iter ? LpStatus::max_iter : LpStatus::optimal;
        return out;
    }

    // Rows: theta (q) then auxiliary bounds (|theta_j| <= s_j, or group maxima).
    // Columns: one box-constrained dual per residual, then one nonnegative
    // column per linear inequality on the rows' variables.
    static Build build_lp(const CheckLossProblem& problem, const PenaltySpec& penalty) {
        const Index q = problem.cols();
        const Index nres = problem.rows();
        const auto& coords = penalty.coordinates;
        const auto& groups = penalty.groups;

        Index aux = 0;
        Index ncon = 0;
        if (penalty.kind == PenaltyKind::weighted_l1) {
            aux = static_cast<Index>(coords.size());
            ncon = 2 * aux + 1;
        } else if (penalty.kind == PenaltyKind::group_supnorm) {
            aux = static_cast<Index>(groups.size());
            for (const auto& g : groups) ncon += 2 * static_cast<Index>(g.indices.size());
            ncon += 1;
        }
        const Index m = q + aux;
        const Index n = nres + ncon;

        Build out;
        out.residual_columns = nres;
        auto& A = out.lp.a;
        A = Matrix::Zero(m, n);
        A.topLeftCorner(q, nres) = problem.design.transpose();
        out.lp.b = Vector::Zero(m);
        out.lp.b.head(q) = problem.design.transpose() * problem.tau;
        out.lp.c = Vector::Zero(n);
        out.lp.c.head(nres) = problem.response;
        out.lp.upper = Vector::Constant(n, lp::kInfinity);
        out.lp.upper.head(nres).setOnes();

        Vector x0 = Vector::Zero(n);
        x0.head(nres) = problem.tau;
        Vector y0 = Vector::Zero(m);

        // Free coordinates start at the least-squares fit with penalized ones at 0.
        {
            std::vector<bool> pen(static_cast<std::size_t>(q), false);
            for (Index j : penalty.penalized_indices()) pen[static_cast<std::size_t>(j)] = true;
            std::vector<Index> freec;
            for (Index j = 0; j < q; ++j) {
                if (!pen[static_cast<std::size_t>(j)]) freec.push_back(j);
            }
            if (!freec.empty()) {
                Matrix zf(nres, static_cast<Index>(freec.size()));
                for (std::size_t k = 0; k < freec.size(); ++k) {
                    zf.col(static_cast<Index>(k)) = problem.design.col(freec[k]);
                }
                const Vector beta = detail::least_squares_start(zf, problem.response);
                for (std::size_t k = 0; k < freec.size(); ++k) {
                    y0(freec[k]) = beta(static_cast<Index>(k));
                }
            }
        }

        const double t = penalty.budget;
        Index col = nres;
        if (penalty.kind == PenaltyKind::weighted_l1) {
            double weight_sum = 0.0;
            for (const auto& cw : coords) weight_sum += cw.weight;
            const Index budget_col = n - 1;
            for (Index a = 0; a < aux; ++a) {
                const auto& cw = coords[static_cast<std::size_t>(a)];
                const Index row_s = q + a;
                // theta_j - s_j <= 0
                A(cw.index, col) = 1.0;
                A(row_s, col) = -1.0;
                x0(col) = 0.5 * cw.weight;
                ++col;
                // -theta_j - s_j <= 0
                A(cw.index, col) = -1.0;
                A(row_s, col) = -1.0;
                x0(col) = 0.5 * cw.weight;
                ++col;
                A(row_s, budget_col) = cw.weight;
                y0(row_s) = t / (2.0 * weight_sum);
            }
            out.lp.c(budget_col) = t;
            x0(budget_col) = 1.0;
        } else if (penalty.kind == PenaltyKind::group_supnorm) {
            double weight_sum = 0.0;
            for (const auto& g : groups) weight_sum += g.weight;
            const Index budget_col = n - 1;
            for (Index a = 0; a < aux; ++a) {
                const auto& g = groups[static_cast<std::size_t>(a)];
                const Index row_m = q + a;
                const double share = g.weight / (2.0 * static_cast<double>(g.indices.size()));
                for (Index j : g.indices) {
                    A(j, col) = 1.0;
                    A(row_m, col) = -1.0;
                    x0(col) = share;
                    ++col;
                    A(j, col) = -1.0;
                    A(row_m, col) = -1.0;
                    x0(col) = share;
                    ++col;
                }
                A(row_m, budget_col) = g.weight;
                y0(row_m) = t / (2.0 * weight_sum);
            }
            out.lp.c(budget_col) = t;
            x0(budget_col) = 1.0;
        }
        out.start.x = std::move(x0);
        out.start.y = std::move(y0);
        return out;
    }

    struct Vertex {
        Vector y;
        double gap;
    };

    // Crossover from the interior iterate to an optimal basis. Columns are
    // ranked by how far their primal value sits from its bounds relative to
    // the dual slack; the first m independent ones form the basis. The vertex
    // is accepted only when both its dual and the implied primal are feasible,
    // which proves optimality.
    static std::optional<Vertex> crossover(const lp::BoundedProblem& lpp,
                                           const lp::IpmResult& ipm, bool by_slack) {
        const Index m = lpp.a.rows();
        const Index n = lpp.a.cols();
        if (ipm.x.size() != n || !ipm.x.allFinite() || !ipm.z.allFinite()) return std::nullopt;

        std::vector<double> ratio(static_cast<std::size_t>(n));
        const Vector ipm_slack = lpp.c - lpp.a.transpose() * ipm.y;
        for (Index j = 0; j < n; ++j) {
            if (by_slack) {
                ratio[static_cast<std::size_t>(j)] = -std::abs(ipm_slack(j)) / lpp.a.col(j).norm();
                continue;
            }
            const bool bounded = std::isfinite(lpp.upper(j));
            const double primal = bounded ? std::min(ipm.x(j), lpp.upper(j) - ipm.x(j)) : ipm.x(j);
            const double dual = bounded ? std::max(ipm.z(j), ipm.w(j)) : ipm.z(j);
            ratio[static_cast<std::size_t>(j)] = std::max(primal, 0.0) / std::max(dual, 1e-300);
        }
        std::vector<Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Index{0});
        std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) {
            return ratio[static_cast<std::size_t>(i)] > ratio[static_cast<std::size_t>(j)];
        });

        // Greedy independent set by modified Gram-Schmidt.
        Matrix q(m, m);
        std::vector<Index> basis;
        for (Index j : order) {
            if (static_cast<Index>(basis.size()) == m) break;
            Vector v = lpp.a.col(j);
            const double norm0 = v.norm();
            if (norm0 == 0.0) continue;
            for (std::size_t k = 0; k < basis.size(); ++k) {
                v -= q.col(static_cast<Index>(k)).dot(v) * q.col(static_cast<Index>(k));
            }
            for (std::size_t k = 0; k < basis.size(); ++k) {
                v -= q.col(static_cast<Index>(k)).dot(v) * q.col(static_cast<Index>(k));
            }
            const double nv = v.norm();
            if (nv <= 1e-9 * norm0) continue;
            q.col(static_cast<Index>(basis.size())) = v / nv;
            basis.push_back(j);
        }
        if (static_cast<Index>(basis.size()) < m) return std::nullopt;

        Matrix ab(m, m);
        Vector cb(m);
        for (Index k = 0; k < m; ++k) {
            ab.col(k) = lpp.a.col(basis[static_cast<std::size_t>(k)]);
            cb(k) = lpp.c(basis[static_cast<std::size_t>(k)]);
        }
        Eigen::PartialPivLU<Matrix> lu(ab);
        Eigen::PartialPivLU<Matrix> lut(ab.transpose());
        Vector y = lut.solve(cb);
        y += lut.solve(cb - ab.transpose() * y);
        if (!y.allFinite()) return std::nullopt;

        const Vector slack = lpp.c - lpp.a.transpose() * y;
        const double cscale = 1.0 + lpp.c.cwiseAbs().maxCoeff();
        std::vector<bool> in_basis(static_cast<std::size_t>(n), false);
        for (Index j : basis) in_basis[static_cast<std::size_t>(j)] = true;
        Vector x = Vector::Zero(n);
        for (Index j = 0; j < n; ++j) {
            if (in_basis[static_cast<std::size_t>(j)] || slack(j) >= 0.0) continue;
            if (std::isfinite(lpp.upper(j))) {
                x(j) = lpp.upper(j);
            } else if (slack(j) < -1e-9 * cscale) {
                return std::nullopt;
            }
        }
        const Vector rhs = lpp.b - lpp.a * x;
        Vector xb = lu.solve(rhs);
        xb += lu.solve(rhs - ab * xb);
        const double tol = 1e-9;
        for (Index k = 0; k < m; ++k) {
            const Index j = basis[static_cast<std::size_t>(k)];
            double v = xb(k);
            const double u = lpp.upper(j);
            if (v < -tol || (std::isfinite(u) && v > u + tol) || !std::isfinite(v)) return std::nullopt;
            v = std::max(v, 0.0);
            if (std::isfinite(u)) v = std::min(v, u);
            x(j) = v;
        }
        const double primal = lpp.c.dot(x);
        double dual = lpp.b.dot(y);
        for (Index j = 0; j < n; ++j) {
            if (std::isfinite(lpp.upper(j)) && slack(j) < 0.0) dual += lpp.upper(j) * slack(j);
        }
        const double gap = std::abs(primal - dual);
        if (gap > 1e-9 * (1.0 + std::abs(primal))) return std::nullopt;
        return Vertex{std::move(y), gap};
    }

    lp::InteriorPointSolver ipm_;
};

/// Convenience wrapper around a one-shot QuantileLpSolver.
inline LpSolution solve(const CheckLossProblem& problem, const PenaltySpec& penalty = {}) {
    QuantileLpSolver solver;
    return solver.solve(problem, penalty);
}

/// Enumerates every q-subset of rows, interpolates it exactly and keeps the
/// best candidate (theta = 0 included). An optimal quantile-regression fit
/// always interpolates q rows, so this is exact for tiny unpenalized problems.
inline LpSolution brute_force_oracle(const CheckLossProblem& problem,
                                     const PenaltySpec& penalty = {}) {
    problem.validate();
    if (penalty.kind != PenaltyKind::none) {
        throw InvalidArgument("brute_force_oracle handles unpenalized problems only");
    }
    const Index rows = problem.rows();
    const Index q = problem.cols();
    if (rows > 14 || q > 3) {
        throw TooLarge("brute_force_oracle needs at most 14 rows and 3 columns");
    }

    LpSolution best;
    best.theta = Vector::Zero(q);
    best.objective = problem.loss(best.theta);

    std::vector<Index> pick(static_cast<std::size_t>(q));
    std::function<void(Index, Index)> recurse;
    Matrix sub(q, q);
    Vector rhs(q);
    auto consider = [&]() {
        for (Index k = 0; k < q; ++k) {
            sub.row(k) = problem.design.row(pick[static_cast<std::size_t>(k)]);
            rhs(k) = problem.response(pick[static_cast<std::size_t>(k)]);
        }
        Eigen::FullPivLU<Matrix> lu(sub);
        if (lu.rank() < q) return;
        const Vector theta = lu.solve(rhs);
        const double obj = problem.loss(theta);
        if (obj < best.objective) {
            best.objective = obj;
            best.theta = theta;
        }
    };
    recurse = [&](Index start, Index depth) {
        if (depth == q) {
            consider();
            return;
        }
        for (Index r = start; r < rows; ++r) {
            pick[static_cast<std::size_t>(depth)] = r;
            recurse(r + 1, depth + 1);
        }
    };
    if (rows >= q) recurse(0, 0);
    return best;
}

}  // namespace sqar
