#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sqar/distributions.hpp"
#include "sqar/estimator.hpp"
#include "sqar/parallel.hpp"
#include "sqar/spatial.hpp"

namespace sqar {

enum class NoiseLaw { standard_normal, student_t3 };

/// Monte Carlo design. Each unit draws its own quantile level tau_i uniformly
/// from `taus`, and its coefficients follow
///   alpha + b F^{-1}(tau_i),  lambda + c0 F^{-1}(tau_i),  beta_j + c_j F^{-1}(tau_i),
/// except example 3 (lambda fixed, beta varying only below tau = 0.49).
struct SimDesign {
    int example = 1;
    int m1 = 30;
    int m2 = 4;
    double lambda = 0.5;
    double alpha = 3.0;
    std::vector<double> beta{3.0};
    double b = 0.5;
    double c0 = 0.0;
    std::vector<double> c{0.0};  // c1, c2, ... one per predictor
    NoiseLaw fn = NoiseLaw::standard_normal;
    double noise_scale = 1.0;
    std::vector<double> taus = QuantileGrid::deciles().taus();
    int reps = 100;
    std::uint64_t seed = 1;

    int n() const noexcept { return m1 * m2; }
    int p() const noexcept { return static_cast<int>(beta.size()); }

    void validate() const {
        if (example < 1 || example > 4) throw InvalidArgument("example must be 1, 2, 3 or 4");
        if (m1 < 1 || m2 < 2) throw InvalidArgument("need m1 >= 1 and m2 >= 2");
        if (!(std::abs(lambda) < 1.0)) throw InvalidLambda("|lambda| must be < 1");
        if (beta.empty() || c.size() != beta.size()) {
            throw InvalidArgument("beta and its varying factors must have equal nonzero length");
        }
        if (example == 4 && beta.size() != 2) throw InvalidArgument("example 4 has two predictors");
        if (example != 4 && beta.size() != 1) throw InvalidArgument("examples 1-3 have one predictor");
        if (reps < 1) throw InvalidArgument("reps must be >= 1");
        if (!(noise_scale >= 0.0)) throw InvalidArgument("noise scale must be >= 0");
        QuantileGrid check(taus);
        (void)check;
    }

    QuantileGrid grid() const { return QuantileGrid(taus); }
};

/// Preset designs. Examples 1-2 take settings I-IV, example 3 ignores the
/// setting, example 4 takes I-V.
inline SimDesign example_design(int example, const std::string& setting, int n, double lambda) {
    SimDesign d;
    d.example = example;
    d.m2 = 4;
    if (n % 4 != 0) throw InvalidArgument("n must be a multiple of 4");
    d.m1 = n / 4;
    d.lambda = lambda;
    const std::string s = setting;
    if (example == 1 || example == 2) {
        d.fn = example == 2 ? NoiseLaw::student_t3 : NoiseLaw::standard_normal;
        d.alpha = 3.0;
        d.beta = {3.0};
        d.b = 0.5;
        if (s == "I") { d.c0 = 0.1; d.c = {0.2}; }
        else if (s == "II") { d.c0 = 0.0; d.c = {0.2}; }
        else if (s == "III") { d.c0 = 0.1; d.c = {0.0}; }
        else if (s == "IV") { d.c0 = 0.0; d.c = {0.0}; }
        else throw InvalidArgument("unknown setting '" + setting + "' for example " + std::to_string(example));
    } else if (example == 3) {
        d.alpha = 3.0;
        d.beta = {3.0};
        d.b = 0.5;
        d.c0 = 0.0;
        d.c = {0.2};
    } else if (example == 4) {
        d.alpha = 0.0;
        d.b = 0.0;
        d.beta = {2.0, 3.0};
        if (s == "I") { d.c0 = 0.1; d.c = {0.3, 0.5}; }
        else if (s == "II") { d.c0 = 0.0; d.c = {0.3, 0.5}; }
        else if (s == "III") { d.c0 = 0.1; d.c = {0.0, 0.5}; }
        else if (s == "IV") { d.c0 = 0.0; d.c = {0.0, 0.5}; }
        else if (s == "V") { d.c0 = 0.0; d.c = {0.0, 0.0}; }
        else throw InvalidArgument("unknown setting '" + setting + "' for example 4");
    } else {
        throw InvalidArgument("example must be 1, 2, 3 or 4");
    }
    d.validate();
    return d;
}

struct TrueCoefficients {
    double alpha;
    double lambda;
    Vector beta;
};

inline double design_quantile(const SimDesign& d, double tau) {
    return d.fn == NoiseLaw::student_t3 ? student_t_quantile(3.0, tau) : normal_quantile(tau);
}

inline TrueCoefficients true_coefficients(const SimDesign& d, double tau) {
    const bool on_grid = std::any_of(d.taus.begin(), d.taus.end(),
                                     [&](double t) { return std::abs(t - tau) < 1e-12; });
    if (!on_grid) throw InvalidArgument("tau " + std::to_string(tau) + " is not in the design grid");
    const double q = design_quantile(d, tau);
    TrueCoefficients out;
    out.alpha = d.alpha + d.b * q;
    out.beta.resize(d.p());
    if (d.example == 3) {
        out.lambda = d.lambda;
        out.beta(0) = tau < 0.49 ? d.beta[0] + d.c[0] * q : d.beta[0];
    } else {
        out.lambda = d.lambda + d.c0 * q;
        for (int j = 0; j < d.p(); ++j) {
            out.beta(j) = d.beta[static_cast<std::size_t>(j)] + d.c[static_cast<std::size_t>(j)] * q;
        }
    }
    return out;
}

inline CoefficientSheet true_sheet(const SimDesign& d) {
    const Index K = static_cast<Index>(d.taus.size());
    Vector alpha(K), lambda(K);
    Matrix beta(K, d.p());
    for (Index k = 0; k < K; ++k) {
        const auto t = true_coefficients(d, d.taus[static_cast<std::size_t>(k)]);
        alpha(k) = t.alpha;
        lambda(k) = t.lambda;
        beta.row(k) = t.beta.transpose();
    }
    return {alpha, lambda, beta};
}

/// splitmix64 finalizer; replication r of a study uses mix(seed + r + 1).
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t replication_seed(std::uint64_t seed, int rep) {
    return mix_seed(seed + static_cast<std::uint64_t>(rep) + 1);
}

struct SimDraw {
    SqarDataset data;
    CoefficientSheet truth;
    std::vector<int> tau_index;  // level drawn by each unit
};

/// Draw order from one mt19937_64: all tau indices, then X column by column,
/// then the noise vector.
inline SimDraw generate(const SimDesign& d, std::uint64_t rep_seed) {
    d.validate();
    const int n = d.n();
    const int K = static_cast<int>(d.taus.size());
    std::mt19937_64 rng(rep_seed);
    std::uniform_int_distribution<int> level(0, K - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<int> ti(static_cast<std::size_t>(n));
    for (auto& t : ti) t = level(rng);
    Matrix x(n, d.p());
    for (int j = 0; j < d.p(); ++j) {
        for (int i = 0; i < n; ++i) x(i, j) = unif(rng);
    }
    Vector e(n);
    for (int i = 0; i < n; ++i) e(i) = d.noise_scale * normal(rng);

    const CoefficientSheet truth = true_sheet(d);
    Vector a(n), l(n), bx(n);
    for (int i = 0; i < n; ++i) {
        const int k = ti[static_cast<std::size_t>(i)];
        a(i) = truth.alpha(k);
        l(i) = truth.lambda(k);
        bx(i) = x.row(i).dot(truth.beta.row(k));
    }
    const SpatialWeights w = build_block_weight_matrix(d.m1, d.m2);
    Vector y = reduced_form_response(a, l, bx, e, w);
    return {SqarDataset(std::move(y), std::move(x), w), truth, std::move(ti)};
}

/// Fit one method on one dataset; fused methods are tuned by `criterion`.
inline FitResult fit_method(const SqarDataset& data, const QuantileGrid& grid, Method method,
                            Criterion criterion, int grid_size = 50, int threads = 1) {
    if (method == Method::rq) return fit_rq(data, grid);
    if (method == Method::sar2sls) {
        const CoefficientSheet one = fit_sar_2sls(data);
        const Index K = grid.size();
        FitResult out;
        out.method = Method::sar2sls;
        out.grid = grid;
        out.sheet = CoefficientSheet(Vector::Constant(K, one.alpha(0)),
                                     Vector::Constant(K, one.lambda(0)),
                                     one.beta.replicate(K, 1));
        out.sheet.sigma2 = Vector::Constant(K, (*one.sigma2)(0));
        out.fused_mask = fused_mask(out.sheet);
        return out;
    }
    return tune(FusedEstimator(data, grid, method), criterion, grid_size, threads);
}

struct RepOutcome {
    bool ok = false;
    std::string error;
    Matrix squared_error;            // methods x K
    std::vector<int> edf;            // per method
    std::vector<double> fused_share; // fraction of fused_mask entries set, per method
    std::vector<CoefficientSheet> sheets;
};

struct MedseTable {
    std::vector<Method> methods;
    std::vector<double> taus;
    Matrix medse;  // methods x K
    int reps_used = 0;
};

struct StudyResult {
    MedseTable table;
    CoefficientSheet truth;
    std::vector<RepOutcome> reps;
    int failures = 0;

    /// Mean estimated sheet of method m over successful replications.
    CoefficientSheet mean_sheet(std::size_t m) const {
        CoefficientSheet acc(Vector::Zero(truth.K()), Vector::Zero(truth.K()),
                             Matrix::Zero(truth.K(), truth.p()));
        int used = 0;
        for (const auto& r : reps) {
            if (!r.ok) continue;
            acc.alpha += r.sheets[m].alpha;
            acc.lambda += r.sheets[m].lambda;
            acc.beta += r.sheets[m].beta;
            ++used;
        }
        if (used > 0) {
            acc.alpha /= used;
            acc.lambda /= used;
            acc.beta /= used;
        }
        return acc;
    }
};

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 == 1 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline MedseTable medse_table(const std::vector<Method>& methods, const std::vector<double>& taus,
                              const std::vector<RepOutcome>& reps) {
    MedseTable t;
    t.methods = methods;
    t.taus = taus;
    const Index M = static_cast<Index>(methods.size());
    const Index K = static_cast<Index>(taus.size());
    t.medse.resize(M, K);
    for (Index m = 0; m < M; ++m) {
        for (Index k = 0; k < K; ++k) {
            std::vector<double> v;
            for (const auto& r : reps) {
                if (r.ok) v.push_back(r.squared_error(m, k));
            }
            t.medse(m, k) = median(std::move(v));
        }
    }
    t.reps_used = static_cast<int>(
        std::count_if(reps.begin(), reps.end(), [](const RepOutcome& r) { return r.ok; }));
    return t;
}

/// Replications run in parallel; each uses replication_seed(design.seed, r),
/// so results do not depend on the thread count. A replication where any
/// method fails numerically is excluded; more than 10% failures aborts.
inline StudyResult run_study(const SimDesign& design, const std::vector<Method>& methods,
                             Criterion criterion, int threads = 0, int grid_size = 50) {
    design.validate();
    if (design.reps < 2) throw InvalidArgument("a study needs at least two replications");
    if (methods.empty()) throw InvalidArgument("no methods requested");
    const QuantileGrid grid = design.grid();
    const Index K = grid.size();
    StudyResult out;
    out.truth = true_sheet(design);
    out.reps.resize(static_cast<std::size_t>(design.reps));

    parallel_for(out.reps.size(), resolve_threads(threads), [&](std::size_t r) {
        RepOutcome& rep = out.reps[r];
        try {
            const SimDraw draw = generate(design, replication_seed(design.seed, static_cast<int>(r)));
            rep.squared_error.resize(static_cast<Index>(methods.size()), K);
            for (std::size_t m = 0; m < methods.size(); ++m) {
                FitResult fit = fit_method(draw.data, grid, methods[m], criterion, grid_size, 1);
                for (Index k = 0; k < K; ++k) {
                    rep.squared_error(static_cast<Index>(m), k) =
                        (fit.sheet.row(k) - draw.truth.row(k)).squaredNorm();
                }
                rep.edf.push_back(edf(fit));
                rep.fused_share.push_back(fit.fused_mask.size() == 0
                                              ? 0.0
                                              : static_cast<double>(fit.fused_mask.count()) /
                                                    static_cast<double>(fit.fused_mask.size()));
                rep.sheets.push_back(std::move(fit.sheet));
            }
            rep.ok = true;
        } catch (const NumericalError& e) {
            rep.ok = false;
            rep.error = e.what();
        }
    });

    for (const auto& r : out.reps) out.failures += r.ok ? 0 : 1;
    if (out.failures * 10 > design.reps) {
        throw NumericalError(std::to_string(out.failures) + " of " + std::to_string(design.reps) +
                             " replications failed");
    }
    out.table = medse_table(methods, design.taus, out.reps);
    return out;
}

}  // namespace sqar
