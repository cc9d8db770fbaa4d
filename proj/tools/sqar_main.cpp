#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sqar/sqar.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitData = 2;
constexpr int kExitSolver = 3;

struct FitOptions {
    std::string data;
    std::string weights;
    std::string weights_format = "dense_csv";
    std::string taus = "0.1:0.9:0.1";
    std::string method = "fal";
    std::string criterion = "bic";
    std::optional<double> t;
    int grid_size = 50;
    bool no_normalize = false;
    int threads = 0;
    std::string out = ".";
};

struct SimulateOptions {
    std::string config;
    std::string out = ".";
    int threads = 0;
    bool dump_dataset = false;
};

void add_fit_options(CLI::App* cmd, FitOptions& o, bool tuning) {
    cmd->add_option("--data", o.data, "CSV with header; first column y, then predictors")
        ->required()->check(CLI::ExistingFile);
    cmd->add_option("--weights", o.weights, "spatial weights file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--weights-format", o.weights_format, "dense_csv or triplet_csv")
        ->capture_default_str();
    cmd->add_option("--taus", o.taus, "a:b:step or comma list")->capture_default_str();
    cmd->add_option("--method", o.method, tuning ? "FL, FAL, FS or FAS" : "RQ, FL, FAL, FS, FAS or SAR2SLS")
        ->capture_default_str();
    cmd->add_option("--criterion", o.criterion, "AIC or BIC")->capture_default_str();
    if (!tuning) cmd->add_option("--t", o.t, "fixed budget; skips tuning");
    cmd->add_option("--grid-size", o.grid_size, "tuning grid points")->capture_default_str();
    cmd->add_flag("--no-normalize", o.no_normalize, "keep weights as given");
    cmd->add_option("--threads", o.threads, "worker threads (default SQAR_THREADS or all cores)");
    cmd->add_option("--out", o.out, "output directory")->capture_default_str();
}

void print_warnings(const std::vector<std::string>& w) {
    for (const auto& s : w) std::cerr << "warning: " << s << "\n";
}

int run_fit(const FitOptions& o, bool force_tuning) {
    const auto loaded = sqar::load_dataset(o.data, o.weights, sqar::parse_weights_format(o.weights_format),
                                           !o.no_normalize);
    print_warnings(loaded.warnings);
    const sqar::QuantileGrid grid = sqar::parse_taus(o.taus);
    const sqar::Method method = sqar::parse_method(o.method);
    const sqar::Criterion criterion = sqar::parse_criterion(o.criterion);
    const int threads = sqar::resolve_threads(o.threads);
    if (force_tuning && !sqar::is_fused(method)) {
        throw sqar::InvalidArgument("tune needs a fused method (FL, FAL, FS or FAS)");
    }

    sqar::FitResult fit;
    if (sqar::is_fused(method)) {
        const sqar::FusedEstimator est(loaded.data, grid, method);
        fit = o.t ? est.fit(*o.t) : sqar::tune(est, criterion, o.grid_size, threads);
    } else {
        if (o.t) throw sqar::InvalidArgument("--t applies to fused methods only");
        fit = sqar::fit_method(loaded.data, grid, method, criterion);
    }
    fit.warnings.insert(fit.warnings.begin(), loaded.warnings.begin(), loaded.warnings.end());
    print_warnings({fit.warnings.begin() + static_cast<long>(loaded.warnings.size()), fit.warnings.end()});
    sqar::write_fit_outputs(o.out, fit);

    std::cout << sqar::to_string(method) << ": n=" << loaded.data.n() << " p=" << loaded.data.p()
              << " K=" << grid.size() << " edf=" << sqar::edf(fit);
    if (fit.chosen_t) std::cout << " t=" << sqar::format_double(*fit.chosen_t);
    std::cout << "\nwrote " << (fs::path(o.out) / "result.json").string() << "\n";
    return 0;
}

int run_simulate(const SimulateOptions& o) {
    const sqar::StudyConfig cfg = sqar::read_study_config(o.config);
    const fs::path out(o.out);
    if (o.dump_dataset) {
        const auto draw = sqar::generate(cfg.design, sqar::replication_seed(cfg.design.seed, 0));
        sqar::write_file_atomic(out / "dataset.csv", sqar::dataset_csv(draw.data));
        sqar::write_file_atomic(out / "weights.csv", sqar::dense_weights_csv(draw.data.weights()));
    }
    const sqar::StudyResult r = sqar::run_study(cfg.design, cfg.methods, cfg.criterion,
                                                sqar::resolve_threads(o.threads), cfg.grid_size);
    sqar::write_file_atomic(out / "medse.csv", sqar::medse_csv(r.table));
    sqar::write_file_atomic(out / "coefficient_paths.csv", sqar::coefficient_paths_csv(r));
    if (r.failures > 0) {
        std::cerr << "warning: " << r.failures << " of " << cfg.design.reps
                  << " replications excluded after solver failures\n";
    }
    std::cout << "example " << cfg.design.example << ": n=" << cfg.design.n() << " reps used "
              << r.table.reps_used << "/" << cfg.design.reps << "\nwrote "
              << (out / "medse.csv").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spatial quantile autoregression with fused penalties"};
    app.require_subcommand(1);

    FitOptions fit_opts, tune_opts;
    SimulateOptions sim_opts;
    auto* fit = app.add_subcommand("fit", "fit one method; fused methods are tuned unless --t is given");
    add_fit_options(fit, fit_opts, false);
    auto* tune = app.add_subcommand("tune", "fit a fused method over the budget grid and emit the trace");
    add_fit_options(tune, tune_opts, true);
    auto* sim = app.add_subcommand("simulate", "run a Monte Carlo study from a JSON config");
    sim->add_option("--config", sim_opts.config, "study config JSON")->required()->check(CLI::ExistingFile);
    sim->add_option("--out", sim_opts.out, "output directory")->capture_default_str();
    sim->add_option("--threads", sim_opts.threads, "worker threads (default SQAR_THREADS or all cores)");
    sim->add_flag("--dump-dataset", sim_opts.dump_dataset, "also write replication 0 as dataset.csv/weights.csv");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitData;
    }

    try {
        if (*fit) return run_fit(fit_opts, false);
        if (*tune) return run_fit(tune_opts, true);
        return run_simulate(sim_opts);
    } catch (const sqar::NumericalError& e) {
        std::cerr << "solver failure: " << e.what() << "\n";
        return kExitSolver;
    } catch (const sqar::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const sqar::InvalidArgument& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
