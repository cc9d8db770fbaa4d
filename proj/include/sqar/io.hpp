#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <boost/tokenizer.hpp>
#include <json.hpp>

#include "sqar/estimator.hpp"
#include "sqar/simulation.hpp"
#include "sqar/spatial.hpp"

namespace sqar {

using Json = nlohmann::json;

inline constexpr const char* kResultSchema = "sqar-result/1";

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> line;  // 1-based file line of each row
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& text, std::size_t line) {
    using Sep = boost::escaped_list_separator<char>;
    std::vector<std::string> out;
    try {
        boost::tokenizer<Sep> tok(text, Sep('\\', ',', '"'));
        for (const auto& f : tok) out.push_back(trim(f));
    } catch (const boost::escaped_list_error& e) {
        throw ParseError(std::string("malformed CSV field: ") + e.what(), line, 1);
    }
    return out;
}

inline std::optional<double> to_number(const std::string& field) {
    double v = 0.0;
    const char* b = field.data();
    const char* e = b + field.size();
    if (b != e && *b == '+') ++b;
    const auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e || b == e) return std::nullopt;
    return v;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

/// Numeric CSV. With has_header the first nonblank line names the columns;
/// every other field must parse as a finite number. Blank lines are skipped.
inline CsvTable parse_csv(const std::string& text, bool has_header) {
    CsvTable t;
    std::istringstream in(text);
    std::string raw;
    std::size_t line = 0;
    std::size_t width = 0;
    bool header_pending = has_header;
    while (std::getline(in, raw)) {
        ++line;
        if (detail::trim(raw).empty()) continue;
        auto fields = detail::split_csv_line(raw, line);
        if (header_pending) {
            t.header = std::move(fields);
            width = t.header.size();
            header_pending = false;
            continue;
        }
        if (width == 0) width = fields.size();
        if (fields.size() != width) {
            throw ParseError("expected " + std::to_string(width) + " fields, found " +
                                 std::to_string(fields.size()),
                             line, std::min(fields.size(), width) + 1);
        }
        std::vector<double> row(fields.size());
        for (std::size_t c = 0; c < fields.size(); ++c) {
            const auto v = detail::to_number(fields[c]);
            if (!v || !std::isfinite(*v)) {
                throw ParseError("not a finite number: '" + fields[c] + "'", line, c + 1);
            }
            row[c] = *v;
        }
        t.rows.push_back(std::move(row));
        t.line.push_back(line);
    }
    if (has_header && header_pending) throw ParseError("missing header row", 1, 1);
    return t;
}

inline CsvTable read_csv(const std::filesystem::path& path, bool has_header) {
    return parse_csv(detail::read_text(path), has_header);
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw Error("number formatting failed");
    return std::string(buf, ptr);
}

/// Writes to a sibling temporary file and renames it over the target.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw Error("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw Error("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
    }
}

// ---------------------------------------------------------------------------
// Datasets

enum class WeightsFormat { dense_csv, triplet_csv };

inline WeightsFormat parse_weights_format(const std::string& s) {
    if (s == "dense_csv" || s == "dense") return WeightsFormat::dense_csv;
    if (s == "triplet_csv" || s == "triplet") return WeightsFormat::triplet_csv;
    throw InvalidArgument("unknown weights format '" + s + "'");
}

struct LoadedDataset {
    SqarDataset data;
    std::vector<std::string> warnings;
};

/// Dense weights: n rows of n numbers, no header.
inline Matrix read_dense_weights(const std::filesystem::path& path) {
    const CsvTable t = read_csv(path, false);
    const std::size_t n = t.rows.size();
    if (n == 0) throw ParseError("weights file is empty", 1, 1);
    if (t.rows[0].size() != n) {
        throw DimensionMismatch("dense weights have " + std::to_string(n) + " rows and " +
                                std::to_string(t.rows[0].size()) + " columns");
    }
    Matrix w(static_cast<Index>(n), static_cast<Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) w(static_cast<Index>(i), static_cast<Index>(j)) = t.rows[i][j];
    }
    return w;
}

/// Triplet weights: rows i,j,w with 0-based indices; an optional header line
/// is recognised by a non-numeric first field. Unlisted pairs are zero.
inline Matrix read_triplet_weights(const std::filesystem::path& path, Index n) {
    const std::string text = detail::read_text(path);
    std::istringstream probe(text);
    std::string first;
    while (std::getline(probe, first) && detail::trim(first).empty()) {
    }
    bool header = false;
    if (!detail::trim(first).empty()) {
        const auto f = detail::split_csv_line(first, 1);
        header = !f.empty() && !detail::to_number(f[0]);
    }
    const CsvTable t = parse_csv(text, header);
    Matrix w = Matrix::Zero(n, n);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        if (row.size() != 3) throw ParseError("triplet rows need i,j,w", t.line[r], 1);
        for (std::size_t c = 0; c < 2; ++c) {
            const double v = row[c];
            if (v != std::floor(v) || v < 0 || v >= static_cast<double>(n)) {
                throw ParseError("index " + format_double(v) + " outside [0, " + std::to_string(n) + ")",
                                 t.line[r], c + 1);
            }
        }
        w(static_cast<Index>(row[0]), static_cast<Index>(row[1])) += row[2];
    }
    return w;
}

/// Data CSV has a header; the first column is y, the rest (possibly none) are predictors.
inline LoadedDataset load_dataset(const std::filesystem::path& data_path,
                                  const std::filesystem::path& weights_path, WeightsFormat format,
                                  bool normalize = true) {
    const CsvTable t = read_csv(data_path, true);
    if (t.header.empty()) throw ParseError("missing y column", 1, 1);
    const Index n = static_cast<Index>(t.rows.size());
    const Index p = static_cast<Index>(t.header.size()) - 1;
    if (n == 0) throw ParseError("dataset has no rows", 2, 1);
    Vector y(n);
    Matrix x(n, p);
    for (Index i = 0; i < n; ++i) {
        const auto& row = t.rows[static_cast<std::size_t>(i)];
        y(i) = row[0];
        for (Index j = 0; j < p; ++j) x(i, j) = row[static_cast<std::size_t>(j + 1)];
    }

    Matrix w = format == WeightsFormat::dense_csv ? read_dense_weights(weights_path)
                                                  : read_triplet_weights(weights_path, n);
    if (w.rows() != n) {
        throw DimensionMismatch("weights are " + std::to_string(w.rows()) + "x" +
                                std::to_string(w.cols()) + " but the dataset has n=" + std::to_string(n));
    }
    LoadedDataset out;
    std::vector<Index> empty;
    for (Index i = 0; i < n; ++i) {
        if (w.row(i).sum() == 0.0) empty.push_back(i);
    }
    if (!empty.empty()) {
        std::string list;
        for (std::size_t k = 0; k < empty.size() && k < 10; ++k) {
            list += (k ? "," : "") + std::to_string(empty[k]);
        }
        if (empty.size() > 10) list += ",...";
        out.warnings.push_back(std::to_string(empty.size()) + " unit(s) have no neighbours (rows " +
                               list + ")");
    }
    SpatialWeights weights(std::move(w));
    if (normalize && !weights.row_normalized()) {
        weights = row_normalize(weights);
        out.warnings.push_back("weights were row-normalized");
    }
    out.data = SqarDataset(std::move(y), std::move(x), std::move(weights));
    return out;
}

inline std::string dataset_csv(const SqarDataset& d) {
    std::string s = "y";
    for (Index j = 0; j < d.p(); ++j) s += ",x" + std::to_string(j + 1);
    s += '\n';
    for (Index i = 0; i < d.n(); ++i) {
        s += format_double(d.y()(i));
        for (Index j = 0; j < d.p(); ++j) s += "," + format_double(d.x()(i, j));
        s += '\n';
    }
    return s;
}

inline std::string dense_weights_csv(const SpatialWeights& w) {
    std::string s;
    for (Index i = 0; i < w.n(); ++i) {
        for (Index j = 0; j < w.n(); ++j) s += (j ? "," : "") + format_double(w(i, j));
        s += '\n';
    }
    return s;
}

// ---------------------------------------------------------------------------
// Quantile grids

/// "a:b:step" (inclusive, step > 0) or a comma-separated list.
inline QuantileGrid parse_taus(const std::string& spec) {
    const std::string s = detail::trim(spec);
    std::vector<double> taus;
    if (s.find(':') != std::string::npos) {
        std::vector<double> parts;
        std::size_t start = 0;
        for (;;) {
            const auto pos = s.find(':', start);
            const std::string f = detail::trim(s.substr(start, pos == std::string::npos ? pos : pos - start));
            const auto v = detail::to_number(f);
            if (!v) throw InvalidArgument("bad quantile range '" + spec + "'");
            parts.push_back(*v);
            if (pos == std::string::npos) break;
            start = pos + 1;
        }
        if (parts.size() != 3 || !(parts[2] > 0.0) || parts[1] < parts[0]) {
            throw InvalidArgument("quantile range must be a:b:step with a <= b and step > 0");
        }
        const auto count = static_cast<long>(std::floor((parts[1] - parts[0]) / parts[2] + 1e-9));
        for (long k = 0; k <= count; ++k) {
            // snap to 12 decimals so 0.1:0.9:0.1 gives exactly 0.3, 0.7, ...
            const double v = parts[0] + static_cast<double>(k) * parts[2];
            taus.push_back(std::round(v * 1e12) / 1e12);
        }
    } else {
        for (const auto& f : detail::split_csv_line(s, 1)) {
            const auto v = detail::to_number(f);
            if (!v) throw InvalidArgument("bad quantile level '" + f + "'");
            taus.push_back(*v);
        }
    }
    return QuantileGrid(std::move(taus));
}

// ---------------------------------------------------------------------------
// Fit results

inline std::string coefficients_csv(const FitResult& fit) {
    const CoefficientSheet& s = fit.sheet;
    std::string out = "tau,alpha,lambda";
    for (Index j = 0; j < s.p(); ++j) out += ",beta_" + std::to_string(j + 1);
    out += ",sigma2\n";
    for (Index k = 0; k < s.K(); ++k) {
        out += format_double(fit.grid[k]) + "," + format_double(s.alpha(k)) + "," +
               format_double(s.lambda(k));
        for (Index j = 0; j < s.p(); ++j) out += "," + format_double(s.beta(k, j));
        out += ",";
        if (s.sigma2) out += format_double((*s.sigma2)(k));
        out += '\n';
    }
    return out;
}

/// One row per adjacent quantile pair; 1 marks a fused difference.
inline std::string fused_mask_csv(const FitResult& fit) {
    const Index p = fit.sheet.p();
    std::string out = "tau_lower,tau_upper,lambda";
    for (Index j = 0; j < p; ++j) out += ",beta_" + std::to_string(j + 1);
    out += '\n';
    for (Index k = 0; k < fit.fused_mask.rows(); ++k) {
        out += format_double(fit.grid[k]) + "," + format_double(fit.grid[k + 1]);
        for (Index l = 0; l <= p; ++l) out += fit.fused_mask(k, l) ? ",1" : ",0";
        out += '\n';
    }
    return out;
}

inline std::string tuning_trace_csv(const FitResult& fit) {
    std::string out = "t,loss,edf,aic,bic,chosen\n";
    if (!fit.trace) return out;
    const TuningTrace& tr = *fit.trace;
    for (std::size_t j = 0; j < tr.grid.size(); ++j) {
        out += format_double(tr.grid[j]) + "," + format_double(tr.loss[j]) + "," +
               std::to_string(tr.edf[j]) + "," + format_double(tr.aic[j]) + "," +
               format_double(tr.bic[j]) + "," + (j == tr.chosen ? "1" : "0") + "\n";
    }
    return out;
}

namespace detail {

inline Json vector_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector json_vector(const Json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

inline Json matrix_json(const Matrix& m) {
    Json rows = Json::array();
    for (Index i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i).transpose()));
    return rows;
}

inline Matrix json_matrix(const Json& j, Index cols) {
    Matrix m(static_cast<Index>(j.size()), cols);
    for (Index i = 0; i < m.rows(); ++i) {
        const Vector r = json_vector(j.at(static_cast<std::size_t>(i)));
        if (r.size() != cols) throw DataError("ragged matrix in result file");
        m.row(i) = r.transpose();
    }
    return m;
}

}  // namespace detail

inline Json to_json(const FitResult& fit) {
    Json j;
    j["schema"] = kResultSchema;
    j["method"] = to_string(fit.method);
    j["taus"] = fit.grid.taus();
    j["alpha"] = detail::vector_json(fit.sheet.alpha);
    j["lambda"] = detail::vector_json(fit.sheet.lambda);
    j["beta"] = detail::matrix_json(fit.sheet.beta);
    j["sigma2"] = fit.sheet.sigma2 ? detail::vector_json(*fit.sheet.sigma2) : Json(nullptr);
    Json mask = Json::array();
    for (Index k = 0; k < fit.fused_mask.rows(); ++k) {
        std::vector<bool> row;
        for (Index l = 0; l < fit.fused_mask.cols(); ++l) row.push_back(fit.fused_mask(k, l));
        mask.push_back(row);
    }
    j["fused_mask"] = mask;
    j["quantile_loss"] = detail::vector_json(fit.quantile_loss);
    j["edf"] = edf(fit);
    j["chosen_t"] = fit.chosen_t ? Json(*fit.chosen_t) : Json(nullptr);
    if (fit.trace) {
        const TuningTrace& tr = *fit.trace;
        j["trace"] = {{"criterion", to_string(tr.criterion)}, {"grid", tr.grid}, {"loss", tr.loss},
                      {"edf", tr.edf}, {"aic", tr.aic}, {"bic", tr.bic}, {"chosen", tr.chosen}};
    } else {
        j["trace"] = nullptr;
    }
    j["warnings"] = fit.warnings;
    return j;
}

inline FitResult fit_result_from_json(const Json& j) {
    try {
        if (j.at("schema").get<std::string>() != kResultSchema) {
            throw DataError("unsupported result schema '" + j.at("schema").get<std::string>() + "'");
        }
        FitResult fit;
        fit.method = parse_method(j.at("method").get<std::string>());
        fit.grid = QuantileGrid(j.at("taus").get<std::vector<double>>());
        const Vector alpha = detail::json_vector(j.at("alpha"));
        const Index p = j.at("beta").empty() ? 0 : static_cast<Index>(j.at("beta").at(0).size());
        fit.sheet = CoefficientSheet(alpha, detail::json_vector(j.at("lambda")),
                                     detail::json_matrix(j.at("beta"), p));
        if (!j.at("sigma2").is_null()) fit.sheet.sigma2 = detail::json_vector(j.at("sigma2"));
        const Json& mask = j.at("fused_mask");
        fit.fused_mask.resize(static_cast<Index>(mask.size()), p + 1);
        for (Index k = 0; k < fit.fused_mask.rows(); ++k) {
            const auto row = mask.at(static_cast<std::size_t>(k)).get<std::vector<bool>>();
            if (static_cast<Index>(row.size()) != p + 1) throw DataError("ragged fused mask");
            for (Index l = 0; l <= p; ++l) fit.fused_mask(k, l) = row[static_cast<std::size_t>(l)];
        }
        fit.quantile_loss = detail::json_vector(j.at("quantile_loss"));
        if (!j.at("chosen_t").is_null()) fit.chosen_t = j.at("chosen_t").get<double>();
        if (!j.at("trace").is_null()) {
            const Json& t = j.at("trace");
            TuningTrace tr;
            tr.criterion = parse_criterion(t.at("criterion").get<std::string>());
            tr.grid = t.at("grid").get<std::vector<double>>();
            tr.loss = t.at("loss").get<std::vector<double>>();
            tr.edf = t.at("edf").get<std::vector<int>>();
            tr.aic = t.at("aic").get<std::vector<double>>();
            tr.bic = t.at("bic").get<std::vector<double>>();
            tr.chosen = t.at("chosen").get<std::size_t>();
            fit.trace = std::move(tr);
        }
        fit.warnings = j.at("warnings").get<std::vector<std::string>>();
        return fit;
    } catch (const Json::exception& e) {
        throw DataError(std::string("malformed result file: ") + e.what());
    }
}

/// Writes coefficients.csv, fused_mask.csv, tuning_trace.csv and result.json.
inline void write_fit_outputs(const std::filesystem::path& dir, const FitResult& fit) {
    write_file_atomic(dir / "coefficients.csv", coefficients_csv(fit));
    write_file_atomic(dir / "fused_mask.csv", fused_mask_csv(fit));
    write_file_atomic(dir / "tuning_trace.csv", tuning_trace_csv(fit));
    write_file_atomic(dir / "result.json", to_json(fit).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Simulation studies

struct StudyConfig {
    SimDesign design;
    std::vector<Method> methods{Method::rq, Method::fl, Method::fal, Method::fs, Method::fas};
    Criterion criterion = Criterion::bic;
    int grid_size = 50;
};

/// Required: example, n. Optional: setting, lambda, reps, seed, methods,
/// criterion, grid_size, noise_scale, taus, and overrides alpha, beta, b, c0, c.
inline StudyConfig study_config_from_json(const Json& j) {
    try {
        StudyConfig cfg;
        const int example = j.at("example").get<int>();
        const std::string setting = j.value("setting", example == 3 ? std::string() : std::string("IV"));
        cfg.design = example_design(example, setting, j.at("n").get<int>(), j.value("lambda", 0.5));
        SimDesign& d = cfg.design;
        d.reps = j.value("reps", 100);
        d.seed = j.value("seed", std::uint64_t{1});
        d.noise_scale = j.value("noise_scale", 1.0);
        if (j.contains("taus")) d.taus = j.at("taus").get<std::vector<double>>();
        if (j.contains("alpha")) d.alpha = j.at("alpha").get<double>();
        if (j.contains("beta")) d.beta = j.at("beta").get<std::vector<double>>();
        if (j.contains("b")) d.b = j.at("b").get<double>();
        if (j.contains("c0")) d.c0 = j.at("c0").get<double>();
        if (j.contains("c")) d.c = j.at("c").get<std::vector<double>>();
        if (j.contains("methods")) {
            cfg.methods.clear();
            for (const auto& m : j.at("methods")) cfg.methods.push_back(parse_method(m.get<std::string>()));
        }
        if (j.contains("criterion")) cfg.criterion = parse_criterion(j.at("criterion").get<std::string>());
        cfg.grid_size = j.value("grid_size", 50);
        d.validate();
        return cfg;
    } catch (const Json::exception& e) {
        throw InvalidArgument(std::string("bad study config: ") + e.what());
    }
}

inline StudyConfig read_study_config(const std::filesystem::path& path) {
    try {
        return study_config_from_json(Json::parse(detail::read_text(path)));
    } catch (const Json::parse_error& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what(), 1, e.byte);
    }
}

inline std::string medse_csv(const MedseTable& t) {
    std::string out = "method,tau,medse,reps_used\n";
    for (std::size_t m = 0; m < t.methods.size(); ++m) {
        for (std::size_t k = 0; k < t.taus.size(); ++k) {
            out += std::string(to_string(t.methods[m])) + "," + format_double(t.taus[k]) + "," +
                   format_double(t.medse(static_cast<Index>(m), static_cast<Index>(k))) + "," +
                   std::to_string(t.reps_used) + "\n";
        }
    }
    return out;
}

/// Long format: mean estimate over successful replications next to the truth.
inline std::string coefficient_paths_csv(const StudyResult& r) {
    std::string out = "method,tau,coefficient,estimate,truth\n";
    const Index p = r.truth.p();
    std::vector<std::string> names{"alpha", "lambda"};
    for (Index j = 0; j < p; ++j) names.push_back("beta_" + std::to_string(j + 1));
    for (std::size_t m = 0; m < r.table.methods.size(); ++m) {
        const CoefficientSheet mean = r.mean_sheet(m);
        for (Index k = 0; k < r.truth.K(); ++k) {
            const Vector est = mean.row(k);
            const Vector tru = r.truth.row(k);
            for (Index c = 0; c < est.size(); ++c) {
                out += std::string(to_string(r.table.methods[m])) + "," +
                       format_double(r.table.taus[static_cast<std::size_t>(k)]) + "," +
                       names[static_cast<std::size_t>(c)] + "," + format_double(est(c)) + "," +
                       format_double(tru(c)) + "\n";
            }
        }
    }
    return out;
}

}  // namespace sqar
