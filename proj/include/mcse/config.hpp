#pragma once

// Declarative scenario and solver documents, resolved-config hashing and the
// JSON run log.

#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>

#include <json.hpp>

#include "bench.hpp"
#include "datamatrix.hpp"
#include "keyvalue.hpp"
#include "solver.hpp"

namespace mcse {

namespace detail {

inline void reject_unknown_keys(const KeyValueDocument &doc, std::initializer_list<std::string_view> known) {
    for (const auto &k : doc.keys())
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ParseError("unknown key", doc.line_of(k), k);
}

inline double fraction_key(const KeyValueDocument &doc, const std::string &key, double fallback) {
    const double v = doc.get_double_or(key, fallback);
    if (!(v >= 0.0 && v <= 1.0))
        throw ParseError("must lie in [0, 1]", doc.line_of(key), key);
    return v;
}

inline DataClass class_key(const KeyValueDocument &doc, const std::string &key) {
    const auto v = doc.get_or(key, "M");
    if (v.size() != 1)
        throw ParseError("expected one of 0, P, M", doc.line_of(key), key);
    try {
        return data_class_from_char(v[0]);
    } catch (const Error &e) {
        throw ParseError(e.what(), doc.line_of(key), key);
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Scenario documents
//
//   kind = random | data_driven | augmented | timeseries
//   fraction = 0.3                       random
//   solar = M  large_load = P  small_load = P, *_coverage = 1   data_driven, augmented
//   availability = 0.5  loss = 0.2       timeseries
//   measurement_sigma = 0.01  pseudo_sigma = 0.1  seed = 0
//   [sensors]  ami|magnitude <bus id>    augmented

inline Scenario parse_scenario(std::string_view document, const Network &net) {
    const auto doc = KeyValueDocument::parse(document);
    detail::reject_unknown_keys(doc, {"kind", "fraction", "solar", "large_load", "small_load", "solar_coverage",
                                      "large_coverage", "small_coverage", "availability", "loss",
                                      "measurement_sigma", "pseudo_sigma", "seed"});
    Scenario sc;
    sc.measurement_sigma = doc.get_double_or("measurement_sigma", 0.01);
    sc.pseudo_sigma = doc.get_double_or("pseudo_sigma", 0.10);
    if (!(sc.measurement_sigma >= 0))
        throw ParseError("must be nonnegative", doc.line_of("measurement_sigma"), "measurement_sigma");
    if (!(sc.pseudo_sigma >= 0))
        throw ParseError("must be nonnegative", doc.line_of("pseudo_sigma"), "pseudo_sigma");
    const auto seed = doc.get_integer_or("seed", 0);
    if (seed < 0)
        throw ParseError("must be nonnegative", doc.line_of("seed"), "seed");
    sc.seed = static_cast<std::uint64_t>(seed);

    auto data_driven = [&] {
        DataDriven d;
        d.solar = detail::class_key(doc, "solar");
        d.large_load = detail::class_key(doc, "large_load");
        d.small_load = detail::class_key(doc, "small_load");
        d.solar_coverage = detail::fraction_key(doc, "solar_coverage", 1.0);
        d.large_coverage = detail::fraction_key(doc, "large_coverage", 1.0);
        d.small_coverage = detail::fraction_key(doc, "small_coverage", 1.0);
        return d;
    };

    const auto kind = doc.get_or("kind", "random");
    if (kind == "random") {
        sc.kind = RandomBusSampling{detail::fraction_key(doc, "fraction", 0.0)};
    } else if (kind == "data_driven") {
        sc.kind = data_driven();
    } else if (kind == "augmented") {
        FullObservabilityAugmented a{data_driven(), {}};
        for (const auto &row : doc.table("sensors")) {
            if (row.fields.size() != 2)
                throw ParseError("sensor row needs: ami|magnitude bus", row.line);
            SensorAddition s{SensorType::Ami, 0};
            if (row.fields[0] == "magnitude")
                s.type = SensorType::Magnitude;
            else if (row.fields[0] != "ami")
                throw ParseError("unknown sensor type '" + row.fields[0] + "'", row.line, "sensors");
            const auto id = static_cast<int>(text::parse_integer(row.fields[1], row.line, "bus"));
            try {
                s.bus = net.index_of(id);
            } catch (const Error &e) {
                throw ParseError(e.what(), row.line, "bus");
            }
            if (s.bus == 0)
                throw ParseError("sensors cannot be added at the slack bus", row.line, "bus");
            a.added.push_back(s);
        }
        sc.kind = std::move(a);
    } else if (kind == "timeseries") {
        sc.kind = TimeSeries{detail::fraction_key(doc, "availability", 0.5), detail::fraction_key(doc, "loss", 0.2)};
    } else {
        throw ParseError("unknown scenario kind '" + kind + "'", doc.line_of("kind"), "kind");
    }
    return sc;
}

/// Fully resolved document: every key written, defaults included.
inline std::string write_scenario(const Scenario &sc, const Network &net) {
    std::ostringstream out;
    auto data_driven = [&](const DataDriven &d) {
        out << "solar = " << to_char(d.solar) << "\nlarge_load = " << to_char(d.large_load)
            << "\nsmall_load = " << to_char(d.small_load) << "\nsolar_coverage = " << text::format_double(d.solar_coverage)
            << "\nlarge_coverage = " << text::format_double(d.large_coverage)
            << "\nsmall_coverage = " << text::format_double(d.small_coverage) << "\n";
    };
    std::visit(
        [&](const auto &k) {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, RandomBusSampling>) {
                out << "kind = random\nfraction = " << text::format_double(k.fraction) << "\n";
            } else if constexpr (std::is_same_v<T, DataDriven>) {
                out << "kind = data_driven\n";
                data_driven(k);
            } else if constexpr (std::is_same_v<T, FullObservabilityAugmented>) {
                out << "kind = augmented\n";
                data_driven(k.base);
            } else {
                out << "kind = timeseries\navailability = " << text::format_double(k.availability)
                    << "\nloss = " << text::format_double(k.loss) << "\n";
            }
        },
        sc.kind);
    out << "measurement_sigma = " << text::format_double(sc.measurement_sigma)
        << "\npseudo_sigma = " << text::format_double(sc.pseudo_sigma) << "\nseed = " << sc.seed << "\n";
    if (const auto *a = std::get_if<FullObservabilityAugmented>(&sc.kind)) {
        out << "\n[sensors]\n";
        for (const auto &s : a->added)
            out << (s.type == SensorType::Ami ? "ami " : "magnitude ") << net.buses[s.bus].id << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Solver documents
//
//   delta = auto | <number>
//   weight_ohm, weight_vlin, weight_vmag, weight_slack = inf | <number>
//   residual_norm = l1 | l2
//   max_iter, tol_primal, tol_dual, rho, relaxation
//   standardize_columns = true | false

inline SolverConfig parse_solver_config(std::string_view document) {
    const auto doc = KeyValueDocument::parse(document);
    detail::reject_unknown_keys(doc, {"delta", "weight_ohm", "weight_vlin", "weight_vmag", "weight_slack",
                                      "residual_norm", "max_iter", "tol_primal", "tol_dual", "rho", "relaxation",
                                      "standardize_columns", "record_history"});
    SolverConfig cfg;
    if (doc.has("delta") && doc.get("delta") != "auto")
        cfg.delta = doc.get_double("delta");
    cfg.weights.ohm = doc.get_double_or("weight_ohm", cfg.weights.ohm);
    cfg.weights.vlin = doc.get_double_or("weight_vlin", cfg.weights.vlin);
    cfg.weights.vmag = doc.get_double_or("weight_vmag", cfg.weights.vmag);
    cfg.weights.slack = doc.get_double_or("weight_slack", cfg.weights.slack);
    const auto norm = doc.get_or("residual_norm", "l1");
    if (norm == "l1" || norm == "L1")
        cfg.residual_norm = ResidualNorm::L1;
    else if (norm == "l2" || norm == "L2")
        cfg.residual_norm = ResidualNorm::L2;
    else
        throw ParseError("expected l1 or l2", doc.line_of("residual_norm"), "residual_norm");
    cfg.max_iter = static_cast<int>(doc.get_integer_or("max_iter", cfg.max_iter));
    cfg.tol_primal = doc.get_double_or("tol_primal", cfg.tol_primal);
    cfg.tol_dual = doc.get_double_or("tol_dual", cfg.tol_dual);
    cfg.rho = doc.get_double_or("rho", cfg.rho);
    cfg.relaxation = doc.get_double_or("relaxation", cfg.relaxation);
    cfg.standardize_columns = doc.get_bool_or("standardize_columns", cfg.standardize_columns);
    cfg.record_history = doc.get_bool_or("record_history", cfg.record_history);
    try {
        validate(cfg);
    } catch (const Error &e) {
        throw ParseError(e.what(), 0, "solver");
    }
    return cfg;
}

inline std::string write_solver_config(const SolverConfig &cfg) {
    std::ostringstream out;
    out << "delta = " << (cfg.delta ? text::format_double(*cfg.delta) : std::string("auto")) << "\n"
        << "weight_ohm = " << text::format_double(cfg.weights.ohm) << "\n"
        << "weight_vlin = " << text::format_double(cfg.weights.vlin) << "\n"
        << "weight_vmag = " << text::format_double(cfg.weights.vmag) << "\n"
        << "weight_slack = " << text::format_double(cfg.weights.slack) << "\n"
        << "residual_norm = " << (cfg.residual_norm == ResidualNorm::L1 ? "l1" : "l2") << "\n"
        << "max_iter = " << cfg.max_iter << "\n"
        << "tol_primal = " << text::format_double(cfg.tol_primal) << "\n"
        << "tol_dual = " << text::format_double(cfg.tol_dual) << "\n"
        << "rho = " << text::format_double(cfg.rho) << "\n"
        << "relaxation = " << text::format_double(cfg.relaxation) << "\n"
        << "standardize_columns = " << (cfg.standardize_columns ? "true" : "false") << "\n"
        << "record_history = " << (cfg.record_history ? "true" : "false") << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Run log

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char *digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int k = 15; k >= 0; --k, v >>= 4)
        out[static_cast<std::size_t>(k)] = digits[v & 0xf];
    return out;
}

inline nlohmann::json to_json(const SolverDiagnostics &d) {
    nlohmann::json residuals = nlohmann::json::object();
    for (const auto &[tag, v] : d.residual_norms)
        residuals[to_string(tag)] = v;
    return {{"iterations", d.iterations},
            {"converged", d.converged},
            {"infeasible", d.infeasible},
            {"warning", d.warning},
            {"primal_residual", d.primal_residual},
            {"dual_residual", d.dual_residual},
            {"objective", d.objective},
            {"nuclear_norm", d.nuclear_norm},
            {"data_fit", d.data_fit},
            {"delta", d.delta},
            {"duplication_violation", d.duplication_violation},
            {"residual_norms", residuals}};
}

/// One record per run: resolved configs, their hash, seed, diagnostics and
/// metrics.
inline nlohmann::json run_log_record(const std::string &case_name, const std::string &scenario_doc,
                                     const std::string &solver_doc, const EstimationResult &r) {
    const std::string resolved = "case = " + case_name + "\n" + scenario_doc + "\n" + solver_doc;
    nlohmann::json rec{{"case", case_name},
                       {"scenario", scenario_doc},
                       {"solver", solver_doc},
                       {"config_hash", hex64(fnv1a(resolved))},
                       {"seed", r.seed},
                       {"method", to_string(r.method)},
                       {"failed", r.failed},
                       {"magnitude_mape", r.magnitude_mape},
                       {"angle_mae", r.angle_mae},
                       {"runtime_s", r.runtime_s}};
    if (r.failed)
        rec["error"] = r.error;
    if (r.method == Method::MatrixCompletion)
        rec["diagnostics"] = to_json(r.diagnostics);
    else
        rec["wls_iterations"] = r.wls_iterations;
    return rec;
}

} // namespace mcse
