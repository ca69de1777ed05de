#pragma once

// Experiment harness: error metrics, seeded Monte Carlo sweeps, sensor
// augmentation, load/solar profiles and time-series runs with data loss.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "common.hpp"
#include "datamatrix.hpp"
#include "linearize.hpp"
#include "netmodel.hpp"
#include "powerflow.hpp"
#include "solver.hpp"
#include "wls.hpp"

namespace mcse {

struct Metrics {
    double magnitude_mape = 0.0;  // percent
    double angle_mae = 0.0;       // degrees
};

/// Angle difference in degrees wrapped to (-180, 180].
inline double wrap_degrees(double d) {
    d = std::fmod(d, 360.0);
    if (d <= -180.0)
        d += 360.0;
    else if (d > 180.0)
        d -= 360.0;
    return d;
}

/// Errors over the non-slack buses (index 0 is the slack).
inline Metrics metrics(const Vec &est_mag, const Vec &est_angle_deg, const CVec &truth) {
    const Index n = truth.size();
    if (est_mag.size() != n || est_angle_deg.size() != n)
        throw DimensionError("metrics: estimate and truth cover different bus sets");
    if (n < 2)
        throw DimensionError("metrics: no non-slack bus");
    Metrics m;
    for (Index b = 1; b < n; ++b) {
        const double mag = std::abs(truth(b));
        if (mag == 0.0)
            throw Error("metrics: true voltage magnitude is zero at bus " + std::to_string(b));
        m.magnitude_mape += 100.0 * std::abs(est_mag(b) - mag) / mag;
        m.angle_mae += std::abs(wrap_degrees(est_angle_deg(b) - to_degrees(std::arg(truth(b)))));
    }
    m.magnitude_mape /= static_cast<double>(n - 1);
    m.angle_mae /= static_cast<double>(n - 1);
    return m;
}

inline Metrics metrics(const VoltageEstimate &est, const CVec &truth) {
    return metrics(est.magnitude, est.angle_deg, truth);
}

inline Metrics metrics(const CVec &est, const CVec &truth) { return metrics(make_estimate(est), truth); }

enum class Method { MatrixCompletion, Wls };

inline const char *to_string(Method m) { return m == Method::MatrixCompletion ? "mc" : "wls"; }

struct EstimationResult {
    Method method = Method::MatrixCompletion;
    CVec estimate;
    CVec truth;
    double magnitude_mape = 0.0;
    double angle_mae = 0.0;
    std::string scenario;
    std::uint64_t seed = 0;
    SolverDiagnostics diagnostics;
    int wls_iterations = 0;
    double runtime_s = 0.0;
    bool failed = false;
    std::string error;
};

/// Everything that stays fixed across runs on one operating point.
struct Experiment {
    Network net;
    AdmittanceBlocks blocks;
    PowerFlowSolution truth;
    LinearModel model;
    DataMatrix matrix;
    ConstraintSet constraints;
};

inline Experiment make_experiment(const Network &net, Formulation f = Formulation::Branch) {
    auto blocks = build_admittance(net);
    auto truth = solve_power_flow(net, blocks, net.nonslack_injections());
    auto model = build_linear_model(blocks, net.slack_voltage);
    auto matrix = build_data_matrix(net, truth, f);
    auto cs = assemble_constraints(net, blocks, model, matrix.layout);
    return {net, std::move(blocks), std::move(truth), std::move(model), std::move(matrix), std::move(cs)};
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void score(EstimationResult &r, const VoltageEstimate &est, const CVec &truth) {
    r.estimate = est.v;
    r.truth = truth;
    const auto m = metrics(est, truth);
    r.magnitude_mape = m.magnitude_mape;
    r.angle_mae = m.angle_mae;
}

} // namespace detail

inline EstimationResult estimate_mc(const Experiment &ex, const ObservedMatrix &om, const SolverConfig &cfg,
                                    const CVec &truth) {
    EstimationResult r;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const auto cm = solve_mc(om, ex.constraints, cfg);
        detail::score(r, extract_state(cm, om.layout, ex.net.slack_voltage), truth);
        r.diagnostics = cm.diagnostics;
    } catch (const std::exception &e) {
        r.failed = true;
        r.error = e.what();
    }
    r.runtime_s = detail::seconds_since(t0);
    return r;
}

inline EstimationResult estimate_wls(const Experiment &ex, const ObservedMatrix &om, const CVec &truth) {
    EstimationResult r;
    r.method = Method::Wls;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        const auto w = wls_estimate(measurements_from_observations(om), ex.net);
        detail::score(r, w.estimate, truth);
        r.wls_iterations = w.iterations;
    } catch (const std::exception &e) {
        r.failed = true;
        r.error = e.what();
    }
    r.runtime_s = detail::seconds_since(t0);
    return r;
}

/// One seeded draw of the scenario on the experiment's operating point.
inline EstimationResult run_once(const Experiment &ex, const Scenario &sc, const SolverConfig &cfg, std::uint64_t seed,
                                 Method method = Method::MatrixCompletion) {
    std::mt19937_64 rng(seed);
    EstimationResult r;
    try {
        const auto om = apply_observation_model(ex.net, ex.matrix, sc, rng);
        r = method == Method::MatrixCompletion ? estimate_mc(ex, om, cfg, ex.truth.v) : estimate_wls(ex, om, ex.truth.v);
    } catch (const std::exception &e) {
        r.method = method;
        r.failed = true;
        r.error = e.what();
    }
    r.scenario = describe(sc);
    r.seed = seed;
    return r;
}

// ---------------------------------------------------------------------------
// Sweeps

struct Stats {
    double mean = 0.0;
    double median = 0.0;
    double std = 0.0;  // sample standard deviation
    int count = 0;
};

inline Stats summarize(std::vector<double> v) {
    Stats s;
    s.count = static_cast<int>(v.size());
    if (v.empty())
        return s;
    std::sort(v.begin(), v.end());
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    const std::size_t h = v.size() / 2;
    s.median = v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v)
            ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return s;
}

struct SweepPoint {
    std::string label;  // availability or scenario code
    double x = 0.0;
    Method method = Method::MatrixCompletion;
    std::vector<EstimationResult> runs;  // ordered by run index
    Stats mape;
    Stats mae;
    Stats runtime;
    int failed = 0;
    int not_converged = 0;

    /// Statistics over the successful runs.
    void aggregate() {
        std::vector<double> a, b, t;
        failed = not_converged = 0;
        for (const auto &r : runs) {
            t.push_back(r.runtime_s);
            if (r.failed) {
                ++failed;
                continue;
            }
            if (r.method == Method::MatrixCompletion && !r.diagnostics.converged)
                ++not_converged;
            a.push_back(r.magnitude_mape);
            b.push_back(r.angle_mae);
        }
        mape = summarize(a);
        mae = summarize(b);
        runtime = summarize(t);
    }
};

struct SweepResult {
    std::string name;
    std::vector<SweepPoint> points;
    double runtime_s = 0.0;
};

inline unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Runs job(i) for i in [0, n) on `threads` workers; results land by index.
template <class T>
std::vector<T> parallel_map(std::size_t n, unsigned threads, const std::function<T(std::size_t)> &job) {
    std::vector<T> out(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++)
            out[i] = job(i);
    };
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
    if (threads == 1) {
        worker();
        return out;
    }
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < threads; ++k)
        pool.emplace_back(worker);
    for (auto &t : pool)
        t.join();
    return out;
}

struct SweepOptions {
    int runs = 50;
    std::uint64_t seed0 = 0;
    unsigned threads = default_threads();
    Method method = Method::MatrixCompletion;
};

struct GridPoint {
    std::string label;
    double x = 0.0;
    Scenario scenario;
};

/// Every grid point gets runs with seeds seed0 + i.
inline SweepResult run_sweep(const Experiment &ex, const std::vector<GridPoint> &grid, const SolverConfig &cfg,
                             const SweepOptions &opt, std::string name = {}) {
    if (opt.runs < 1)
        throw Error("run count must be positive");
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t runs = static_cast<std::size_t>(opt.runs);
    auto all = parallel_map<EstimationResult>(grid.size() * runs, opt.threads, [&](std::size_t k) {
        return run_once(ex, grid[k / runs].scenario, cfg, opt.seed0 + k % runs, opt.method);
    });
    SweepResult out{std::move(name), {}, 0.0};
    for (std::size_t g = 0; g < grid.size(); ++g) {
        SweepPoint p;
        p.label = grid[g].label;
        p.x = grid[g].x;
        p.method = opt.method;
        p.runs.assign(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(g * runs)),
                      std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>((g + 1) * runs)));
        p.aggregate();
        out.points.push_back(std::move(p));
    }
    out.runtime_s = detail::seconds_since(t0);
    return out;
}

inline SweepResult run_scenario(const Experiment &ex, const Scenario &sc, const SolverConfig &cfg,
                                const SweepOptions &opt) {
    return run_sweep(ex, {{describe(sc), 0.0, sc}}, cfg, opt, describe(sc));
}

inline std::vector<GridPoint> availability_grid(int steps = 10, double measurement_sigma = 0.01) {
    std::vector<GridPoint> grid;
    for (int k = 0; k <= steps; ++k) {
        Scenario sc;
        const double f = static_cast<double>(k) / steps;
        sc.kind = RandomBusSampling{f};
        sc.measurement_sigma = measurement_sigma;
        grid.push_back({text::format_double(100.0 * f), 100.0 * f, sc});
    }
    return grid;
}

/// The 27 solar/large/small combinations of {0, P, M}.
inline std::vector<std::string> data_driven_codes() {
    std::vector<std::string> out;
    for (char s : {'0', 'P', 'M'})
        for (char l : {'0', 'P', 'M'})
            for (char m : {'0', 'P', 'M'})
                out.push_back({s, l, m});
    return out;
}

inline DataDriven data_driven_from_code(const std::string &code) {
    if (code.size() != 3)
        throw Error("data-driven code '" + code + "' needs three characters, e.g. MPP");
    DataDriven d;
    d.solar = data_class_from_char(code[0]);
    d.large_load = data_class_from_char(code[1]);
    d.small_load = data_class_from_char(code[2]);
    return d;
}

inline std::vector<GridPoint> data_driven_grid(const std::vector<std::string> &codes) {
    std::vector<GridPoint> grid;
    for (std::size_t k = 0; k < codes.size(); ++k) {
        Scenario sc;
        sc.kind = data_driven_from_code(codes[k]);
        grid.push_back({codes[k], static_cast<double>(k), sc});
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Sensor augmentation

inline bool plan_observable(const Experiment &ex, const ObservationPlan &plan) {
    std::mt19937_64 unused(0);
    const auto om = apply_observation_plan(ex.matrix, plan, 0.0, 0.0, unused);
    return check_observability(measurements_from_observations(om), ex.net).observable;
}

/// Adds AMI and magnitude sensors in random order at buses that lack them
/// until the WLS Jacobian has full rank. The base plan is drawn from `rng`.
template <class Rng>
Scenario augment_to_full_observability(const Experiment &ex, const Scenario &base, Rng &rng) {
    validate(base);
    DataDriven dd;
    std::vector<SensorAddition> added;
    if (const auto *d = std::get_if<DataDriven>(&base.kind))
        dd = *d;
    else if (const auto *a = std::get_if<FullObservabilityAugmented>(&base.kind))
        dd = a->base, added = a->added;
    else
        throw Error("sensor augmentation needs a data-driven scenario");

    auto plan = data_driven_plan(ex.net, ex.matrix.layout, dd, rng);
    for (const auto &s : added)
        add_sensor(plan, ex.matrix.layout, s);

    using K = QuantityKind;
    std::vector<SensorAddition> candidates;
    for (Index b = 1; b < ex.net.bus_count(); ++b) {
        if (!plan.count({K::ReS, b}) || !plan.count({K::ImS, b}))
            candidates.push_back({SensorType::Ami, b});
        if (!plan.count({K::AbsV, b}))
            candidates.push_back({SensorType::Magnitude, b});
    }
    std::shuffle(candidates.begin(), candidates.end(), rng);

    std::size_t next = 0;
    while (!plan_observable(ex, plan) && next < candidates.size()) {
        add_sensor(plan, ex.matrix.layout, candidates[next]);
        added.push_back(candidates[next++]);
    }
    Scenario out = base;
    out.kind = FullObservabilityAugmented{dd, std::move(added)};
    return out;
}

inline std::size_t added_sensor_count(const Scenario &sc) {
    const auto *a = std::get_if<FullObservabilityAugmented>(&sc.kind);
    return a ? a->added.size() : 0;
}

struct ComparisonRun {
    EstimationResult mc;
    EstimationResult wls;
    std::size_t sensors_added = 0;
};

/// Augments the data-driven scenario per seed, then estimates with both
/// methods on the same noisy observations.
inline ComparisonRun compare_at_full_observability(const Experiment &ex, const Scenario &base, const SolverConfig &cfg,
                                                   std::uint64_t seed) {
    ComparisonRun out;
    std::mt19937_64 placement(seed);
    Scenario sc;
    try {
        sc = augment_to_full_observability(ex, base, placement);
    } catch (const std::exception &e) {
        out.mc.failed = out.wls.failed = true;
        out.mc.error = out.wls.error = e.what();
        out.wls.method = Method::Wls;
        return out;
    }
    out.sensors_added = added_sensor_count(sc);
    // The noise stream restarts from the seed so that the augmented scenario
    // is reproducible from (scenario, seed) alone.
    std::mt19937_64 rng(seed);
    const auto om = apply_observation_model(ex.net, ex.matrix, sc, rng);
    out.mc = estimate_mc(ex, om, cfg, ex.truth.v);
    out.wls = estimate_wls(ex, om, ex.truth.v);
    for (auto *r : {&out.mc, &out.wls}) {
        r->scenario = describe(sc);
        r->seed = seed;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Time series

struct ProfileOptions {
    double load_swing = 0.20;
    double load_noise = 0.02;  // std of the AR(1) load disturbance
    double cloud_noise = 0.05;
    double start_minute = 720.0;  // solar noon
};

/// Per-step non-slack injections. Loads follow base * (1 + swing * sin) plus
/// a seeded AR(1) disturbance; PV follows a daylight envelope that vanishes at
/// night. Step 0 reproduces the base case.
inline std::vector<CVec> generate_profiles(const Network &net, int steps, double resolution_minutes,
                                           std::uint64_t seed, const ProfileOptions &opt = {}) {
    if (steps < 1)
        throw Error("generate_profiles: steps must be at least 1");
    if (!(resolution_minutes > 0))
        throw Error("generate_profiles: resolution must be positive");
    const Index n = net.bus_count();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> period(720.0, 1440.0);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<double> periods(n), disturbance(n, 0.0), cloud(n, 0.0);
    for (Index b = 1; b < n; ++b)
        periods[b] = period(rng);

    std::vector<CVec> out;
    for (int t = 0; t < steps; ++t) {
        const double minutes = t * resolution_minutes;
        const double solar_phase = kPi * (opt.start_minute + minutes - 720.0) / 720.0;
        const double envelope = std::max(0.0, std::cos(solar_phase));
        CVec s(n - 1);
        for (Index b = 1; b < n; ++b) {
            if (t > 0) {
                disturbance[b] = 0.9 * disturbance[b] + opt.load_noise * std::sqrt(1 - 0.81) * unit(rng);
                cloud[b] = std::clamp(0.9 * cloud[b] + opt.cloud_noise * std::sqrt(1 - 0.81) * unit(rng), -0.5, 0.0);
            }
            const auto &bus = net.buses[b];
            const double load_factor =
                std::max(0.0, 1.0 + opt.load_swing * std::sin(2 * kPi * minutes / periods[b]) + disturbance[b]);
            const double pv_factor = envelope * (1.0 + cloud[b]);
            s(b - 1) = bus.generation * pv_factor - bus.load * load_factor;
        }
        out.push_back(std::move(s));
    }
    return out;
}

struct TimeSeriesStep {
    int step = 0;
    EstimationResult lossy;
    EstimationResult lossless;  // same sensors and noise, nothing removed
};

struct TimeSeriesOptions {
    double availability = 0.5;
    double loss = 0.2;
    int steps = 120;
    double resolution_minutes = 1.0;
    double measurement_sigma = 0.01;
    std::uint64_t seed = 0;
    unsigned threads = default_threads();
};

/// Sensor placement is drawn once per seed; every step draws its own noise
/// and its own loss pattern from a stream seeded by (seed, step).
inline std::vector<TimeSeriesStep> run_timeseries(const Network &net, const TimeSeriesOptions &opt,
                                                  const SolverConfig &cfg) {
    check_fraction(opt.availability, "availability");
    check_fraction(opt.loss, "loss");
    const auto profiles = generate_profiles(net, opt.steps, opt.resolution_minutes, opt.seed);
    Experiment ex = make_experiment(net);
    std::mt19937_64 placement(opt.seed);
    const auto plan = random_sampling_plan(net, ex.matrix.layout, opt.availability, placement);
    const std::string label = describe(Scenario{TimeSeries{opt.availability, opt.loss}});

    return parallel_map<TimeSeriesStep>(static_cast<std::size_t>(opt.steps), opt.threads, [&](std::size_t k) {
        TimeSeriesStep st;
        st.step = static_cast<int>(k);
        try {
            const auto sol = solve_power_flow(net, ex.blocks, profiles[k]);
            const auto m = build_data_matrix(net, sol, ex.matrix.layout.formulation());
            std::seed_seq seq{opt.seed, static_cast<std::uint64_t>(k)};
            std::mt19937_64 rng(seq);
            const auto full = apply_observation_plan(m, plan, opt.measurement_sigma, 0.10, rng);
            const auto kept = drop_observations(full, opt.loss, rng);
            st.lossless = estimate_mc(ex, full, cfg, sol.v);
            st.lossy = estimate_mc(ex, kept, cfg, sol.v);
        } catch (const std::exception &e) {
            st.lossy.failed = st.lossless.failed = true;
            st.lossy.error = st.lossless.error = e.what();
        }
        for (auto *r : {&st.lossy, &st.lossless}) {
            r->scenario = label;
            r->seed = opt.seed;
        }
        return st;
    });
}

// ---------------------------------------------------------------------------
// Export

inline void write_sweep_csv(std::ostream &out, const SweepResult &s) {
    out << "label,x,method,runs,failed,not_converged,mape_mean,mape_median,mape_std,mae_mean,mae_median,mae_std,"
           "runtime_mean_s\n";
    for (const auto &p : s.points)
        out << p.label << "," << text::format_double(p.x) << "," << to_string(p.method) << "," << p.runs.size() << ","
            << p.failed << "," << p.not_converged << "," << text::format_double(p.mape.mean) << ","
            << text::format_double(p.mape.median) << "," << text::format_double(p.mape.std) << ","
            << text::format_double(p.mae.mean) << "," << text::format_double(p.mae.median) << ","
            << text::format_double(p.mae.std) << "," << text::format_double(p.runtime.mean) << "\n";
}

inline void write_run_header(std::ostream &out) {
    out << "label,run,seed,method,scenario,failed,converged,iterations,magnitude_mape,angle_mae,runtime_s,error\n";
}

inline void write_run_row(std::ostream &out, const std::string &label, std::size_t run, const EstimationResult &r) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    const int iterations = r.method == Method::Wls ? r.wls_iterations : r.diagnostics.iterations;
    const bool converged = r.method == Method::Wls ? !r.failed : r.diagnostics.converged;
    out << label << "," << run << "," << r.seed << "," << to_string(r.method) << "," << r.scenario << ","
        << (r.failed ? 1 : 0) << "," << (converged ? 1 : 0) << "," << iterations << ","
        << text::format_double(r.magnitude_mape) << "," << text::format_double(r.angle_mae) << ","
        << text::format_double(r.runtime_s) << "," << err << "\n";
}

/// Per-run log; aggregates can be recomputed from it exactly.
inline void write_runs_csv(std::ostream &out, const SweepResult &s) {
    write_run_header(out);
    for (const auto &p : s.points)
        for (std::size_t k = 0; k < p.runs.size(); ++k)
            write_run_row(out, p.label, k, p.runs[k]);
}

/// Whitespace-separated columns for gnuplot: index, x, medians and means.
inline void write_gnuplot_dat(std::ostream &out, const SweepResult &s) {
    out << "# " << s.name << "\n# index x mape_median mae_median mape_mean mae_mean mape_std mae_std label\n";
    for (std::size_t k = 0; k < s.points.size(); ++k) {
        const auto &p = s.points[k];
        out << k << " " << text::format_double(p.x) << " " << text::format_double(p.mape.median) << " "
            << text::format_double(p.mae.median) << " " << text::format_double(p.mape.mean) << " "
            << text::format_double(p.mae.mean) << " " << text::format_double(p.mape.std) << " "
            << text::format_double(p.mae.std) << " " << p.label << "\n";
    }
}

inline void write_timeseries_csv(std::ostream &out, const std::vector<TimeSeriesStep> &steps) {
    out << "step,mape,mae,mape_no_loss,mae_no_loss,converged,converged_no_loss,failed\n";
    for (const auto &s : steps)
        out << s.step << "," << text::format_double(s.lossy.magnitude_mape) << ","
            << text::format_double(s.lossy.angle_mae) << "," << text::format_double(s.lossless.magnitude_mape) << ","
            << text::format_double(s.lossless.angle_mae) << "," << (s.lossy.diagnostics.converged ? 1 : 0) << ","
            << (s.lossless.diagnostics.converged ? 1 : 0) << "," << (s.lossy.failed || s.lossless.failed ? 1 : 0)
            << "\n";
}

inline void write_state_csv(std::ostream &out, const CVec &estimate, const CVec &truth, const Network &net) {
    out << "bus,magnitude,angle_deg,true_magnitude,true_angle_deg\n";
    for (Index b = 0; b < estimate.size(); ++b)
        out << net.buses[b].id << "," << text::format_double(std::abs(estimate(b))) << ","
            << text::format_double(to_degrees(std::arg(estimate(b)))) << ","
            << text::format_double(std::abs(truth(b))) << "," << text::format_double(to_degrees(std::arg(truth(b))))
            << "\n";
}

} // namespace mcse
