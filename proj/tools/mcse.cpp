// mcse: command-line front end for power flow, linearization, estimation,
// benchmark sweeps and time-series runs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include <mcse/mcse.hpp>

namespace fs = std::filesystem;
using namespace mcse;

namespace {

constexpr int kOk = 0;
constexpr int kInputError = 1;
constexpr int kNotConverged = 2;

std::string default_case() { return std::string(MCSE_DATA_DIR) + "/case33_calibrated.case"; }

Network load_network(const std::string &path, const std::string &calibration) {
    auto net = load_case(path);
    if (!calibration.empty())
        net = apply_calibration(std::move(net), parse_calibration(read_file(calibration)));
    return net;
}

SolverConfig load_solver(const std::string &path) {
    return path.empty() ? SolverConfig{} : parse_solver_config(read_file(path));
}

std::ofstream open_out(const fs::path &p) {
    if (p.has_parent_path())
        fs::create_directories(p.parent_path());
    std::ofstream out(p);
    if (!out)
        throw Error("cannot write '" + p.string() + "'");
    return out;
}

void write_sweep_files(const fs::path &dir, const std::string &stem, const SweepResult &s) {
    auto a = open_out(dir / (stem + ".csv"));
    write_sweep_csv(a, s);
    auto b = open_out(dir / (stem + "_runs.csv"));
    write_runs_csv(b, s);
    auto c = open_out(dir / (stem + ".dat"));
    write_gnuplot_dat(c, s);
}

bool sweep_clean(const SweepResult &s) {
    for (const auto &p : s.points)
        if (p.failed || p.not_converged)
            return false;
    return true;
}

std::vector<std::string> split_codes(const std::string &list) {
    std::vector<std::string> out;
    std::stringstream ss(list);
    for (std::string tok; std::getline(ss, tok, ',');)
        if (!tok.empty())
            out.push_back(tok);
    return out;
}

struct CommonArgs {
    std::string case_path = default_case();
    std::string calibration;
};

void add_case_options(CLI::App *cmd, CommonArgs &args) {
    cmd->add_option("--case", args.case_path, "case file (native or MATPOWER)")->capture_default_str();
    cmd->add_option("--calibration", args.calibration, "calibration document applied after loading");
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Matrix-completion state estimation for distribution networks"};
    app.require_subcommand(1);

    CommonArgs common;
    std::string solver_path, out_dir = ".", scenario_path, method = "mc", codes, out_file;
    std::uint64_t seed = 0;
    int runs = 50, steps = 120;
    unsigned threads = default_threads();
    double availability = 0.5, loss = 0.2, sigma = 0.01;
    bool strict = false;

    auto *pf = app.add_subcommand("pf", "solve the power flow and print the state as CSV");
    add_case_options(pf, common);

    auto *lin = app.add_subcommand("lin", "compare the linearized model with the exact power flow");
    add_case_options(lin, common);

    auto *profile = app.add_subcommand("profile", "cumulative singular-value profile of the data matrices");
    add_case_options(profile, common);

    auto *est = app.add_subcommand("estimate", "run one estimation");
    add_case_options(est, common);
    est->add_option("--scenario", scenario_path, "scenario document")->required();
    est->add_option("--seed", seed, "random seed (overrides the scenario)");
    est->add_option("--solver", solver_path, "solver document");
    est->add_option("--method", method, "mc or wls")->check(CLI::IsMember({"mc", "wls"}));
    est->add_option("--out", out_dir, "directory for state.csv and run_log.json")->capture_default_str();
    est->add_flag("--strict", strict, "exit with 2 when the solver does not converge");

    auto *bench = app.add_subcommand("bench", "reproduce a figure protocol");
    std::string figure;
    bench->add_option("figure", figure, "fig2, fig3 or fig4")->required()->check(CLI::IsMember({"fig2", "fig3", "fig4"}));
    add_case_options(bench, common);
    bench->add_option("--runs", runs, "runs per grid point")->capture_default_str();
    bench->add_option("--seed", seed, "first seed")->capture_default_str();
    bench->add_option("--out", out_dir, "output directory")->capture_default_str();
    bench->add_option("--solver", solver_path, "solver document");
    bench->add_option("--threads", threads, "worker threads")->capture_default_str();
    bench->add_option("--codes", codes, "comma-separated data-driven codes for fig3/fig4 (default: all 27)");
    bench->add_option("--sigma", sigma, "measurement noise for fig2")->capture_default_str();
    bench->add_flag("--strict", strict, "exit with 2 when any run fails or does not converge");

    auto *ts = app.add_subcommand("ts", "time-series run with measurement loss");
    add_case_options(ts, common);
    ts->add_option("--availability", availability)->capture_default_str();
    ts->add_option("--loss", loss)->capture_default_str();
    ts->add_option("--steps", steps)->capture_default_str();
    ts->add_option("--seed", seed)->capture_default_str();
    ts->add_option("--solver", solver_path, "solver document");
    ts->add_option("--threads", threads, "worker threads")->capture_default_str();
    ts->add_option("--out", out_file, "CSV file (default: stdout)");
    ts->add_flag("--strict", strict, "exit with 2 when any step fails or does not converge");

    auto *cal = app.add_subcommand("calibrate", "apply a calibration and write the resulting case");
    std::string base_case, cal_path;
    cal->add_option("--case", base_case, "base case")->required();
    cal->add_option("--calibration", cal_path, "calibration document")->required();
    cal->add_option("--out", out_file, "output case file (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInputError;
    }

    try {
        if (*cal) {
            auto net = load_network(base_case, cal_path);
            net.name = fs::path(out_file.empty() ? net.name + "_calibrated" : out_file).stem().string();
            const auto doc = write_case(net);
            if (out_file.empty()) {
                std::cout << doc;
            } else {
                auto out = open_out(out_file);
                out << doc;
            }
            return kOk;
        }

        const auto net = load_network(common.case_path, common.calibration);

        if (*pf) {
            const auto sol = solve_power_flow(net);
            std::cout << "bus,abs_v,angle_deg,p_pu,q_pu\n";
            for (Index b = 0; b < net.bus_count(); ++b)
                std::cout << net.buses[b].id << "," << text::format_double(std::abs(sol.v(b))) << ","
                          << text::format_double(to_degrees(std::arg(sol.v(b)))) << ","
                          << text::format_double(sol.s(b).real()) << "," << text::format_double(sol.s(b).imag())
                          << "\n";
            std::cerr << "iterations " << sol.iterations << ", mismatch " << sol.mismatch << "\n";
            return kOk;
        }

        if (*lin) {
            const auto sol = solve_power_flow(net);
            const auto model = build_linear_model(net);
            const auto pred = predict_voltages(model, injection_stack(sol.s.tail(net.bus_count() - 1)));
            std::cout << "bus,abs_v,abs_v_linear,abs_v_phasor_linear,error_pct\n";
            double worst = 0.0;
            for (Index k = 0; k < model.size(); ++k) {
                const double exact = std::abs(sol.v(k + 1));
                const double err = 100.0 * std::abs(pred.magnitude(k) - exact) / exact;
                worst = std::max(worst, err);
                std::cout << net.buses[k + 1].id << "," << text::format_double(exact) << ","
                          << text::format_double(pred.magnitude(k)) << "," << text::format_double(std::abs(pred.v(k)))
                          << "," << text::format_double(err) << "\n";
            }
            std::cerr << "max magnitude error " << worst << " %\n";
            return kOk;
        }

        if (*profile) {
            const auto sol = solve_power_flow(net);
            const Vec branch = singular_value_profile(build_branch_matrix(net, sol).values);
            const Vec bus = singular_value_profile(build_bus_matrix(net, sol).values);
            std::cout << "k,branch,bus\n";
            for (Index k = 0; k < std::max(branch.size(), bus.size()); ++k)
                std::cout << k + 1 << "," << (k < branch.size() ? text::format_double(branch(k)) : "") << ","
                          << (k < bus.size() ? text::format_double(bus(k)) : "") << "\n";
            return kOk;
        }

        const auto cfg = load_solver(solver_path);

        if (*est) {
            auto sc = parse_scenario(read_file(scenario_path), net);
            if (est->count("--seed"))
                sc.seed = seed;
            const auto ex = make_experiment(net);
            const auto r = run_once(ex, sc, cfg, sc.seed, method == "wls" ? Method::Wls : Method::MatrixCompletion);
            const auto record = run_log_record(net.name, write_scenario(sc, net), write_solver_config(cfg), r);
            std::cout << record.dump(2) << "\n";
            auto log = open_out(fs::path(out_dir) / "run_log.json");
            log << record.dump(2) << "\n";
            if (r.failed) {
                std::cerr << "estimation failed: " << r.error << "\n";
                return kNotConverged;
            }
            auto state = open_out(fs::path(out_dir) / "state.csv");
            write_state_csv(state, r.estimate, r.truth, net);
            if (!r.diagnostics.warning.empty())
                std::cerr << "warning: " << r.diagnostics.warning << "\n";
            return strict && r.method == Method::MatrixCompletion && !r.diagnostics.converged ? kNotConverged : kOk;
        }

        if (*bench) {
            const auto ex = make_experiment(net);
            SweepOptions opt;
            opt.runs = runs;
            opt.seed0 = seed;
            opt.threads = threads;
            const fs::path dir(out_dir);
            const auto code_list = codes.empty() ? data_driven_codes() : split_codes(codes);
            bool clean = true;
            if (figure == "fig2") {
                const auto s = run_sweep(ex, availability_grid(10, sigma), cfg, opt, "random sampling");
                write_sweep_files(dir, "fig2", s);
                clean = sweep_clean(s);
                write_sweep_csv(std::cout, s);
            } else if (figure == "fig3") {
                const auto s = run_sweep(ex, data_driven_grid(code_list), cfg, opt, "data-driven scenarios");
                write_sweep_files(dir, "fig3", s);
                clean = sweep_clean(s);
                write_sweep_csv(std::cout, s);
            } else {
                const auto grid = data_driven_grid(code_list);
                const std::size_t n = static_cast<std::size_t>(runs);
                const auto all = parallel_map<ComparisonRun>(grid.size() * n, threads, [&](std::size_t k) {
                    return compare_at_full_observability(ex, grid[k / n].scenario, cfg, seed + k % n);
                });
                SweepResult mc{"matrix completion at full observability", {}, 0.0};
                SweepResult wls{"WLS at full observability", {}, 0.0};
                auto sensors = open_out(dir / "fig4_sensors.csv");
                sensors << "label,run,seed,sensors_added\n";
                for (std::size_t g = 0; g < grid.size(); ++g) {
                    SweepPoint a, b;
                    a.label = b.label = grid[g].label;
                    a.x = b.x = grid[g].x;
                    b.method = Method::Wls;
                    for (std::size_t k = 0; k < n; ++k) {
                        const auto &c = all[g * n + k];
                        a.runs.push_back(c.mc);
                        b.runs.push_back(c.wls);
                        sensors << grid[g].label << "," << k << "," << seed + k << "," << c.sensors_added << "\n";
                    }
                    a.aggregate();
                    b.aggregate();
                    mc.points.push_back(std::move(a));
                    wls.points.push_back(std::move(b));
                }
                write_sweep_files(dir, "fig4_mc", mc);
                write_sweep_files(dir, "fig4_wls", wls);
                clean = sweep_clean(mc) && sweep_clean(wls);
                write_sweep_csv(std::cout, mc);
                write_sweep_csv(std::cout, wls);
            }
            return strict && !clean ? kNotConverged : kOk;
        }

        if (*ts) {
            TimeSeriesOptions opt;
            opt.availability = availability;
            opt.loss = loss;
            opt.steps = steps;
            opt.seed = seed;
            opt.threads = threads;
            const auto series = run_timeseries(net, opt, cfg);
            if (out_file.empty()) {
                write_timeseries_csv(std::cout, series);
            } else {
                auto out = open_out(out_file);
                write_timeseries_csv(out, series);
            }
            bool clean = true;
            for (const auto &s : series)
                clean = clean && !s.lossy.failed && !s.lossless.failed && s.lossy.diagnostics.converged &&
                        s.lossless.diagnostics.converged;
            return strict && !clean ? kNotConverged : kOk;
        }
    } catch (const DivergenceError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNotConverged;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInputError;
    }
    return kOk;
}
