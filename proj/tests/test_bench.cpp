#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

using namespace mcse;
using namespace mcse::testing;

namespace {

Scenario code_scenario(const std::string &code) {
    Scenario sc;
    sc.kind = data_driven_from_code(code);
    return sc;
}

std::vector<std::string> split(const std::string &line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');)
        out.push_back(f);
    return out;
}

} // namespace

TEST(Metrics, IdentityIsZero) {
    const auto &v = calibrated_experiment().truth.v;
    const auto m = metrics(v, v);
    EXPECT_EQ(m.magnitude_mape, 0.0);
    EXPECT_EQ(m.angle_mae, 0.0);
}

TEST(Metrics, UniformScaleGivesOnePercent) {
    const auto &v = calibrated_experiment().truth.v;
    EXPECT_NEAR(metrics(CVec(v * 1.01), v).magnitude_mape, 1.0, 1e-9);
    EXPECT_NEAR(metrics(CVec(v * 1.01), v).angle_mae, 0.0, 1e-9);
}

TEST(Metrics, RotationGivesAngleError) {
    const auto &v = calibrated_experiment().truth.v;
    const CVec rotated = v * std::polar(1.0, 0.5 * std::numbers::pi / 180);
    EXPECT_NEAR(metrics(rotated, v).angle_mae, 0.5, 1e-9);
    EXPECT_NEAR(metrics(rotated, v).magnitude_mape, 0.0, 1e-9);
}

TEST(Metrics, AngleDifferenceWraps) {
    EXPECT_NEAR(wrap_degrees(359.0), -1.0, 1e-12);
    EXPECT_NEAR(wrap_degrees(-181.0), 179.0, 1e-12);
    // Bus 0 is the slack and is not scored.
    Vec mag = Vec::Ones(2), ang(2);
    ang << 0.0, 179.0;
    CVec truth(2);
    truth << 1.0, std::polar(1.0, -179.0 * std::numbers::pi / 180);
    EXPECT_NEAR(metrics(mag, ang, truth).angle_mae, 2.0, 1e-9);
}

TEST(Metrics, ZeroTrueMagnitudeThrows) {
    CVec truth(2), est(2);
    truth << 1.0, 0.0;
    est << 1.0, 0.5;
    EXPECT_THROW(metrics(est, truth), Error);
    EXPECT_THROW(metrics(CVec(CVec::Ones(3)), truth), Error);
}

TEST(Stats, Summary) {
    const auto s = summarize({4.0, 1.0, 3.0, 2.0});
    EXPECT_DOUBLE_EQ(s.mean, 2.5);
    EXPECT_DOUBLE_EQ(s.median, 2.5);
    EXPECT_NEAR(s.std, std::sqrt(5.0 / 3.0), 1e-12);
    EXPECT_EQ(s.count, 4);
}

TEST(Augmentation, ReachesObservability) {
    const auto &ex = calibrated_experiment();
    std::mt19937_64 rng(1);
    const auto sc = augment_to_full_observability(ex, code_scenario("MMM"), rng);
    std::mt19937_64 again(1);
    const auto plan = plan_for(ex.net, ex.matrix.layout, sc, again);
    EXPECT_TRUE(plan_observable(ex, plan));
}

TEST(Augmentation, AlreadyObservableAddsNothing) {
    const auto &ex = calibrated_experiment();
    std::mt19937_64 rng(2);
    const auto sc = augment_to_full_observability(ex, code_scenario("MMM"), rng);
    std::mt19937_64 rng2(2);
    const auto twice = augment_to_full_observability(ex, sc, rng2);
    EXPECT_EQ(added_sensor_count(twice), added_sensor_count(sc));
}

TEST(Augmentation, SensorCountsInRange) {
    const auto &ex = calibrated_experiment();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 a(seed), b(seed);
        const auto mmm = added_sensor_count(augment_to_full_observability(ex, code_scenario("MMM"), a));
        const auto none = added_sensor_count(augment_to_full_observability(ex, code_scenario("000"), b));
        EXPECT_GE(mmm, 20u) << seed;
        EXPECT_LE(mmm, 70u) << seed;
        EXPECT_GT(none, mmm) << seed;
    }
}

TEST(Augmentation, RejectsRandomScenario) {
    const auto &ex = calibrated_experiment();
    Scenario sc;
    sc.kind = RandomBusSampling{0.3};
    std::mt19937_64 rng(0);
    EXPECT_THROW(augment_to_full_observability(ex, sc, rng), Error);
}

TEST(Profiles, FirstStepIsBaseCase) {
    const auto &net = calibrated();
    const auto p = generate_profiles(net, 1, 1.0, 3);
    ASSERT_EQ(p.size(), 1u);
    EXPECT_LT((p[0] - net.nonslack_injections()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Profiles, OnlySolarBusesGenerate) {
    const auto &net = calibrated();
    for (const auto &s : generate_profiles(net, 60, 15.0, 5))
        for (Index b = 1; b < net.bus_count(); ++b)
            if (net.buses[b].category != BusCategory::Solar) {
                EXPECT_LE(s(b - 1).real(), 0.0) << b;
            }
}

TEST(Profiles, SolarVanishesAtNight) {
    const auto &net = calibrated();
    ProfileOptions opt;
    opt.start_minute = 0.0;
    const auto p = generate_profiles(net, 2, 1.0, 1, opt);
    for (Index b = 1; b < net.bus_count(); ++b)
        if (net.buses[b].category == BusCategory::Solar)
            EXPECT_LE(p[1](b - 1).real(), 0.0);
}

TEST(Profiles, EveryStepSolves) {
    const auto &net = calibrated();
    for (const auto &s : generate_profiles(net, 120, 1.0, 9))
        EXPECT_LT(solve_power_flow(net, s).mismatch, 1e-8);
}

TEST(Profiles, Deterministic) {
    const auto &net = calibrated();
    const auto a = generate_profiles(net, 10, 1.0, 4), b = generate_profiles(net, 10, 1.0, 4);
    for (std::size_t k = 0; k < a.size(); ++k)
        EXPECT_EQ(a[k], b[k]);
}

TEST(TimeSeries, CleanFullObservationIsAccurate) {
    TimeSeriesOptions opt;
    opt.availability = 1.0;
    opt.loss = 0.0;
    opt.measurement_sigma = 0.0;
    opt.steps = 3;
    opt.threads = 1;
    for (const auto &st : run_timeseries(calibrated(), opt, SolverConfig{})) {
        ASSERT_FALSE(st.lossy.failed) << st.lossy.error;
        EXPECT_LT(st.lossy.magnitude_mape, 0.5) << st.step;
        EXPECT_EQ(st.lossy.magnitude_mape, st.lossless.magnitude_mape);
    }
}

TEST(TimeSeries, Deterministic) {
    TimeSeriesOptions opt;
    opt.steps = 2;
    opt.threads = 1;
    const auto a = run_timeseries(calibrated(), opt, SolverConfig{});
    const auto b = run_timeseries(calibrated(), opt, SolverConfig{});
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_EQ(a[k].lossy.estimate, b[k].lossy.estimate);
        EXPECT_EQ(a[k].lossless.estimate, b[k].lossless.estimate);
    }
}

TEST(Sweep, DeterministicAcrossThreadCounts) {
    const auto &ex = calibrated_experiment();
    const auto grid = availability_grid(2);
    SweepOptions one{2, 10, 1, Method::MatrixCompletion}, two{2, 10, 2, Method::MatrixCompletion};
    const auto a = run_sweep(ex, grid, SolverConfig{}, one);
    const auto b = run_sweep(ex, grid, SolverConfig{}, two);
    ASSERT_EQ(a.points.size(), 3u);
    for (std::size_t p = 0; p < a.points.size(); ++p)
        for (std::size_t r = 0; r < a.points[p].runs.size(); ++r) {
            EXPECT_EQ(a.points[p].runs[r].estimate, b.points[p].runs[r].estimate);
            EXPECT_EQ(a.points[p].runs[r].seed, 10 + r);
        }
}

TEST(Sweep, AggregatesRecomputableFromRunLog) {
    const auto &ex = calibrated_experiment();
    std::vector<GridPoint> grid{{"MPP", 0, code_scenario("MPP")}, {"0MM", 1, code_scenario("0MM")}};
    const auto s = run_sweep(ex, grid, SolverConfig{}, {3, 0, 1, Method::MatrixCompletion});
    std::stringstream csv;
    write_runs_csv(csv, s);
    std::string line;
    std::getline(csv, line);
    const auto header = split(line);
    const auto col = [&](const std::string &name) {
        return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
    };
    std::map<std::string, std::vector<double>> mape, mae;
    while (std::getline(csv, line)) {
        const auto f = split(line);
        if (f[col("failed")] == "1")
            continue;
        mape[f[col("label")]].push_back(std::stod(f[col("magnitude_mape")]));
        mae[f[col("label")]].push_back(std::stod(f[col("angle_mae")]));
    }
    for (const auto &p : s.points) {
        EXPECT_EQ(summarize(mape[p.label]).median, p.mape.median);
        EXPECT_EQ(summarize(mape[p.label]).mean, p.mape.mean);
        EXPECT_EQ(summarize(mae[p.label]).std, p.mae.std);
    }
}

TEST(Sweep, WlsFailuresAreRecorded) {
    const auto &ex = calibrated_experiment();
    std::vector<GridPoint> grid{{"10", 10, {}}};
    grid[0].scenario.kind = RandomBusSampling{0.1};
    const auto s = run_sweep(ex, grid, SolverConfig{}, {3, 0, 1, Method::Wls});
    EXPECT_EQ(s.points[0].failed, 3);
    EXPECT_EQ(s.points[0].mape.count, 0);
    for (const auto &r : s.points[0].runs)
        EXPECT_FALSE(r.error.empty());
}

TEST(Sweep, Grids) {
    const auto g = availability_grid(10);
    ASSERT_EQ(g.size(), 11u);
    EXPECT_EQ(g.front().label, "0");
    EXPECT_EQ(g.back().label, "100");
    EXPECT_EQ(data_driven_codes().size(), 27u);
    EXPECT_EQ(data_driven_from_code("0PM").code(), "0PM");
    EXPECT_THROW(data_driven_from_code("MX"), Error);
}

TEST(Export, GnuplotAndSweepCsvShapes) {
    SweepResult s{"demo", {}, 0.0};
    SweepPoint p;
    p.label = "30";
    p.x = 30;
    EstimationResult r;
    r.magnitude_mape = 0.5;
    r.angle_mae = 0.1;
    p.runs = {r, r};
    p.aggregate();
    s.points.push_back(p);
    std::stringstream dat, csv;
    write_gnuplot_dat(dat, s);
    write_sweep_csv(csv, s);
    std::string line;
    std::getline(dat, line);
    EXPECT_EQ(line, "# demo");
    std::getline(csv, line);
    std::getline(csv, line);
    EXPECT_EQ(split(line).size(), 13u);
    EXPECT_EQ(split(line)[7], "0.5");
}
