#include <gtest/gtest.h>

#include "support.hpp"

using namespace mcse;
using namespace mcse::testing;

TEST(ScenarioDoc, RandomRoundTrip) {
    const auto &net = calibrated();
    const auto sc = parse_scenario(read_file(data_path("../configs/random30.scenario")), net);
    ASSERT_TRUE(std::holds_alternative<RandomBusSampling>(sc.kind));
    EXPECT_DOUBLE_EQ(std::get<RandomBusSampling>(sc.kind).fraction, 0.3);
    EXPECT_EQ(write_scenario(parse_scenario(write_scenario(sc, net), net), net), write_scenario(sc, net));
}

TEST(ScenarioDoc, DataDrivenDefaults) {
    const auto sc = parse_scenario("kind = data_driven\nsolar = M\nlarge_load = P\nsmall_load = 0\n", calibrated());
    const auto &dd = std::get<DataDriven>(sc.kind);
    EXPECT_EQ(dd.code(), "MP0");
    EXPECT_EQ(dd.small_coverage, 1.0);
    EXPECT_EQ(sc.measurement_sigma, 0.01);
    EXPECT_EQ(sc.pseudo_sigma, 0.1);
}

TEST(ScenarioDoc, AugmentedKeepsSensors) {
    const auto &net = calibrated();
    const auto sc =
        parse_scenario("kind = augmented\nsolar = M\n[sensors]\nami 5\nmagnitude 18\n", net);
    const auto &a = std::get<FullObservabilityAugmented>(sc.kind);
    ASSERT_EQ(a.added.size(), 2u);
    EXPECT_EQ(a.added[1].type, SensorType::Magnitude);
    EXPECT_EQ(net.buses[a.added[1].bus].id, 18);
    const auto again = parse_scenario(write_scenario(sc, net), net);
    EXPECT_EQ(std::get<FullObservabilityAugmented>(again.kind).added.size(), 2u);
}

TEST(ScenarioDoc, TimeSeries) {
    const auto sc = parse_scenario("kind = timeseries\navailability = 0.5\nloss = 0.2\nseed = 4\n", calibrated());
    EXPECT_EQ(std::get<TimeSeries>(sc.kind).loss, 0.2);
    EXPECT_EQ(sc.seed, 4u);
}

TEST(ScenarioDoc, Errors) {
    const auto &net = calibrated();
    EXPECT_THROW(parse_scenario("kind = random\nfration = 0.3\n", net), ParseError);
    EXPECT_THROW(parse_scenario("kind = random\nfraction = 1.3\n", net), ParseError);
    EXPECT_THROW(parse_scenario("kind = lottery\n", net), ParseError);
    EXPECT_THROW(parse_scenario("kind = data_driven\nsolar = X\n", net), ParseError);
    EXPECT_THROW(parse_scenario("kind = augmented\n[sensors]\nami 1\n", net), ParseError);
    EXPECT_THROW(parse_scenario("kind = augmented\n[sensors]\nami 99\n", net), ParseError);
    EXPECT_THROW(parse_scenario("kind = augmented\n[sensors]\nradar 3\n", net), ParseError);
    try {
        parse_scenario("kind = random\n\nbogus = 1\n", net);
        FAIL();
    } catch (const ParseError &e) {
        EXPECT_EQ(e.line(), 3);
        EXPECT_EQ(e.field(), "bogus");
    }
}

TEST(SolverDoc, DefaultsRoundTrip) {
    const auto cfg = parse_solver_config("");
    EXPECT_FALSE(cfg.delta);
    EXPECT_TRUE(std::isinf(cfg.weights.ohm));
    const auto text = write_solver_config(cfg);
    EXPECT_EQ(write_solver_config(parse_solver_config(text)), text);
}

TEST(SolverDoc, ExplicitValues) {
    const auto cfg = parse_solver_config(
        "delta = 0.05\nweight_ohm = 10\nweight_vlin = inf\nresidual_norm = l2\nmax_iter = 100\nrelaxation = 1\n"
        "standardize_columns = false\n");
    EXPECT_EQ(*cfg.delta, 0.05);
    EXPECT_EQ(cfg.weights.ohm, 10.0);
    EXPECT_TRUE(std::isinf(cfg.weights.vlin));
    EXPECT_EQ(cfg.residual_norm, ResidualNorm::L2);
    EXPECT_EQ(cfg.max_iter, 100);
    EXPECT_FALSE(cfg.standardize_columns);
    const auto back = parse_solver_config(write_solver_config(cfg));
    EXPECT_EQ(*back.delta, 0.05);
    EXPECT_EQ(back.weights.ohm, 10.0);
}

TEST(SolverDoc, Errors) {
    EXPECT_THROW(parse_solver_config("rho = 0\n"), ParseError);
    EXPECT_THROW(parse_solver_config("residual_norm = l3\n"), ParseError);
    EXPECT_THROW(parse_solver_config("weight_ohm = heavy\n"), ParseError);
    EXPECT_THROW(parse_solver_config("tolerance = 1e-6\n"), ParseError);
}

TEST(RunLog, HashIsStableAndSensitive) {
    EXPECT_EQ(hex64(fnv1a("")), "cbf29ce484222325");
    EXPECT_EQ(hex64(fnv1a("a")), "af63dc4c8601ec8c");
    EstimationResult r;
    r.seed = 3;
    const auto a = run_log_record("case33", "kind = random\n", "rho = 1\n", r);
    const auto b = run_log_record("case33", "kind = random\n", "rho = 1\n", r);
    const auto c = run_log_record("case33", "kind = random\n", "rho = 2\n", r);
    EXPECT_EQ(a["config_hash"], b["config_hash"]);
    EXPECT_NE(a["config_hash"], c["config_hash"]);
    EXPECT_EQ(a["seed"], 3);
    EXPECT_TRUE(a.contains("diagnostics"));
}
