#include <gtest/gtest.h>

#include "support.hpp"

using namespace mcse;
using namespace mcse::testing;

namespace {

using MK = MeasurementKind;

/// Every injection, magnitude and branch current of a solved case.
MeasurementSet full_measurements(const Network &net, const PowerFlowSolution &sol, double weight = 1e6) {
    MeasurementSet m;
    for (Index b = 1; b < net.bus_count(); ++b) {
        m.add(MK::RealInjection, b, sol.s(b).real(), weight);
        m.add(MK::ReactiveInjection, b, sol.s(b).imag(), weight);
        m.add(MK::VoltageMagnitude, b, std::abs(sol.v(b)), weight);
    }
    for (Index k = 0; k < net.branch_count(); ++k) {
        m.add(MK::RealCurrent, k, sol.i(k).real(), weight);
        m.add(MK::ImagCurrent, k, sol.i(k).imag(), weight);
    }
    return m;
}

double residual_of(const Network &net, const CVec &v, const Measurement &x) {
    const CMat y = assemble_ybus(net);
    const CVec s = v.cwiseProduct((y * v).conjugate());
    const CVec i = branch_currents(net, v);
    switch (x.kind) {
    case MK::VoltageMagnitude: return x.value - std::abs(v(x.location));
    case MK::RealInjection: return x.value - s(x.location).real();
    case MK::ReactiveInjection: return x.value - s(x.location).imag();
    case MK::RealCurrent: return x.value - i(x.location).real();
    case MK::ImagCurrent: return x.value - i(x.location).imag();
    default: return 0.0;
    }
}

} // namespace

TEST(Wls, ExactMeasurementsRecoverTruth) {
    const auto &net = calibrated();
    const auto sol = solve_power_flow(net);
    const auto r = wls_estimate(full_measurements(net, sol), net);
    EXPECT_LT((r.estimate.v - sol.v).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT(r.cost, 1e-10);
}

TEST(Wls, InjectionsAloneAreObservable) {
    const auto &net = calibrated();
    const auto sol = solve_power_flow(net);
    MeasurementSet m;
    for (Index b = 1; b < net.bus_count(); ++b) {
        m.add(MK::RealInjection, b, sol.s(b).real(), 1e4);
        m.add(MK::ReactiveInjection, b, sol.s(b).imag(), 1e4);
    }
    const auto rep = check_observability(m, net);
    EXPECT_TRUE(rep.observable);
    EXPECT_EQ(rep.unknown_count, 64);
    EXPECT_LT((wls_estimate(m, net).estimate.v - sol.v).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Wls, FullObservabilityWithOnePercentNoise) {
    const auto &ex = calibrated_experiment();
    Scenario sc;
    sc.kind = RandomBusSampling{1.0};
    std::vector<double> mape, mae;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto r = run_once(ex, sc, SolverConfig{}, seed, Method::Wls);
        ASSERT_FALSE(r.failed) << r.error;
        mape.push_back(r.magnitude_mape);
        mae.push_back(r.angle_mae);
    }
    EXPECT_LE(summarize(mape).median, 1.0);
    EXPECT_LE(summarize(mae).median, 0.05);
}

TEST(Wls, RedundantMagnitudeSettlesBetweenReadings) {
    const auto net = two_bus();
    const auto sol = solve_power_flow(net);
    const double truth = std::abs(sol.v(1));
    const double a = truth - 0.01, b = truth + 0.02;
    MeasurementSet m;
    m.add(MK::RealInjection, 1, sol.s(1).real(), 1e4);
    m.add(MK::ReactiveInjection, 1, sol.s(1).imag(), 1e4);
    m.add(MK::VoltageMagnitude, 1, a, 1e4);
    m.add(MK::VoltageMagnitude, 1, b, 1e4);
    const double fitted = wls_estimate(m, net).estimate.magnitude(1);
    EXPECT_GT(fitted, a);
    EXPECT_LT(fitted, b);
}

TEST(Wls, SlackOnlyIsUnobservable) {
    const auto &net = calibrated();
    MeasurementSet m;
    EXPECT_FALSE(check_observability(m, net).observable);
    EXPECT_THROW(wls_estimate(m, net), UnobservableError);
}

TEST(Wls, MagnitudesAloneAreUnobservable) {
    const auto &net = calibrated();
    const auto sol = solve_power_flow(net);
    MeasurementSet m;
    for (Index b = 1; b < net.bus_count(); ++b)
        m.add(MK::VoltageMagnitude, b, std::abs(sol.v(b)), 1e4);
    const auto rep = check_observability(m, net);
    EXPECT_FALSE(rep.observable);
    EXPECT_LT(rep.jacobian_rank, rep.unknown_count);
}

TEST(Wls, DuplicateDoesNotWorsenItsResidual) {
    const auto &net = calibrated();
    const auto sol = solve_power_flow(net);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> g(0.0, 0.01);
    MeasurementSet m = full_measurements(net, sol, 1e4);
    for (auto &x : m.items)
        x.value *= 1.0 + g(rng);
    const Measurement target = m.items[5];
    const double before = std::abs(residual_of(net, wls_estimate(m, net).estimate.v, target));
    m.items.push_back(target);
    const double after = std::abs(residual_of(net, wls_estimate(m, net).estimate.v, target));
    EXPECT_LE(after, before + 1e-12);
}

TEST(Wls, InvalidMeasurementsRejected) {
    const auto &net = calibrated();
    MeasurementSet m;
    m.add(MK::RealInjection, 40, 0.1, 1.0);
    EXPECT_THROW(check_observability(m, net), ValidationError);
    MeasurementSet w;
    w.add(MK::RealInjection, 3, 0.1, 0.0);
    EXPECT_THROW(check_observability(w, net), ValidationError);
}

TEST(Wls, ObservationConversionDropsSlackPhasors) {
    const auto &ex = calibrated_experiment();
    Scenario sc;
    sc.kind = RandomBusSampling{0.0};
    std::mt19937_64 rng(1);
    const auto om = apply_observation_model(ex.net, ex.matrix, sc, rng);
    const auto m = measurements_from_observations(om);
    for (const auto &x : m.items)
        EXPECT_NE(x.kind, MK::VoltageMagnitude);
}

TEST(Wls, CostDecreases) {
    const auto &net = calibrated();
    const auto sol = solve_power_flow(net);
    const auto r = wls_estimate(full_measurements(net, sol, 1e4), net);
    EXPECT_LT(r.cost_history.back(), r.cost_history.front());
}
