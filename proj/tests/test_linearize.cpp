#include <gtest/gtest.h>

#include "support.hpp"

using namespace mcse;
using namespace mcse::testing;

namespace {

Vec nominal_stack(const Network &net) { return injection_stack(net.nonslack_injections()); }

double max_rel_magnitude_error(const LinearModel &model, const Network &net, double scale) {
    CVec s = net.nonslack_injections() * scale;
    const auto sol = solve_power_flow(net, s);
    const auto pred = predict_voltages(model, injection_stack(s));
    double worst = 0;
    for (Index k = 0; k < model.size(); ++k)
        worst = std::max(worst, std::abs(pred.magnitude(k) - std::abs(sol.v(k + 1))) / std::abs(sol.v(k + 1)));
    return worst;
}

} // namespace

TEST(ZeroLoadVoltage, OnesWithoutShunts) {
    const auto &net = calibrated();
    const auto w = zero_load_voltage(build_admittance(net), 1.0);
    EXPECT_LT((w - CVec::Ones(32)).cwiseAbs().maxCoeff(), 1e-12);
    const Complex v1 = std::polar(1.02, 0.0);
    const auto w2 = zero_load_voltage(build_admittance(net), v1);
    EXPECT_LT((w2 - CVec::Constant(32, v1)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ZeroLoadVoltage, ShuntMovesItAwayFromOnes) {
    auto net = calibrated();
    net.buses[net.index_of(18)].shunt = {0.0, 0.05};
    const auto blocks = build_admittance(net);
    const auto w = zero_load_voltage(blocks, 1.0);
    EXPECT_GT((w - CVec::Ones(32)).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((blocks.yll() * w + blocks.yl1()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(LinearModel, Shapes) {
    const auto model = build_linear_model(calibrated());
    EXPECT_EQ(model.a.rows(), 32);
    EXPECT_EQ(model.a.cols(), 64);
    EXPECT_EQ(model.c.rows(), 32);
    EXPECT_EQ(model.c.cols(), 64);
}

TEST(LinearModel, ExactAtIntercept) {
    const auto model = build_linear_model(calibrated());
    const auto p = predict_voltages(model, Vec::Zero(64));
    EXPECT_EQ(p.v, model.w);
    EXPECT_EQ(p.magnitude, model.w.cwiseAbs());
}

TEST(LinearModel, Affine) {
    const auto model = build_linear_model(calibrated());
    const Vec u = nominal_stack(calibrated());
    const auto p0 = predict_voltages(model, Vec::Zero(64));
    const auto p1 = predict_voltages(model, u);
    const auto p2 = predict_voltages(model, 2 * u);
    EXPECT_LT(((p2.v - p1.v) - (p1.v - p0.v)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT(((p2.magnitude - p1.magnitude) - (p1.magnitude - p0.magnitude)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(LinearModel, MagnitudeErrorAtNominalLoading) {
    const auto &net = calibrated();
    EXPECT_LT(max_rel_magnitude_error(build_linear_model(net), net, 1.0), 0.005);
}

TEST(LinearModel, ErrorShrinksWithLoading) {
    const auto &net = baran_wu();
    const auto model = build_linear_model(net);
    double prev = max_rel_magnitude_error(model, net, 1.0);
    for (double eps : {0.5, 0.25}) {
        const double e = max_rel_magnitude_error(model, net, eps);
        EXPECT_LE(e, 0.5 * prev * 1.0001) << eps;
        prev = e;
    }
}

TEST(LinearModel, MagnitudeRowsConsistentWithPhasorRows) {
    const auto model = build_linear_model(calibrated());
    const auto p = predict_voltages(model, nominal_stack(calibrated()));
    for (Index k = 0; k < model.size(); ++k)
        EXPECT_NEAR(p.magnitude(k), std::abs(p.v(k)), 0.01 * std::abs(p.v(k)));
}

TEST(LinearModel, ZeroExpansionEntryRejected) {
    const auto blocks = build_admittance(calibrated());
    CVec vh = CVec::Ones(32);
    vh(4) = 0;
    EXPECT_THROW(build_linear_model(blocks, 1.0, vh), Error);
    EXPECT_THROW(predict_voltages(build_linear_model(blocks, 1.0), Vec::Zero(10)), DimensionError);
}

TEST(LinearModel, CustomExpansionPoint) {
    const auto &net = calibrated();
    const auto blocks = build_admittance(net);
    const auto sol = solve_power_flow(net);
    const CVec vh = sol.v.tail(32);
    const auto model = build_linear_model(blocks, net.slack_voltage, vh);
    EXPECT_EQ(model.expansion_point, vh);
    EXPECT_LT(max_rel_magnitude_error(model, net, 1.0), 0.005);
}
