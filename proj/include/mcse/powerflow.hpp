#pragma once

// Exact AC power flow (Newton-Raphson, rectangular coordinates) used as the
// ground-truth oracle for every experiment.

#include <cmath>
#include <vector>

#include "common.hpp"
#include "netmodel.hpp"

namespace mcse {

struct PowerFlowSolution {
    CVec v;               // per bus, internal order
    CVec s;               // net injection per bus (slack filled from the exact equation)
    CVec i;               // per branch, from -> to
    double mismatch = 0;  // max |s_b - v_b conj((Yv)_b)| over PQ buses
    int iterations = 0;
};

struct PowerFlowOptions {
    int max_iterations = 50;
    double tolerance = 1e-10;
    int max_halvings = 4;
};

/// i_ft = (v_f - v_t) y_ft + v_f * shunt_ft / 2
inline CVec branch_currents(const Network &net, const CVec &v) {
    if (v.size() != net.bus_count())
        throw DimensionError("branch_currents: one voltage per bus required");
    CVec i(net.branch_count());
    for (Index k = 0; k < net.branch_count(); ++k) {
        const auto &br = net.branches[k];
        i(k) = (v(br.from) - v(br.to)) * br.series_admittance + v(br.from) * br.total_shunt / 2.0;
    }
    return i;
}

/// s_1 = v_1 (conj(Y11) conj(v_1) + conj(Y1L) conj(v_-1))
inline Complex slack_injection(const AdmittanceBlocks &blocks, const CVec &v) {
    if (v.size() != blocks.size())
        throw DimensionError("slack_injection: one voltage per bus required");
    const Complex v1 = v(0);
    const Complex current = blocks.y11() * v1 + (blocks.y1l().transpose() * v.tail(v.size() - 1))(0);
    return v1 * std::conj(current);
}

namespace detail {

inline CVec power_mismatch(const CMat &y, const CVec &v, const CVec &s_nonslack) {
    const CVec current = y * v;
    const Index n = v.size() - 1;
    CVec m(n);
    for (Index b = 0; b < n; ++b)
        m(b) = v(b + 1) * std::conj(current(b + 1)) - s_nonslack(b);
    return m;
}

inline double max_abs(const CVec &m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

} // namespace detail

/// Newton-Raphson with flat start at the zero-load voltage and step halving
/// when the residual grows. `injections` are the non-slack net injections.
inline PowerFlowSolution solve_power_flow(const Network &net, const AdmittanceBlocks &blocks, const CVec &injections,
                                          const PowerFlowOptions &opt = {}) {
    const Index nb = net.bus_count();
    const Index n = nb - 1;
    if (injections.size() != n)
        throw DimensionError("solve_power_flow: one injection per non-slack bus required");

    const CMat y = blocks.full();
    const Complex v1 = net.slack_voltage;
    CVec v(nb);
    v(0) = v1;
    v.tail(n) = blocks.solve_yll(-v1 * blocks.yl1());

    std::vector<double> history;
    CVec mismatch = detail::power_mismatch(y, v, injections);
    double residual = detail::max_abs(mismatch);
    history.push_back(residual);

    int it = 0;
    Mat jac(2 * n, 2 * n);
    Vec rhs(2 * n);
    while (residual > opt.tolerance) {
        if (it >= opt.max_iterations)
            throw DivergenceError("power flow did not converge in " + std::to_string(opt.max_iterations) +
                                      " iterations (residual " + std::to_string(residual) + ")",
                                  history);
        ++it;
        // dS_b = conj(I_b) dv_b + v_b conj(Y_bk) conj(dv_k), with dv = de + j df
        const CVec current = y * v;
        for (Index r = 0; r < n; ++r) {
            const Index b = r + 1;
            for (Index c = 0; c < n; ++c) {
                const Index k = c + 1;
                const Complex a = (b == k) ? std::conj(current(b)) : Complex{};
                const Complex bb = v(b) * std::conj(y(b, k));
                const Complex d_de = a + bb;
                const Complex d_df = Complex{0, 1} * (a - bb);
                jac(r, c) = d_de.real();
                jac(r, c + n) = d_df.real();
                jac(r + n, c) = d_de.imag();
                jac(r + n, c + n) = d_df.imag();
            }
            rhs(r) = -mismatch(r).real();
            rhs(r + n) = -mismatch(r).imag();
        }
        const Vec step = jac.partialPivLu().solve(rhs);
        CVec dv(n);
        for (Index r = 0; r < n; ++r)
            dv(r) = Complex{step(r), step(r + n)};

        double scale = 1.0;
        CVec trial = v;
        for (int h = 0;; ++h) {
            trial.tail(n) = v.tail(n) + scale * dv;
            mismatch = detail::power_mismatch(y, trial, injections);
            const double r_new = detail::max_abs(mismatch);
            if (r_new <= residual || h >= opt.max_halvings || !std::isfinite(r_new)) {
                residual = r_new;
                break;
            }
            scale *= 0.5;
        }
        v = trial;
        history.push_back(residual);
        if (!std::isfinite(residual))
            throw DivergenceError("power flow diverged (non-finite residual)", history);
    }

    PowerFlowSolution sol;
    sol.v = v;
    sol.s.resize(nb);
    sol.s(0) = slack_injection(blocks, v);
    sol.s.tail(n) = injections;
    sol.i = branch_currents(net, v);
    sol.mismatch = residual;
    sol.iterations = it;
    return sol;
}

inline PowerFlowSolution solve_power_flow(const Network &net, const CVec &injections, const PowerFlowOptions &opt = {}) {
    return solve_power_flow(net, build_admittance(net), injections, opt);
}

/// Solves the base case described by the network's own loads and generation.
inline PowerFlowSolution solve_power_flow(const Network &net, const PowerFlowOptions &opt = {}) {
    return solve_power_flow(net, net.nonslack_injections(), opt);
}

} // namespace mcse
