#pragma once

// Cartesian linearization of the power-flow equations around an expansion
// point:  v_-1 ~= A [Re s; Im s] + w,   |v_-1| ~= C [Re s; Im s] + |w|.

#include <optional>

#include "common.hpp"
#include "netmodel.hpp"

namespace mcse {

struct LinearModel {
    CMat a;               // (|B|-1) x 2(|B|-1)
    Mat c;                // (|B|-1) x 2(|B|-1), real part already taken
    CVec w;               // zero-load voltage
    CVec expansion_point;

    Index size() const { return w.size(); }
};

struct VoltagePrediction {
    CVec v;
    Vec magnitude;
};

/// Solves Y_LL w = -v1 Y_L1 with the stored factorization.
inline CVec zero_load_voltage(const AdmittanceBlocks &blocks, Complex v1) {
    return blocks.solve_yll(-v1 * blocks.yl1());
}

/// `v_hat` defaults to the zero-load voltage.
inline LinearModel build_linear_model(const AdmittanceBlocks &blocks, Complex v1,
                                      const std::optional<CVec> &v_hat = std::nullopt) {
    const Index n = blocks.size() - 1;
    LinearModel m;
    m.w = zero_load_voltage(blocks, v1);
    m.expansion_point = v_hat.value_or(m.w);
    const CVec &vh = m.expansion_point;
    if (vh.size() != n)
        throw DimensionError("expansion point must have one entry per non-slack bus");
    for (Index k = 0; k < n; ++k)
        if (std::abs(vh(k)) == 0.0)
            throw Error("expansion point has a zero entry at non-slack bus " + std::to_string(k + 1));

    // Y_LL^{-1} diag(conj(v_hat))^{-1}
    const CMat dinv = vh.conjugate().cwiseInverse().asDiagonal();
    const CMat real_block = blocks.solve_yll(dinv);
    m.a.resize(n, 2 * n);
    m.a.leftCols(n) = real_block;
    m.a.rightCols(n) = Complex{0, -1} * real_block;

    // First-order expansion of |v| at v_hat: |v_hat| + Re(conj(v_hat) dv) / |v_hat|.
    const Vec mag = vh.cwiseAbs();
    m.c = (vh.conjugate().asDiagonal() * m.a).real();
    m.c = mag.cwiseInverse().asDiagonal() * m.c;
    return m;
}

inline LinearModel build_linear_model(const Network &net) {
    return build_linear_model(build_admittance(net), net.slack_voltage);
}

/// [Re s; Im s] for a vector of non-slack injections.
inline Vec injection_stack(const CVec &s) {
    Vec u(2 * s.size());
    u.head(s.size()) = s.real();
    u.tail(s.size()) = s.imag();
    return u;
}

inline VoltagePrediction predict_voltages(const LinearModel &model, const Vec &stack) {
    if (stack.size() != 2 * model.size())
        throw DimensionError("injection stack must have length 2(|B|-1)");
    VoltagePrediction p;
    p.v = model.a * stack.cast<Complex>() + model.w;
    p.magnitude = model.c * stack + model.w.cwiseAbs();
    return p;
}

} // namespace mcse
