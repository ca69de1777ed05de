#pragma once

// Weighted least-squares state estimation on the exact AC equations,
// rectangular non-slack voltages as the state, Gauss-Newton iterations.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "common.hpp"
#include "datamatrix.hpp"
#include "linearize.hpp"
#include "netmodel.hpp"

namespace mcse {

enum class MeasurementKind : std::uint8_t {
    VoltageMagnitude,   // |v| at a bus
    RealInjection,      // Re s at a bus
    ReactiveInjection,  // Im s at a bus
    RealCurrent,        // Re i on a branch, from -> to
    ImagCurrent,        // Im i on a branch
    RealFlow,           // Re(v_f conj(i)) on a branch
    ReactiveFlow,       // Im(v_f conj(i)) on a branch
};

inline const char *to_string(MeasurementKind k) {
    switch (k) {
    case MeasurementKind::VoltageMagnitude: return "abs_v";
    case MeasurementKind::RealInjection: return "re_s";
    case MeasurementKind::ReactiveInjection: return "im_s";
    case MeasurementKind::RealCurrent: return "re_i";
    case MeasurementKind::ImagCurrent: return "im_i";
    case MeasurementKind::RealFlow: return "p_flow";
    case MeasurementKind::ReactiveFlow: return "q_flow";
    }
    return "?";
}

inline MeasurementKind measurement_kind_from_string(const std::string &s) {
    for (auto k : {MeasurementKind::VoltageMagnitude, MeasurementKind::RealInjection, MeasurementKind::ReactiveInjection,
                   MeasurementKind::RealCurrent, MeasurementKind::ImagCurrent, MeasurementKind::RealFlow,
                   MeasurementKind::ReactiveFlow})
        if (s == to_string(k))
            return k;
    throw Error("unknown measurement kind '" + s + "'");
}

inline bool is_branch_measurement(MeasurementKind k) {
    return k == MeasurementKind::RealCurrent || k == MeasurementKind::ImagCurrent || k == MeasurementKind::RealFlow ||
           k == MeasurementKind::ReactiveFlow;
}

struct Measurement {
    MeasurementKind kind;
    Index location;  // internal bus index, or branch index
    double value;
    double weight;   // 1 / sigma^2
};

struct MeasurementSet {
    std::vector<Measurement> items;

    Index size() const { return static_cast<Index>(items.size()); }
    void add(MeasurementKind kind, Index location, double value, double weight) {
        items.push_back({kind, location, value, weight});
    }
};

inline void validate(const MeasurementSet &m, const Network &net) {
    for (const auto &x : m.items) {
        if (!(x.weight > 0) || !std::isfinite(x.weight))
            throw ValidationError("measurement weights must be positive and finite");
        if (!std::isfinite(x.value))
            throw ValidationError("measurement values must be finite");
        const Index limit = is_branch_measurement(x.kind) ? net.branch_count() : net.bus_count();
        if (x.location < 0 || x.location >= limit)
            throw ValidationError(std::string("measurement location out of range for ") + to_string(x.kind));
    }
}

struct ObservabilityReport {
    bool observable = false;
    Index jacobian_rank = 0;
    Index unknown_count = 0;
};

struct WlsOptions {
    int max_iterations = 50;
    double step_tolerance = 1e-8;
    int max_halvings = 4;
};

struct WlsResult {
    VoltageEstimate estimate;
    int iterations = 0;
    double cost = 0.0;  // sum weight (z - h)^2 at the solution
    std::vector<double> cost_history;
};

namespace detail {

/// Measurement model evaluated at a full bus voltage vector.
class MeasurementModel {
public:
    MeasurementModel(const Network &net, const MeasurementSet &meas)
        : net_(net), meas_(meas), y_(assemble_ybus(net)), n_(net.bus_count() - 1) {}

    Index unknowns() const { return 2 * n_; }

    /// h(v) and the Jacobian with respect to [Re v_-1; Im v_-1].
    void evaluate(const CVec &v, Vec &h, Mat &jac) const {
        const Index m = meas_.size();
        h.resize(m);
        jac.setZero(m, 2 * n_);
        const CVec current = y_ * v;
        for (Index r = 0; r < m; ++r) {
            const auto &x = meas_.items[r];
            // dq = sum_k a_k dv_k + b_k conj(dv_k)
            coeffs_.clear();
            Complex q;
            switch (x.kind) {
            case MeasurementKind::VoltageMagnitude: {
                const Index b = x.location;
                const double mag = std::abs(v(b));
                q = mag;
                if (mag > 0)
                    coeffs_.push_back({b, std::conj(v(b)) / (2.0 * mag), v(b) / (2.0 * mag)});
                break;
            }
            case MeasurementKind::RealInjection:
            case MeasurementKind::ReactiveInjection: {
                const Index b = x.location;
                q = v(b) * std::conj(current(b));
                coeffs_.push_back({b, std::conj(current(b)), {}});
                for (Index k = 0; k < y_.cols(); ++k)
                    if (y_(b, k) != Complex{})
                        coeffs_.push_back({k, {}, v(b) * std::conj(y_(b, k))});
                break;
            }
            default: {
                const auto &br = net_.branches[x.location];
                const Complex yf = br.series_admittance + br.total_shunt / 2.0;
                const Complex yt = -br.series_admittance;
                const Complex i = v(br.from) * yf + v(br.to) * yt;
                if (x.kind == MeasurementKind::RealCurrent || x.kind == MeasurementKind::ImagCurrent) {
                    q = i;
                    coeffs_.push_back({br.from, yf, {}});
                    coeffs_.push_back({br.to, yt, {}});
                } else {
                    // s_f = v_f conj(i)
                    q = v(br.from) * std::conj(i);
                    coeffs_.push_back({br.from, std::conj(i), v(br.from) * std::conj(yf)});
                    coeffs_.push_back({br.to, {}, v(br.from) * std::conj(yt)});
                }
            }
            }
            const bool imag = x.kind == MeasurementKind::ReactiveInjection || x.kind == MeasurementKind::ImagCurrent ||
                              x.kind == MeasurementKind::ReactiveFlow;
            h(r) = imag ? q.imag() : q.real();
            for (const auto &c : coeffs_) {
                if (c.bus == 0)
                    continue;  // the slack voltage is not a state
                const Complex d_re = c.a + c.b;
                const Complex d_im = Complex{0, 1} * (c.a - c.b);
                jac(r, c.bus - 1) += imag ? d_re.imag() : d_re.real();
                jac(r, c.bus - 1 + n_) += imag ? d_im.imag() : d_im.real();
            }
        }
    }

    CVec voltages(const Vec &state) const {
        CVec v(n_ + 1);
        v(0) = net_.slack_voltage;
        for (Index k = 0; k < n_; ++k)
            v(k + 1) = Complex{state(k), state(k + n_)};
        return v;
    }

    Vec state(const CVec &v) const {
        Vec x(2 * n_);
        for (Index k = 0; k < n_; ++k) {
            x(k) = v(k + 1).real();
            x(k + n_) = v(k + 1).imag();
        }
        return x;
    }

    Vec values() const {
        Vec z(meas_.size());
        for (Index r = 0; r < z.size(); ++r)
            z(r) = meas_.items[r].value;
        return z;
    }

    Vec sqrt_weights() const {
        Vec w(meas_.size());
        for (Index r = 0; r < w.size(); ++r)
            w(r) = std::sqrt(meas_.items[r].weight);
        return w;
    }

private:
    struct Coeff {
        Index bus;
        Complex a, b;
    };

    const Network &net_;
    const MeasurementSet &meas_;
    CMat y_;
    Index n_;
    mutable std::vector<Coeff> coeffs_;
};

inline Index numerical_rank(const Mat &m) {
    if (m.size() == 0)
        return 0;
    const Vec s = Eigen::JacobiSVD<Mat>(m).singularValues();
    if (s.size() == 0 || s(0) == 0.0)
        return 0;
    const double tol = 1e-8 * s(0);
    return static_cast<Index>((s.array() > tol).count());
}

inline CVec flat_start(const Network &net) {
    const auto blocks = build_admittance(net);
    CVec v(net.bus_count());
    v(0) = net.slack_voltage;
    v.tail(net.bus_count() - 1) = zero_load_voltage(blocks, net.slack_voltage);
    return v;
}

} // namespace detail

/// Rank of the measurement Jacobian at the flat start (zero-load
/// voltage) against the 2(|B|-1) rectangular unknowns.
inline ObservabilityReport check_observability(const MeasurementSet &meas, const Network &net) {
    validate(meas, net);
    detail::MeasurementModel model(net, meas);
    Vec h;
    Mat jac;
    model.evaluate(detail::flat_start(net), h, jac);
    ObservabilityReport r;
    r.unknown_count = model.unknowns();
    r.jacobian_rank = detail::numerical_rank(jac);
    r.observable = r.jacobian_rank == r.unknown_count;
    return r;
}

inline WlsResult wls_estimate(const MeasurementSet &meas, const Network &net,
                              const std::optional<CVec> &init = std::nullopt, const WlsOptions &opt = {}) {
    const auto report = check_observability(meas, net);
    if (!report.observable)
        throw UnobservableError("measurement Jacobian has rank " + std::to_string(report.jacobian_rank) + " < " +
                                    std::to_string(report.unknown_count) + " unknowns",
                                report.jacobian_rank, report.unknown_count);

    detail::MeasurementModel model(net, meas);
    const CVec start = init.value_or(detail::flat_start(net));
    if (start.size() != net.bus_count())
        throw DimensionError("wls_estimate: initial guess needs one voltage per bus");
    Vec x = model.state(start);
    const Vec z = model.values(), sw = model.sqrt_weights();

    Vec h;
    Mat jac;
    auto cost_at = [&](const Vec &state) {
        Mat unused;
        Vec hh;
        model.evaluate(model.voltages(state), hh, unused);
        return (sw.cwiseProduct(z - hh)).squaredNorm();
    };

    WlsResult out;
    double cost = cost_at(x);
    out.cost_history.push_back(cost);
    int it = 0;
    for (;; ++it) {
        if (it >= opt.max_iterations)
            throw DivergenceError("WLS did not converge in " + std::to_string(opt.max_iterations) + " iterations",
                                  out.cost_history);
        model.evaluate(model.voltages(x), h, jac);
        const Mat a = sw.asDiagonal() * jac;
        const Vec rhs = sw.cwiseProduct(z - h);
        const Vec step = a.colPivHouseholderQr().solve(rhs);
        if (!step.allFinite())
            throw DivergenceError("WLS produced a non-finite step", out.cost_history);

        double scale = 1.0;
        Vec trial = x + step;
        double trial_cost = cost_at(trial);
        for (int k = 0; k < opt.max_halvings && trial_cost > cost; ++k) {
            scale *= 0.5;
            trial = x + scale * step;
            trial_cost = cost_at(trial);
        }
        x = trial;
        cost = trial_cost;
        out.cost_history.push_back(cost);
        if (!std::isfinite(cost))
            throw DivergenceError("WLS diverged (non-finite cost)", out.cost_history);
        if (scale * step.norm() < opt.step_tolerance) {
            ++it;
            break;
        }
    }
    out.estimate = make_estimate(model.voltages(x));
    out.iterations = it;
    out.cost = cost;
    return out;
}

/// Standard deviation floor (p.u.) for exact and near-zero measurements.
inline constexpr double kWlsSigmaFloor = 1e-5;

/// Converts the noisy observations of a data matrix into WLS measurements.
/// Slack phasor entries are dropped (the slack voltage is not a state);
/// every other observation keeps its value with weight 1 / (sigma |z|)^2,
/// floored at kWlsSigmaFloor.
inline MeasurementSet measurements_from_observations(const ObservedMatrix &om) {
    using K = QuantityKind;
    MeasurementSet out;
    for (const auto &o : om.observations) {
        MeasurementKind kind;
        switch (o.quantity.kind) {
        case K::AbsV:
            if (o.quantity.location == 0)
                continue;
            kind = MeasurementKind::VoltageMagnitude;
            break;
        case K::ReS: kind = MeasurementKind::RealInjection; break;
        case K::ImS: kind = MeasurementKind::ReactiveInjection; break;
        case K::ReI: kind = MeasurementKind::RealCurrent; break;
        case K::ImI: kind = MeasurementKind::ImagCurrent; break;
        default: continue;
        }
        const double sigma = std::max(om.sigma(o.noise) * std::abs(o.value), kWlsSigmaFloor);
        out.add(kind, o.quantity.location, o.value, 1.0 / (sigma * sigma));
    }
    return out;
}

} // namespace mcse
