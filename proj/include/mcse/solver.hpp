#pragma once

// Constrained matrix completion:
//
//   minimize    ||X||_* + sum_k w_k ||G_k vec(X) - b_k||
//   subject to  ||X_Psi - M_Psi||_F <= delta,   duplicated cells equal.
//
// The tolerance variables of the relaxed power-flow constraints are
// eliminated: for fixed X the cheapest feasible tolerance is |r_k(X)|, so the
// weighted tolerance norms collapse onto the residual norms.
//
// Solved with ADMM on the consensus splitting
//     x = vec(X);  Z1 = x (nuclear prox),  z2 = G x (penalty prox),
//     Z3 = x (projection onto the data ball intersected with the duplication
//     subspace).
// The x-update solves (2I + G^T G) x = r through a Woodbury identity on a
// small dense factorization that does not depend on rho.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "common.hpp"
#include "datamatrix.hpp"
#include "linearize.hpp"
#include "netmodel.hpp"

namespace mcse {

enum class ConstraintTag { Ohm, VoltageLinear, VoltageMagnitude, SlackPower };

inline const char *to_string(ConstraintTag t) {
    switch (t) {
    case ConstraintTag::Ohm: return "ohm";
    case ConstraintTag::VoltageLinear: return "vlin";
    case ConstraintTag::VoltageMagnitude: return "vmag";
    case ConstraintTag::SlackPower: return "slack";
    }
    return "?";
}

enum class ResidualPart { Real, Imag, Magnitude };

using SparseRowMat = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// r(X) = map * vec(X) - offset; one row per scalar relaxed constraint.
/// Each group corresponds to one tolerance vector of the relaxed problem.
struct PenaltyGroup {
    ConstraintTag tag;
    ResidualPart part;
    SparseRowMat map;
    Vec offset;

    Vec residual(const Vec &x) const { return map * x - offset; }
};

struct ConstraintSet {
    Formulation formulation = Formulation::Branch;
    Index rows = 0, cols = 0;
    std::vector<std::pair<Cell, Cell>> equalities;  // duplicated cells
    std::vector<Index> cell_class;                  // per linear cell
    Index class_count = 0;
    std::vector<PenaltyGroup> penalties;

    Index variable_count() const { return rows * cols; }

    Index residual_rows(ConstraintTag tag) const {
        Index n = 0;
        for (const auto &g : penalties)
            if (g.tag == tag)
                n += g.map.rows();
        return n;
    }

    bool has(ConstraintTag tag) const { return residual_rows(tag) > 0; }
};

namespace detail {

class GroupBuilder {
public:
    GroupBuilder(ConstraintTag tag, ResidualPart part, Index vars) : tag_(tag), part_(part), vars_(vars) {}

    /// Starts a new residual row with the given offset.
    void row(double offset) { offsets_.push_back(offset); }

    void coeff(Index var, double value) {
        if (value != 0.0)
            triplets_.emplace_back(static_cast<Index>(offsets_.size()) - 1, var, value);
    }

    PenaltyGroup finish() {
        PenaltyGroup g{tag_, part_, SparseRowMat(static_cast<Index>(offsets_.size()), vars_), Vec()};
        g.map.setFromTriplets(triplets_.begin(), triplets_.end());
        g.offset = Eigen::Map<const Vec>(offsets_.data(), static_cast<Index>(offsets_.size()));
        return g;
    }

private:
    ConstraintTag tag_;
    ResidualPart part_;
    Index vars_;
    std::vector<double> offsets_;
    std::vector<Eigen::Triplet<double>> triplets_;
};

} // namespace detail

/// Builds duplication equalities and the relaxed Ohm, linearized-voltage,
/// linearized-magnitude and slack-power residuals. The bus formulation has
/// neither duplicates nor branch currents, so only vlin/vmag/slack remain.
inline ConstraintSet assemble_constraints(const Network &net, const AdmittanceBlocks &blocks, const LinearModel &model,
                                          const MatrixLayout &layout) {
    using K = QuantityKind;
    const Index nb = net.bus_count();
    if (layout.bus_count() != nb || model.size() != nb - 1 || blocks.size() != nb)
        throw DimensionError("assemble_constraints: network, model and layout sizes disagree");

    ConstraintSet cs;
    cs.formulation = layout.formulation();
    cs.rows = layout.rows();
    cs.cols = layout.cols();
    cs.equalities = duplication_pairs(layout);
    cs.cell_class = layout.cell_classes();
    cs.class_count = static_cast<Index>(layout.quantities().size());
    const Index vars = layout.size();
    auto var = [&](K kind, Index loc) { return layout.linear(layout.canonical_cell({kind, loc})); };

    if (layout.formulation() == Formulation::Branch) {
        detail::GroupBuilder re(ConstraintTag::Ohm, ResidualPart::Real, vars);
        detail::GroupBuilder im(ConstraintTag::Ohm, ResidualPart::Imag, vars);
        for (Index r = 0; r < layout.rows(); ++r) {
            const auto &br = net.branches[layout.row_keys()[r]];
            // (v_f - v_t) y + v_f y_sh/2 - i, using the cells of this row.
            const Complex y = br.series_admittance, yf = y + br.total_shunt / 2.0;
            auto at = [&](Index col) { return layout.linear({r, col}); };
            re.row(0.0);
            re.coeff(at(0), yf.real());
            re.coeff(at(1), -yf.imag());
            re.coeff(at(5), -y.real());
            re.coeff(at(6), y.imag());
            re.coeff(at(10), -1.0);
            im.row(0.0);
            im.coeff(at(0), yf.imag());
            im.coeff(at(1), yf.real());
            im.coeff(at(5), -y.imag());
            im.coeff(at(6), -y.real());
            im.coeff(at(11), -1.0);
        }
        cs.penalties.push_back(re.finish());
        cs.penalties.push_back(im.finish());
    }

    const Index n = nb - 1;
    auto u_var = [&](Index j) { return j < n ? var(K::ReS, j + 1) : var(K::ImS, j - n + 1); };
    {
        detail::GroupBuilder re(ConstraintTag::VoltageLinear, ResidualPart::Real, vars);
        detail::GroupBuilder im(ConstraintTag::VoltageLinear, ResidualPart::Imag, vars);
        detail::GroupBuilder mag(ConstraintTag::VoltageMagnitude, ResidualPart::Magnitude, vars);
        for (Index k = 0; k < n; ++k) {
            const Index b = k + 1;
            re.row(model.w(k).real());
            re.coeff(var(K::ReV, b), 1.0);
            im.row(model.w(k).imag());
            im.coeff(var(K::ImV, b), 1.0);
            mag.row(std::abs(model.w(k)));
            mag.coeff(var(K::AbsV, b), 1.0);
            for (Index j = 0; j < 2 * n; ++j) {
                re.coeff(u_var(j), -model.a(k, j).real());
                im.coeff(u_var(j), -model.a(k, j).imag());
                mag.coeff(u_var(j), -model.c(k, j));
            }
        }
        cs.penalties.push_back(re.finish());
        cs.penalties.push_back(im.finish());
        cs.penalties.push_back(mag.finish());
    }
    {
        // s_1 - v_1 (conj(Y11) conj(v_1) + conj(Y1L) conj(v_-1)); v_1 is known.
        const Complex v1 = net.slack_voltage;
        const Complex constant = v1 * std::conj(blocks.y11()) * std::conj(v1);
        detail::GroupBuilder re(ConstraintTag::SlackPower, ResidualPart::Real, vars);
        detail::GroupBuilder im(ConstraintTag::SlackPower, ResidualPart::Imag, vars);
        re.row(constant.real());
        im.row(constant.imag());
        re.coeff(var(K::ReS, 0), 1.0);
        im.coeff(var(K::ImS, 0), 1.0);
        for (Index k = 0; k < n; ++k) {
            const Complex a = v1 * std::conj(blocks.y1l()(k));
            if (a == Complex{})
                continue;
            // a conj(v) = (ar x + ai y) + j (ai x - ar y)
            re.coeff(var(K::ReV, k + 1), -a.real());
            re.coeff(var(K::ImV, k + 1), -a.imag());
            im.coeff(var(K::ReV, k + 1), -a.imag());
            im.coeff(var(K::ImV, k + 1), a.real());
        }
        cs.penalties.push_back(re.finish());
        cs.penalties.push_back(im.finish());
    }
    return cs;
}

inline ConstraintSet assemble_constraints(const Network &net, const LinearModel &model, const MatrixLayout &layout) {
    return assemble_constraints(net, build_admittance(net), model, layout);
}

// ---------------------------------------------------------------------------
// Configuration and results

enum class ResidualNorm { L1, L2 };

/// An infinite weight turns the relaxed constraint into an equality.
struct TagWeights {
    double ohm = kHard;
    double vlin = kHard;
    double vmag = kHard;
    double slack = kHard;

    static constexpr double kHard = std::numeric_limits<double>::infinity();


    double of(ConstraintTag t) const {
        switch (t) {
        case ConstraintTag::Ohm: return ohm;
        case ConstraintTag::VoltageLinear: return vlin;
        case ConstraintTag::VoltageMagnitude: return vmag;
        case ConstraintTag::SlackPower: return slack;
        }
        return 0.0;
    }
};

struct SolverConfig {
    std::optional<double> delta;  // unset: noise-calibrated default_delta()
    TagWeights weights;
    ResidualNorm residual_norm = ResidualNorm::L1;
    int max_iter = 5000;
    double tol_primal = 1e-6;
    double tol_dual = 1e-6;
    double rho = 1.0;
    double relaxation = 1.6;  // over-relaxation of the hard-physics iteration, in (0, 2)
    bool standardize_columns = true;
    bool record_history = false;
};

inline void validate(const SolverConfig &cfg) {
    if (cfg.delta && !(*cfg.delta >= 0))
        throw Error("delta must be nonnegative");
    for (double w : {cfg.weights.ohm, cfg.weights.vlin, cfg.weights.vmag, cfg.weights.slack})
        if (!(w >= 0))
            throw Error("constraint weights must be nonnegative");
    if (!(cfg.rho > 0) || !std::isfinite(cfg.rho))
        throw Error("rho must be positive and finite");
    if (!(cfg.relaxation > 0 && cfg.relaxation < 2))
        throw Error("relaxation must lie in (0, 2)");
    if (cfg.max_iter < 1)
        throw Error("max_iter must be positive");
    if (!(cfg.tol_primal > 0) || !(cfg.tol_dual > 0))
        throw Error("tolerances must be positive");
}

struct SolverDiagnostics {
    int iterations = 0;
    bool converged = false;
    bool infeasible = false;
    std::string warning;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double objective = 0.0;
    double nuclear_norm = 0.0;
    double data_fit = 0.0;          // ||X_Psi - M_Psi||_F
    double delta = 0.0;
    double duplication_violation = 0.0;
    std::map<ConstraintTag, double> residual_norms;
    std::vector<double> primal_history;  // filled when record_history is set
};

struct CompletedMatrix {
    Mat x;
    SolverDiagnostics diagnostics;
};

namespace detail {

/// Flattened completion problem over column-major cells.
struct Problem {
    Index rows = 0, cols = 0;
    std::vector<Index> cell_class;           // duplicate class per cell
    Index class_count = 0;
    Vec data;                                // observed value per cell, 0 elsewhere
    std::vector<std::int8_t> noise;          // NoiseClass per cell, -1 when unobserved
    std::vector<std::pair<Index, Index>> equalities;
    std::vector<PenaltyGroup> penalties;
    double measurement_sigma = 0.01;

    Index size() const { return rows * cols; }
};

inline Problem make_problem(const ObservedMatrix &om, const ConstraintSet &cs) {
    Problem pb;
    pb.rows = cs.rows;
    pb.cols = cs.cols;
    pb.cell_class = cs.cell_class;
    pb.class_count = cs.class_count;
    pb.data = Eigen::Map<const Vec>(om.values.data(), om.values.size());
    pb.noise = om.cell_noise;
    for (Index k = 0; k < pb.data.size(); ++k)
        if (pb.noise[k] < 0)
            pb.data(k) = 0.0;
    for (const auto &[a, b] : cs.equalities)
        pb.equalities.emplace_back(om.layout.linear(a), om.layout.linear(b));
    pb.penalties = cs.penalties;
    pb.measurement_sigma = om.measurement_sigma;
    return pb;
}

/// Noise-free cells are held exactly and do not count towards the radius.
inline double default_delta(const Problem &pb) {
    double sum_sq = 0.0;
    Index count = 0;
    for (Index k = 0; k < pb.size(); ++k)
        if (pb.noise[k] > static_cast<std::int8_t>(NoiseClass::Exact)) {
            sum_sq += pb.data(k) * pb.data(k);
            ++count;
        }
    if (count == 0)
        return 0.0;
    const double rms = std::sqrt(sum_sq / static_cast<double>(count));
    return 1.05 * pb.measurement_sigma * std::sqrt(static_cast<double>(count)) * rms;
}

} // namespace detail

/// delta = 1.05 * sigma_meas * sqrt(|Psi|) * rms(M_Psi) over the noisy cells
/// of Psi, in the coordinates the solver works in.
inline double default_delta(const ObservedMatrix &om) {
    detail::Problem pb;
    pb.rows = om.layout.rows();
    pb.cols = om.layout.cols();
    pb.data = Eigen::Map<const Vec>(om.values.data(), om.values.size());
    pb.noise = om.cell_noise;
    pb.measurement_sigma = om.measurement_sigma;
    return detail::default_delta(pb);
}

// ---------------------------------------------------------------------------
// Proximal building blocks

inline double nuclear_norm(const Mat &m) {
    if (m.size() == 0)
        return 0.0;
    return Eigen::JacobiSVD<Mat>(m).singularValues().sum();
}

/// Singular-value thresholding: U max(Sigma - tau, 0) V^T.
inline Mat svt(const Mat &m, double tau) {
    if (!(tau >= 0))
        throw Error("svt: threshold must be nonnegative");
    if (m.size() == 0)
        return m;
    Eigen::JacobiSVD<Mat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vec shrunk = (svd.singularValues().array() - tau).max(0.0).matrix();
    Index rank = 0;
    while (rank < shrunk.size() && shrunk(rank) > 0)
        ++rank;
    if (rank == 0)
        return Mat::Zero(m.rows(), m.cols());
    return svd.matrixU().leftCols(rank) * shrunk.head(rank).asDiagonal() * svd.matrixV().leftCols(rank).transpose();
}

namespace detail {

inline double residual_norm(const Vec &r, ResidualNorm norm) {
    return norm == ResidualNorm::L1 ? r.lpNorm<1>() : r.norm();
}

/// Hard (infinite-weight) constraints are not part of the objective; their
/// residuals are reported separately.
inline double weighted(double w, double value) { return std::isinf(w) ? 0.0 : w * value; }

/// prox of (lambda * ||.||) at d.
inline Vec norm_prox(const Vec &d, double lambda, ResidualNorm norm) {
    if (lambda <= 0)
        return d;
    if (norm == ResidualNorm::L1)
        return d.unaryExpr([lambda](double v) { return v > lambda ? v - lambda : v < -lambda ? v + lambda : 0.0; });
    const double nd = d.norm();
    if (nd <= lambda)
        return Vec::Zero(d.size());
    return (1.0 - lambda / nd) * d;
}

/// Exact Euclidean projection onto {x constant on every duplicate class}
/// intersected with {||x_Psi - m_Psi||_F <= delta}.
class DataProjection {
public:
    DataProjection(const Problem &pb, double delta) {
        classes_ = pb.class_count;
        cell_class_ = pb.cell_class;
        size_.assign(classes_, 0.0);
        observed_.assign(classes_, 0.0);
        mean_obs_.assign(classes_, 0.0);
        pinned_.assign(classes_, 0.0);
        pinned_value_.assign(classes_, 0.0);
        // Noise-free observations are held exactly; the ball covers the rest.
        for (Index k = 0; k < static_cast<Index>(cell_class_.size()); ++k)
            if (pb.noise[k] == static_cast<std::int8_t>(NoiseClass::Exact)) {
                pinned_[cell_class_[k]] += 1.0;
                pinned_value_[cell_class_[k]] += pb.data(k);
            }
        for (Index j = 0; j < classes_; ++j)
            if (pinned_[j] > 0)
                pinned_value_[j] /= pinned_[j];
        for (Index k = 0; k < static_cast<Index>(cell_class_.size()); ++k) {
            const Index j = cell_class_[k];
            size_[j] += 1.0;
            if (pb.noise[k] >= 0 && pinned_[j] == 0) {
                observed_[j] += 1.0;
                mean_obs_[j] += pb.data(k);
            }
        }
        double spread = 0.0;
        for (Index j = 0; j < classes_; ++j)
            if (observed_[j] > 0)
                mean_obs_[j] /= observed_[j];
        for (Index k = 0; k < static_cast<Index>(cell_class_.size()); ++k)
            if (pb.noise[k] >= 0 && pinned_[cell_class_[k]] == 0) {
                const double d = pb.data(k) - mean_obs_[cell_class_[k]];
                spread += d * d;
            }
        radius_sq_ = delta * delta - spread;
        infeasible_ = radius_sq_ < -1e-14 * std::max(1.0, delta * delta);
        radius_sq_ = std::max(radius_sq_, 0.0);
        zbar_.assign(classes_, 0.0);
        value_.assign(classes_, 0.0);
    }

    bool infeasible() const { return infeasible_; }

    /// True when no class-constant point with the pinned values that solves
    /// a x = b lies inside the ball.
    bool misses_affine_set(const Mat &a, const Vec &b) const {
        if (a.rows() == 0)
            return false;
        std::vector<Index> free;
        std::vector<Index> slot(classes_, -1);
        for (Index j = 0; j < classes_; ++j)
            if (pinned_[j] == 0) {
                slot[j] = static_cast<Index>(free.size());
                free.push_back(j);
            }
        const Index nf = static_cast<Index>(free.size());
        Mat g = Mat::Zero(a.rows(), nf);
        Vec rhs = b;
        for (Index k = 0; k < a.cols(); ++k) {
            const Index j = cell_class_[k];
            if (slot[j] >= 0)
                g.col(slot[j]) += a.col(k);
            else
                rhs -= pinned_value_[j] * a.col(k);
        }
        Eigen::BDCSVD<Mat> svd(g, Eigen::ComputeThinU | Eigen::ComputeFullV);
        const Vec &sv = svd.singularValues();
        const double tol = 1e-10 * (sv.size() ? std::max(sv(0), 1.0) : 1.0);
        Index rank = 0;
        while (rank < sv.size() && sv(rank) > tol)
            ++rank;
        Vec c0 = Vec::Zero(nf);
        if (rank > 0)
            c0 = svd.matrixV().leftCols(rank) *
                 (svd.matrixU().leftCols(rank).transpose() * rhs).cwiseQuotient(sv.head(rank));
        const Mat kernel = svd.matrixV().rightCols(nf - rank);

        std::vector<Index> rows;
        for (Index f = 0; f < nf; ++f)
            if (observed_[free[f]] > 0)
                rows.push_back(f);
        const Index m = static_cast<Index>(rows.size());
        Mat wk(m, kernel.cols());
        Vec r(m);
        double scale = 0.0;
        for (Index i = 0; i < m; ++i) {
            const Index j = free[rows[i]];
            const double w = std::sqrt(observed_[j]);
            wk.row(i) = w * kernel.row(rows[i]);
            r(i) = w * (c0(rows[i]) - mean_obs_[j]);
            scale += observed_[j] * mean_obs_[j] * mean_obs_[j];
        }
        double dist = r.norm();
        if (kernel.cols() > 0 && m > 0)
            dist = (r - wk * wk.colPivHouseholderQr().solve(r)).norm();
        return dist > std::sqrt(radius_sq_) + 1e-9 * std::max(1.0, std::sqrt(scale));
    }

    void project(const Vec &y, Vec &out) {
        std::fill(zbar_.begin(), zbar_.end(), 0.0);
        for (Index k = 0; k < y.size(); ++k)
            zbar_[cell_class_[k]] += y(k);
        for (Index j = 0; j < classes_; ++j)
            zbar_[j] /= size_[j];

        double lambda = 0.0;
        if (fit(0.0) > radius_sq_) {
            if (radius_sq_ <= 0.0) {
                lambda = std::numeric_limits<double>::infinity();
            } else {
                double lo = 0.0, hi = 1.0;
                while (fit(hi) > radius_sq_ && hi < 1e300)
                    hi *= 4.0;
                for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    (fit(mid) > radius_sq_ ? lo : hi) = mid;
                }
                lambda = hi;
            }
        }
        for (Index j = 0; j < classes_; ++j)
            value_[j] = class_value(j, lambda);
        out.resize(y.size());
        for (Index k = 0; k < y.size(); ++k)
            out(k) = value_[cell_class_[k]];
    }

private:
    double class_value(Index j, double lambda) const {
        if (pinned_[j] > 0)
            return pinned_value_[j];
        if (observed_[j] == 0)
            return zbar_[j];
        if (std::isinf(lambda))
            return mean_obs_[j];
        return (size_[j] * zbar_[j] + lambda * observed_[j] * mean_obs_[j]) / (size_[j] + lambda * observed_[j]);
    }

    /// sum_j n_j (c_j(lambda) - mbar_j)^2
    double fit(double lambda) const {
        double f = 0.0;
        for (Index j = 0; j < classes_; ++j) {
            if (observed_[j] == 0)
                continue;
            const double d = size_[j] * (zbar_[j] - mean_obs_[j]) / (size_[j] + lambda * observed_[j]);
            f += observed_[j] * d * d;
        }
        return f;
    }

    Index classes_ = 0;
    std::vector<Index> cell_class_;
    std::vector<double> size_, observed_, mean_obs_, zbar_, value_, pinned_, pinned_value_;
    double radius_sq_ = 0.0;
    bool infeasible_ = false;
};

} // namespace detail

/// Residual of every penalty group at X.
inline std::vector<Vec> penalty_residuals(const Mat &x, const ConstraintSet &cs) {
    const Eigen::Map<const Vec> v(x.data(), x.size());
    std::vector<Vec> out;
    for (const auto &g : cs.penalties)
        out.push_back(g.residual(v));
    return out;
}

/// Cheapest feasible tolerance for every group: |r_k(X)| element-wise.
inline std::vector<Vec> optimal_tolerances(const Mat &x, const ConstraintSet &cs) {
    auto r = penalty_residuals(x, cs);
    for (auto &v : r)
        v = v.cwiseAbs();
    return r;
}

/// ||X||_* + sum_k w_k ||r_k(X)||.
inline double eliminated_objective(const Mat &x, const ConstraintSet &cs, const SolverConfig &cfg) {
    double obj = nuclear_norm(x);
    const auto r = penalty_residuals(x, cs);
    for (std::size_t k = 0; k < r.size(); ++k)
        obj += detail::weighted(cfg.weights.of(cs.penalties[k].tag), detail::residual_norm(r[k], cfg.residual_norm));
    return obj;
}

/// Objective with explicit tolerance vectors; +inf when (X, t) violates
/// -t <= r_k(X) <= t or t < 0.
inline double objective_with_tolerances(const Mat &x, const ConstraintSet &cs, const SolverConfig &cfg,
                                        const std::vector<Vec> &tolerances) {
    if (tolerances.size() != cs.penalties.size())
        throw DimensionError("one tolerance vector per penalty group required");
    const auto r = penalty_residuals(x, cs);
    double obj = nuclear_norm(x);
    for (std::size_t k = 0; k < r.size(); ++k) {
        const Vec &t = tolerances[k];
        if (t.size() != r[k].size())
            throw DimensionError("tolerance vector length mismatch");
        if ((t.array() < 0).any() || (r[k].cwiseAbs().array() > t.array()).any())
            return std::numeric_limits<double>::infinity();
        obj += detail::weighted(cfg.weights.of(cs.penalties[k].tag), detail::residual_norm(t, cfg.residual_norm));
    }
    return obj;
}

// ---------------------------------------------------------------------------
// ADMM

namespace detail {

struct AdmmResult {
    Vec x;
    int iterations = 0;
    bool converged = false;
    bool infeasible = false;
    double primal = 0.0, dual = 0.0;
    std::vector<double> history;
};

inline AdmmResult admm(const Problem &pb, const SolverConfig &cfg, double delta) {
    const Index n1 = pb.rows, n2 = pb.cols, n = n1 * n2;

    // Penalty rows, each group rescaled to unit rms row norm (exact: the
    // weight absorbs the factor).
    std::vector<Index> group_start;
    std::vector<double> group_weight;
    std::vector<Eigen::Triplet<double>> trip;
    Index p = 0;
    Vec offset;
    {
        std::vector<double> off;
        for (const auto &g : pb.penalties) {
            double fro = 0.0;
            for (Index r = 0; r < g.map.rows(); ++r)
                fro += g.map.row(r).squaredNorm();
            const double rms = g.map.rows() ? std::sqrt(fro / static_cast<double>(g.map.rows())) : 0.0;
            const double c = (rms > 0 ? 1.0 / rms : 1.0);
            group_start.push_back(p);
            group_weight.push_back(cfg.weights.of(g.tag) / c);
            for (Index r = 0; r < g.map.outerSize(); ++r)
                for (SparseRowMat::InnerIterator it(g.map, r); it; ++it)
                    trip.emplace_back(p + r, it.col(), c * it.value());
            for (Index r = 0; r < g.offset.size(); ++r)
                off.push_back(c * g.offset(r));
            p += g.map.rows();
        }
        group_start.push_back(p);
        offset = Eigen::Map<const Vec>(off.data(), p);
    }
    SparseRowMat g(p, n);
    g.setFromTriplets(trip.begin(), trip.end());
    const SparseRowMat gt_rows = g.transpose();

    // (2I + G^T G)^{-1} = (I - G^T (2I + G G^T)^{-1} G) / 2
    Eigen::LLT<Mat> woodbury;
    if (p > 0) {
        Mat k = Mat(g) * Mat(g).transpose();
        k.diagonal().array() += 2.0;
        woodbury.compute(k);
    }
    auto solve_x = [&](const Vec &rhs) -> Vec {
        if (p == 0)
            return 0.5 * rhs;
        return 0.5 * (rhs - gt_rows * woodbury.solve(g * rhs));
    };

    DataProjection projection(pb, delta);

    const double rho = cfg.rho;
    Vec x = pb.data;
    Vec z1 = x, u1 = Vec::Zero(n);
    Vec z2 = g * x, u2 = Vec::Zero(p);
    Vec z3 = x, u3 = Vec::Zero(n);
    Vec z1_old, z2_old, z3_old, gx;

    AdmmResult out;
    const double sqrt_dim = std::sqrt(static_cast<double>(2 * n + p));
    const double eps_abs = 1e-12;
    int it = 0;
    for (; it < cfg.max_iter; ++it) {
        x = solve_x((z1 - u1) + (z3 - u3) + gt_rows * (z2 - u2));
        gx = g * x;

        z1_old = z1;
        z2_old = z2;
        z3_old = z3;

        const Vec v1 = x + u1;
        const Mat shrunk = svt(Eigen::Map<const Mat>(v1.data(), n1, n2), 1.0 / rho);
        z1 = Eigen::Map<const Vec>(shrunk.data(), n);

        const Vec v2 = gx + u2;
        for (std::size_t grp = 0; grp + 1 < group_start.size(); ++grp) {
            const Index s = group_start[grp], len = group_start[grp + 1] - s;
            if (len == 0)
                continue;
            const Vec d = v2.segment(s, len) - offset.segment(s, len);
            z2.segment(s, len) = offset.segment(s, len) + norm_prox(d, group_weight[grp] / rho, cfg.residual_norm);
        }

        projection.project(x + u3, z3);

        const Vec r1 = x - z1, r2 = gx - z2, r3 = x - z3;
        u1 += r1;
        u2 += r2;
        u3 += r3;

        const double primal = std::sqrt(r1.squaredNorm() + r2.squaredNorm() + r3.squaredNorm());
        const double dual = rho * ((z1 - z1_old) + gt_rows * (z2 - z2_old) + (z3 - z3_old)).norm();
        const double ax = std::sqrt(2.0 * x.squaredNorm() + gx.squaredNorm());
        const double zn = std::sqrt(z1.squaredNorm() + z2.squaredNorm() + z3.squaredNorm());
        const double aty = rho * (u1 + gt_rows * u2 + u3).norm();
        const double eps_pri = sqrt_dim * eps_abs + cfg.tol_primal * std::max(ax, zn);
        const double eps_dual = std::sqrt(static_cast<double>(n)) * eps_abs + cfg.tol_dual * aty;

        out.primal = primal;
        out.dual = dual;
        if (cfg.record_history)
            out.history.push_back(primal);
        if (primal <= eps_pri && dual <= eps_dual) {
            out.converged = true;
            ++it;
            break;
        }
    }
    out.x = z3;
    out.iterations = it;
    out.infeasible = projection.infeasible();
    return out;
}

/// Every penalty carries an infinite weight: the relaxed constraints become
/// equalities G x = b. The duplicated cells are folded into the same affine
/// set A, so x-updates are orthogonal projections onto A and only the nuclear
/// prox and the data ball remain as consensus blocks.
inline AdmmResult admm_affine(const Problem &pb, const SolverConfig &cfg, double delta) {
    const Index n1 = pb.rows, n2 = pb.cols, n = n1 * n2;
    Index p = 0;
    for (const auto &g : pb.penalties)
        p += g.map.rows();
    const Index e = static_cast<Index>(pb.equalities.size());
    Mat a = Mat::Zero(p + e, n);
    Vec b = Vec::Zero(p + e);
    Index r = 0;
    for (const auto &g : pb.penalties) {
        for (Index i = 0; i < g.map.outerSize(); ++i) {
            double nrm = g.map.row(i).norm();
            if (nrm == 0)
                nrm = 1;
            for (SparseRowMat::InnerIterator it(g.map, i); it; ++it)
                a(r + i, it.col()) = it.value() / nrm;
            b(r + i) = g.offset(i) / nrm;
        }
        r += g.map.rows();
    }
    for (const auto &[c1, c2] : pb.equalities) {
        a(r, c1) = M_SQRT1_2;
        a(r, c2) = -M_SQRT1_2;
        ++r;
    }

    // A = {x0 + N t}
    Vec x0 = Vec::Zero(n);
    Mat null = Mat::Identity(n, n);
    if (a.rows() > 0) {
        Eigen::BDCSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeFullV);
        const Vec &sv = svd.singularValues();
        const double tol = 1e-10 * (sv.size() ? sv(0) : 1.0);
        Index rank = 0;
        while (rank < sv.size() && sv(rank) > tol)
            ++rank;
        null = svd.matrixV().rightCols(n - rank);
        if (rank > 0) {
            const Vec ub = svd.matrixU().leftCols(rank).transpose() * b;
            x0 = svd.matrixV().leftCols(rank) * ub.cwiseQuotient(sv.head(rank));
        }
    }
    const double inconsistency = a.rows() > 0 ? (a * x0 - b).norm() : 0.0;
    auto project_affine = [&](const Vec &v) -> Vec { return x0 + null * (null.transpose() * (v - x0)); };

    DataProjection projection(pb, delta);
    const bool infeasible = projection.infeasible() || inconsistency > 1e-8 * std::max(1.0, b.norm()) ||
                            projection.misses_affine_set(a, b);

    const double rho = cfg.rho;
    Vec x = pb.data;
    x = project_affine(x);
    Vec z1 = x, u1 = Vec::Zero(n);
    Vec z3 = x, u3 = Vec::Zero(n);
    Vec z1_old, z3_old;

    AdmmResult out;
    const double sqrt_dim = std::sqrt(static_cast<double>(2 * n));
    const double eps_abs = 1e-12;
    constexpr int kStallWindow = 500;
    double stall_mark = std::numeric_limits<double>::infinity();
    int it = 0;
    for (; it < cfg.max_iter; ++it) {
        x = project_affine(0.5 * ((z1 - u1) + (z3 - u3)));
        z1_old = z1;
        z3_old = z3;
        const double alpha = cfg.relaxation;
        const Vec h1 = alpha * x + (1 - alpha) * z1_old, h3 = alpha * x + (1 - alpha) * z3_old;

        const Vec v1 = h1 + u1;
        const Mat shrunk = svt(Eigen::Map<const Mat>(v1.data(), n1, n2), 1.0 / rho);
        z1 = Eigen::Map<const Vec>(shrunk.data(), n);
        projection.project(h3 + u3, z3);

        u1 += h1 - z1;
        u3 += h3 - z3;
        const Vec r1 = x - z1, r3 = x - z3;

        const double primal = std::sqrt(r1.squaredNorm() + r3.squaredNorm());
        const double dual = rho * null.transpose().operator*((z1 - z1_old) + (z3 - z3_old)).norm();
        const double ax = std::sqrt(2.0) * x.norm();
        const double zn = std::sqrt(z1.squaredNorm() + z3.squaredNorm());
        const double aty = rho * (null.transpose() * (u1 + u3)).norm();
        const double eps_pri = sqrt_dim * eps_abs + cfg.tol_primal * std::max(ax, zn);
        const double eps_dual = std::sqrt(static_cast<double>(n)) * eps_abs + cfg.tol_dual * aty;

        out.primal = primal;
        out.dual = dual;
        if (cfg.record_history)
            out.history.push_back(primal);
        if (primal <= eps_pri && dual <= eps_dual) {
            out.converged = true;
            ++it;
            break;
        }
        // Without a feasible point the residual levels off; stop once it has.
        if (infeasible && (it + 1) % kStallWindow == 0) {
            if (primal > eps_pri && primal > (1 - 1e-3) * stall_mark) {
                ++it;
                break;
            }
            stall_mark = primal;
        }
    }
    // The ball point z3 and the affine point x agree at convergence; the
    // affine point keeps the physics exact.
    out.x = x;
    out.iterations = it;
    out.infeasible = infeasible;
    return out;
}

inline AdmmResult run_admm(const Problem &pb, const SolverConfig &cfg, double delta) {
    const bool all_hard = std::all_of(pb.penalties.begin(), pb.penalties.end(),
                                      [&](const PenaltyGroup &g) { return std::isinf(cfg.weights.of(g.tag)); });
    return all_hard ? admm_affine(pb, cfg, delta) : admm(pb, cfg, delta);
}

/// rms of the observed nonzero entries of each quantity family (voltages,
/// powers, currents); 1 for a family without such entries.
inline std::array<double, 3> family_scales(const ObservedMatrix &om) {
    std::array<double, 3> sum{}, count{};
    for (Index k = 0; k < om.layout.size(); ++k) {
        if (om.cell_noise[k] < 0)
            continue;
        const auto c = om.layout.cell(k);
        const double v = om.values(c.row, c.col);
        if (v == 0.0)
            continue;
        const auto f = quantity_family(om.layout.quantity_at(c).kind);
        sum[f] += v * v;
        count[f] += 1.0;
    }
    std::array<double, 3> out{1.0, 1.0, 1.0};
    for (int f = 0; f < 3; ++f)
        if (count[f] > 0)
            out[f] = std::sqrt(sum[f] / count[f]);
    return out;
}

} // namespace detail

/// Column scaling used by the standardized problem: every cell divided by
/// the rms of its quantity family.
inline Vec standardization_scale(const ObservedMatrix &om) {
    const auto fam = detail::family_scales(om);
    Vec d(om.layout.size());
    for (Index k = 0; k < d.size(); ++k)
        d(k) = 1.0 / fam[quantity_family(om.layout.quantity_at(om.layout.cell(k)).kind)];
    return d;
}

namespace detail {

/// Runs the solver, standardizing with the per-cell scale `d` (Y = D X) when
/// given, and fills the diagnostics that do not depend on the layout.
inline CompletedMatrix solve_problem(const Problem &pb, const SolverConfig &cfg, const std::optional<Vec> &d) {
    const Index n = pb.size();
    AdmmResult res;
    double delta = 0.0;
    if (d) {
        Problem scaled = pb;
        scaled.data = pb.data.cwiseProduct(*d);
        const Vec dinv = d->cwiseInverse();
        for (auto &g : scaled.penalties)
            g.map = g.map * dinv.asDiagonal();
        delta = cfg.delta.value_or(default_delta(scaled));
        res = run_admm(scaled, cfg, delta);
        res.x = res.x.cwiseProduct(dinv);
    } else {
        delta = cfg.delta.value_or(default_delta(pb));
        res = run_admm(pb, cfg, delta);
    }

    CompletedMatrix out;
    out.x = Eigen::Map<const Mat>(res.x.data(), pb.rows, pb.cols);
    SolverDiagnostics &diag = out.diagnostics;
    diag.iterations = res.iterations;
    diag.converged = res.converged;
    diag.primal_residual = res.primal;
    diag.dual_residual = res.dual;
    diag.primal_history = std::move(res.history);
    diag.delta = delta;
    diag.infeasible = res.infeasible;
    if (diag.infeasible)
        diag.warning = "data-fit ball, exact observations and hard constraints are infeasible for this delta";
    else if (!diag.converged)
        diag.warning = "ADMM reached max_iter=" + std::to_string(cfg.max_iter) + " without meeting tolerances";

    // Measured in the coordinates of the ball.
    double fit = 0.0;
    for (Index k = 0; k < n; ++k)
        if (pb.noise[k] > static_cast<std::int8_t>(NoiseClass::Exact)) {
            const double e = (d ? (*d)(k) : 1.0) * (res.x(k) - pb.data(k));
            fit += e * e;
        }
    diag.data_fit = std::sqrt(fit);
    for (const auto &[a, b] : pb.equalities)
        diag.duplication_violation = std::max(diag.duplication_violation, std::abs(res.x(a) - res.x(b)));
    diag.nuclear_norm = nuclear_norm(out.x);
    double obj = diag.nuclear_norm;
    for (const auto &g : pb.penalties) {
        const double nrm = residual_norm(g.residual(res.x), cfg.residual_norm);
        obj += weighted(cfg.weights.of(g.tag), nrm);
        diag.residual_norms[g.tag] += cfg.residual_norm == ResidualNorm::L1 ? nrm : nrm * nrm;
    }
    diag.objective = obj;
    if (cfg.residual_norm == ResidualNorm::L2)
        for (auto &[tag, v] : diag.residual_norms)
            v = std::sqrt(v);
    return out;
}

} // namespace detail

inline CompletedMatrix solve_mc(const ObservedMatrix &observed, const ConstraintSet &cs, const SolverConfig &cfg) {
    validate(cfg);
    if (observed.layout.rows() != cs.rows || observed.layout.cols() != cs.cols)
        throw DimensionError("solve_mc: observed matrix and constraints disagree on shape");
    if (observed.mask_size() == 0)
        throw Error("solve_mc: observation mask is empty");
    const auto pb = detail::make_problem(observed, cs);
    std::optional<Vec> d;
    if (cfg.standardize_columns)
        d = standardization_scale(observed);
    return detail::solve_problem(pb, cfg, d);
}

/// Plain nuclear-norm completion of a matrix from the cells in `mask`, with
/// no duplicates, no physics and no standardization.
inline CompletedMatrix complete_matrix(const Mat &values, const std::vector<Cell> &mask, const SolverConfig &cfg) {
    validate(cfg);
    if (mask.empty())
        throw Error("complete_matrix: observation mask is empty");
    detail::Problem pb;
    pb.rows = values.rows();
    pb.cols = values.cols();
    pb.class_count = pb.size();
    pb.cell_class.resize(static_cast<std::size_t>(pb.size()));
    for (Index k = 0; k < pb.size(); ++k)
        pb.cell_class[k] = k;
    pb.data = Vec::Zero(pb.size());
    pb.noise.assign(static_cast<std::size_t>(pb.size()), -1);
    for (const auto &c : mask) {
        if (c.row < 0 || c.row >= pb.rows || c.col < 0 || c.col >= pb.cols)
            throw DimensionError("complete_matrix: mask cell outside the matrix");
        const Index k = c.col * pb.rows + c.row;
        pb.data(k) = values(c.row, c.col);
        pb.noise[k] = static_cast<std::int8_t>(NoiseClass::Measurement);
    }
    return detail::solve_problem(pb, cfg, std::nullopt);
}

inline VoltageEstimate extract_state(const CompletedMatrix &cm, const MatrixLayout &layout, Complex v1) {
    return extract_state(cm.x, layout, v1);
}

} // namespace mcse
