#pragma once

// Structured data matrix (branch or bus formulation), observation model and
// singular-value profiling.
//
// Branch row for line (f,t):
//   [Re v_f, Im v_f, |v_f|, Re s_f, Im s_f, Re v_t, Im v_t, |v_t|, Re s_t, Im s_t, Re i_ft, Im i_ft]
// Bus row for bus b:
//   [Re v_b, Im v_b, |v_b|, Re s_b, Im s_b]

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "common.hpp"
#include "netmodel.hpp"
#include "powerflow.hpp"

namespace mcse {

enum class Formulation { Branch, Bus };

inline const char *to_string(Formulation f) { return f == Formulation::Branch ? "branch" : "bus"; }

enum class QuantityKind : std::uint8_t { ReV, ImV, AbsV, ReS, ImS, ReI, ImI };

inline const char *to_string(QuantityKind k) {
    switch (k) {
    case QuantityKind::ReV: return "re_v";
    case QuantityKind::ImV: return "im_v";
    case QuantityKind::AbsV: return "abs_v";
    case QuantityKind::ReS: return "re_s";
    case QuantityKind::ImS: return "im_s";
    case QuantityKind::ReI: return "re_i";
    case QuantityKind::ImI: return "im_i";
    }
    return "?";
}

inline bool is_branch_kind(QuantityKind k) { return k == QuantityKind::ReI || k == QuantityKind::ImI; }
inline bool is_phasor_kind(QuantityKind k) { return k == QuantityKind::ReV || k == QuantityKind::ImV; }

/// 0 voltages, 1 powers, 2 currents.
inline int quantity_family(QuantityKind k) {
    switch (k) {
    case QuantityKind::ReS:
    case QuantityKind::ImS: return 1;
    case QuantityKind::ReI:
    case QuantityKind::ImI: return 2;
    default: return 0;
    }
}

/// A physical quantity: a kind at a bus (internal index) or a branch.
struct Quantity {
    QuantityKind kind = QuantityKind::ReV;
    Index location = 0;

    friend auto operator<=>(const Quantity &, const Quantity &) = default;
};

struct Cell {
    Index row = 0;
    Index col = 0;

    friend auto operator<=>(const Cell &, const Cell &) = default;
};

enum class ColumnEnd : std::uint8_t { From, To, Line, Node };

struct ColumnRole {
    QuantityKind kind;
    ColumnEnd end;

    std::string name() const {
        std::string n = to_string(kind);
        if (end == ColumnEnd::From)
            n += "_from";
        else if (end == ColumnEnd::To)
            n += "_to";
        return n;
    }
};

/// Row/column semantics of a data matrix and the cell <-> quantity map.
class MatrixLayout {
public:
    MatrixLayout() = default;

    static MatrixLayout branch(const Network &net) {
        using K = QuantityKind;
        MatrixLayout l;
        l.formulation_ = Formulation::Branch;
        l.bus_count_ = net.bus_count();
        l.branch_count_ = net.branch_count();
        for (auto end : {ColumnEnd::From, ColumnEnd::To})
            for (auto k : {K::ReV, K::ImV, K::AbsV, K::ReS, K::ImS})
                l.columns_.push_back({k, end});
        l.columns_.push_back({K::ReI, ColumnEnd::Line});
        l.columns_.push_back({K::ImI, ColumnEnd::Line});
        for (Index k = 0; k < net.branch_count(); ++k)
            l.row_keys_.push_back(k);
        l.endpoints_.reserve(net.branches.size());
        for (const auto &br : net.branches)
            l.endpoints_.push_back({br.from, br.to});
        l.index_cells();
        return l;
    }

    static MatrixLayout bus(const Network &net) {
        using K = QuantityKind;
        MatrixLayout l;
        l.formulation_ = Formulation::Bus;
        l.bus_count_ = net.bus_count();
        l.branch_count_ = net.branch_count();
        for (auto k : {K::ReV, K::ImV, K::AbsV, K::ReS, K::ImS})
            l.columns_.push_back({k, ColumnEnd::Node});
        for (Index b = 0; b < net.bus_count(); ++b)
            l.row_keys_.push_back(b);
        l.index_cells();
        return l;
    }

    static MatrixLayout make(const Network &net, Formulation f) {
        return f == Formulation::Branch ? branch(net) : bus(net);
    }

    Formulation formulation() const { return formulation_; }
    Index rows() const { return static_cast<Index>(row_keys_.size()); }
    Index cols() const { return static_cast<Index>(columns_.size()); }
    Index size() const { return rows() * cols(); }
    Index bus_count() const { return bus_count_; }
    const std::vector<Index> &row_keys() const { return row_keys_; }
    const std::vector<ColumnRole> &columns() const { return columns_; }

    /// Column-major linear index, matching Eigen storage of the data matrix.
    Index linear(Cell c) const { return c.row + c.col * rows(); }
    Cell cell(Index linear_index) const { return {linear_index % rows(), linear_index / rows()}; }

    Quantity quantity_at(Cell c) const { return quantities_[cell_class_[linear(c)]]; }

    /// Distinct physical quantities, sorted.
    const std::vector<Quantity> &quantities() const { return quantities_; }

    /// Equivalence class (index into quantities()) of every linear cell.
    const std::vector<Index> &cell_classes() const { return cell_class_; }

    bool contains(const Quantity &q) const {
        return std::binary_search(quantities_.begin(), quantities_.end(), q);
    }

    Index class_of(const Quantity &q) const {
        auto it = std::lower_bound(quantities_.begin(), quantities_.end(), q);
        if (it == quantities_.end() || *it != q)
            throw DimensionError(std::string("layout has no cell for quantity ") + to_string(q.kind) + "@" +
                                 std::to_string(q.location));
        return static_cast<Index>(it - quantities_.begin());
    }

    /// Cells holding `q`, in lexicographic (row, col) order.
    const std::vector<Cell> &cells_of(const Quantity &q) const { return class_cells_[class_of(q)]; }
    const std::vector<Cell> &class_cells(Index cls) const { return class_cells_[cls]; }

    /// First cell of the equivalence class.
    Cell canonical_cell(const Quantity &q) const { return cells_of(q).front(); }

private:
    Quantity quantity_for(Index row, Index col) const {
        const auto &role = columns_[col];
        const Index key = row_keys_[row];
        switch (role.end) {
        case ColumnEnd::From: return {role.kind, endpoints_[key].first};
        case ColumnEnd::To: return {role.kind, endpoints_[key].second};
        case ColumnEnd::Line:
        case ColumnEnd::Node: return {role.kind, key};
        }
        return {};
    }

    void index_cells() {
        std::map<Quantity, std::vector<Cell>> groups;
        for (Index r = 0; r < rows(); ++r)
            for (Index c = 0; c < cols(); ++c)
                groups[quantity_for(r, c)].push_back({r, c});
        cell_class_.assign(static_cast<std::size_t>(size()), 0);
        for (auto &[q, cells] : groups) {
            std::sort(cells.begin(), cells.end());
            const Index cls = static_cast<Index>(quantities_.size());
            quantities_.push_back(q);
            for (const auto &c : cells)
                cell_class_[linear(c)] = cls;
            class_cells_.push_back(std::move(cells));
        }
    }

    Formulation formulation_ = Formulation::Branch;
    Index bus_count_ = 0;
    Index branch_count_ = 0;
    std::vector<Index> row_keys_;
    std::vector<ColumnRole> columns_;
    std::vector<std::pair<Index, Index>> endpoints_;
    std::vector<Quantity> quantities_;
    std::vector<Index> cell_class_;
    std::vector<std::vector<Cell>> class_cells_;
};

struct DataMatrix {
    Mat values;
    MatrixLayout layout;
};

inline double quantity_value(const PowerFlowSolution &sol, const Quantity &q) {
    switch (q.kind) {
    case QuantityKind::ReV: return sol.v(q.location).real();
    case QuantityKind::ImV: return sol.v(q.location).imag();
    case QuantityKind::AbsV: return std::abs(sol.v(q.location));
    case QuantityKind::ReS: return sol.s(q.location).real();
    case QuantityKind::ImS: return sol.s(q.location).imag();
    case QuantityKind::ReI: return sol.i(q.location).real();
    case QuantityKind::ImI: return sol.i(q.location).imag();
    }
    return 0.0;
}

inline DataMatrix build_data_matrix(const Network &net, const PowerFlowSolution &sol, Formulation f) {
    if (sol.v.size() != net.bus_count() || sol.s.size() != net.bus_count() || sol.i.size() != net.branch_count())
        throw DimensionError("power-flow solution does not cover the network");
    DataMatrix m{Mat(), MatrixLayout::make(net, f)};
    m.values.resize(m.layout.rows(), m.layout.cols());
    for (Index r = 0; r < m.layout.rows(); ++r)
        for (Index c = 0; c < m.layout.cols(); ++c)
            m.values(r, c) = quantity_value(sol, m.layout.quantity_at({r, c}));
    return m;
}

inline DataMatrix build_branch_matrix(const Network &net, const PowerFlowSolution &sol) {
    return build_data_matrix(net, sol, Formulation::Branch);
}

inline DataMatrix build_bus_matrix(const Network &net, const PowerFlowSolution &sol) {
    return build_data_matrix(net, sol, Formulation::Bus);
}

/// Pairs of cells holding the same quantity; each cell is paired with the
/// first cell of its class. Empty for the bus formulation.
inline std::vector<std::pair<Cell, Cell>> duplication_pairs(const MatrixLayout &layout) {
    std::vector<std::pair<Cell, Cell>> out;
    if (layout.formulation() == Formulation::Bus)
        return out;
    for (Index cls = 0; cls < static_cast<Index>(layout.quantities().size()); ++cls) {
        const auto &cells = layout.class_cells(cls);
        for (std::size_t k = 1; k < cells.size(); ++k)
            out.push_back({cells.front(), cells[k]});
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Voltage state read back from a (completed) data matrix

struct VoltageEstimate {
    CVec v;          // complex voltage per bus
    Vec magnitude;   // per bus
    Vec angle_deg;   // per bus
};

inline VoltageEstimate make_estimate(const CVec &v) {
    VoltageEstimate e{v, v.cwiseAbs(), Vec(v.size())};
    for (Index b = 0; b < v.size(); ++b)
        e.angle_deg(b) = to_degrees(std::arg(v(b)));
    return e;
}

/// Per bus: phasor from the averaged Re/Im cells, magnitude from the averaged
/// |v| cells. The slack bus passes `v1` through.
inline VoltageEstimate extract_state(const Mat &x, const MatrixLayout &layout, Complex v1) {
    if (x.rows() != layout.rows() || x.cols() != layout.cols())
        throw DimensionError("matrix does not match its layout");
    auto mean_of = [&](QuantityKind k, Index b) {
        const auto &cells = layout.cells_of({k, b});
        double sum = 0.0;
        for (const auto &c : cells)
            sum += x(c.row, c.col);
        return sum / static_cast<double>(cells.size());
    };
    const Index nb = layout.bus_count();
    VoltageEstimate e{CVec(nb), Vec(nb), Vec(nb)};
    for (Index b = 0; b < nb; ++b) {
        if (b == 0) {
            e.v(b) = v1;
            e.magnitude(b) = std::abs(v1);
        } else {
            e.v(b) = {mean_of(QuantityKind::ReV, b), mean_of(QuantityKind::ImV, b)};
            e.magnitude(b) = mean_of(QuantityKind::AbsV, b);
        }
        e.angle_deg(b) = to_degrees(std::arg(e.v(b)));
    }
    return e;
}

// ---------------------------------------------------------------------------
// Scenarios and the observation model

enum class NoiseClass : std::int8_t { Exact = 0, Measurement = 1, Pseudo = 2 };

inline const char *to_string(NoiseClass c) {
    switch (c) {
    case NoiseClass::Exact: return "exact";
    case NoiseClass::Measurement: return "measurement";
    case NoiseClass::Pseudo: return "pseudo";
    }
    return "?";
}

/// 0 = not measured, P = pseudomeasurements, M = measurements.
enum class DataClass { None, Pseudo, Measured };

inline char to_char(DataClass c) { return c == DataClass::None ? '0' : c == DataClass::Pseudo ? 'P' : 'M'; }

inline DataClass data_class_from_char(char c) {
    switch (c) {
    case '0': return DataClass::None;
    case 'P': case 'p': return DataClass::Pseudo;
    case 'M': case 'm': return DataClass::Measured;
    }
    throw Error(std::string("unknown data class '") + c + "' (expected 0, P or M)");
}

struct RandomBusSampling {
    double fraction = 0.0;
};

struct DataDriven {
    DataClass solar = DataClass::Measured;
    DataClass large_load = DataClass::Measured;
    DataClass small_load = DataClass::Measured;
    double solar_coverage = 1.0;
    double large_coverage = 1.0;
    double small_coverage = 1.0;

    std::string code() const { return {to_char(solar), to_char(large_load), to_char(small_load)}; }
};

enum class SensorType { Ami, Magnitude };

struct SensorAddition {
    SensorType type;
    Index bus;  // internal index
};

struct FullObservabilityAugmented {
    DataDriven base;
    std::vector<SensorAddition> added;
};

struct TimeSeries {
    double availability = 1.0;
    double loss = 0.0;
};

using ScenarioKind = std::variant<RandomBusSampling, DataDriven, FullObservabilityAugmented, TimeSeries>;

struct Scenario {
    ScenarioKind kind = RandomBusSampling{};
    double measurement_sigma = 0.01;
    double pseudo_sigma = 0.10;
    std::uint64_t seed = 0;
};

inline void check_fraction(double f, const char *what) {
    if (!(f >= 0.0 && f <= 1.0))
        throw Error(std::string(what) + " must lie in [0, 1]");
}

inline void validate(const Scenario &sc) {
    if (!(sc.measurement_sigma >= 0) || !(sc.pseudo_sigma >= 0))
        throw Error("noise levels must be nonnegative");
    std::visit(
        [](const auto &k) {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, RandomBusSampling>) {
                check_fraction(k.fraction, "sampling fraction");
            } else if constexpr (std::is_same_v<T, DataDriven>) {
                check_fraction(k.solar_coverage, "solar coverage");
                check_fraction(k.large_coverage, "large-load coverage");
                check_fraction(k.small_coverage, "small-load coverage");
            } else if constexpr (std::is_same_v<T, FullObservabilityAugmented>) {
                check_fraction(k.base.solar_coverage, "solar coverage");
                check_fraction(k.base.large_coverage, "large-load coverage");
                check_fraction(k.base.small_coverage, "small-load coverage");
            } else {
                check_fraction(k.availability, "availability");
                check_fraction(k.loss, "loss");
            }
        },
        sc.kind);
}

inline std::string describe(const Scenario &sc) {
    return std::visit(
        [](const auto &k) -> std::string {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, RandomBusSampling>)
                return "random:" + text::format_double(k.fraction);
            else if constexpr (std::is_same_v<T, DataDriven>)
                return "data_driven:" + k.code();
            else if constexpr (std::is_same_v<T, FullObservabilityAugmented>)
                return "augmented:" + k.base.code() + "+" + std::to_string(k.added.size());
            else
                return "timeseries:" + text::format_double(k.availability) + "/" + text::format_double(k.loss);
        },
        sc.kind);
}

/// Which quantities are observed and with which noise class.
using ObservationPlan = std::map<Quantity, NoiseClass>;

/// Keeps the more accurate class when a quantity is planned twice.
inline void plan_add(ObservationPlan &plan, const Quantity &q, NoiseClass c) {
    auto [it, inserted] = plan.emplace(q, c);
    if (!inserted && static_cast<int>(c) < static_cast<int>(it->second))
        it->second = c;
}

/// Quantities known exactly at the feeder head: every non-phasor-restricted
/// slack quantity plus the currents of slack-incident branches.
inline std::vector<Quantity> slack_quantities(const Network &net, const MatrixLayout &layout) {
    using K = QuantityKind;
    std::vector<Quantity> out;
    for (auto k : {K::ReV, K::ImV, K::AbsV, K::ReS, K::ImS})
        if (layout.contains({k, 0}))
            out.push_back({k, 0});
    for (Index k = 0; k < net.branch_count(); ++k) {
        const auto &br = net.branches[k];
        if (br.from != 0 && br.to != 0)
            continue;
        for (auto kind : {K::ReI, K::ImI})
            if (layout.contains({kind, k}))
                out.push_back({kind, k});
    }
    return out;
}

/// "Potentially known" quantities attributed to a non-slack bus: |v|, Re s,
/// Im s and the current of the branch it owns (when not slack-incident).
inline std::vector<Quantity> potentially_known_at(const Network &net, const MatrixLayout &layout, Index bus,
                                                  const std::vector<Index> &owned) {
    using K = QuantityKind;
    std::vector<Quantity> out;
    for (auto k : {K::AbsV, K::ReS, K::ImS})
        if (layout.contains({k, bus}))
            out.push_back({k, bus});
    const Index br = owned[bus];
    if (br >= 0 && net.branches[br].from != 0 && net.branches[br].to != 0)
        for (auto k : {K::ReI, K::ImI})
            if (layout.contains({k, br}))
                out.push_back({k, br});
    return out;
}

/// Every potentially-known quantity, counted once (duplicated cells excluded).
inline std::vector<Quantity> potentially_known(const Network &net, const MatrixLayout &layout) {
    const auto owned = net.owned_branch();
    std::vector<Quantity> out;
    for (Index b = 1; b < net.bus_count(); ++b)
        for (const auto &q : potentially_known_at(net, layout, b, owned))
            out.push_back(q);
    std::sort(out.begin(), out.end());
    return out;
}

inline ObservationPlan slack_plan(const Network &net, const MatrixLayout &layout) {
    ObservationPlan plan;
    for (const auto &q : slack_quantities(net, layout))
        plan_add(plan, q, NoiseClass::Exact);
    return plan;
}

/// Uniformly chosen subset of `round(fraction * candidates)` indices, sorted.
template <class Rng>
std::vector<Index> choose_subset(std::vector<Index> candidates, double fraction, Rng &rng) {
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(candidates.size())));
    std::shuffle(candidates.begin(), candidates.end(), rng);
    candidates.resize(std::min(k, candidates.size()));
    std::sort(candidates.begin(), candidates.end());
    return candidates;
}

inline std::vector<Index> nonslack_buses(const Network &net) {
    std::vector<Index> out;
    for (Index b = 1; b < net.bus_count(); ++b)
        out.push_back(b);
    return out;
}

template <class Rng>
ObservationPlan random_sampling_plan(const Network &net, const MatrixLayout &layout, double fraction, Rng &rng) {
    check_fraction(fraction, "sampling fraction");
    auto plan = slack_plan(net, layout);
    const auto owned = net.owned_branch();
    for (Index b : choose_subset(nonslack_buses(net), fraction, rng))
        for (const auto &q : potentially_known_at(net, layout, b, owned))
            plan_add(plan, q, NoiseClass::Measurement);
    return plan;
}

template <class Rng>
ObservationPlan data_driven_plan(const Network &net, const MatrixLayout &layout, const DataDriven &dd, Rng &rng) {
    using K = QuantityKind;
    auto plan = slack_plan(net, layout);
    auto add_category = [&](BusCategory cat, DataClass cls, double coverage, std::initializer_list<K> kinds) {
        std::vector<Index> buses;
        for (Index b = 1; b < net.bus_count(); ++b)
            if (net.buses[b].category == cat)
                buses.push_back(b);
        // The subset is drawn even for class 0 so that the random stream does
        // not depend on which categories are measured.
        const auto chosen = choose_subset(buses, coverage, rng);
        if (cls == DataClass::None)
            return;
        const auto noise = cls == DataClass::Measured ? NoiseClass::Measurement : NoiseClass::Pseudo;
        for (Index b : chosen)
            for (auto k : kinds)
                if (layout.contains({k, b}))
                    plan_add(plan, {k, b}, noise);
    };
    add_category(BusCategory::Solar, dd.solar, dd.solar_coverage, {K::ReS, K::ImS, K::AbsV});
    add_category(BusCategory::LargeLoad, dd.large_load, dd.large_coverage, {K::ReS});
    add_category(BusCategory::SmallLoad, dd.small_load, dd.small_coverage, {K::ReS});
    return plan;
}

/// AMI sensors add pseudo Re s / Im s; magnitude sensors add measured |v|.
inline void add_sensor(ObservationPlan &plan, const MatrixLayout &layout, const SensorAddition &s) {
    using K = QuantityKind;
    if (s.type == SensorType::Ami) {
        for (auto k : {K::ReS, K::ImS})
            if (layout.contains({k, s.bus}))
                plan_add(plan, {k, s.bus}, NoiseClass::Pseudo);
    } else if (layout.contains({K::AbsV, s.bus})) {
        plan_add(plan, {K::AbsV, s.bus}, NoiseClass::Measurement);
    }
}

/// Removes round(fraction * n) of the non-exact entries.
template <class Rng>
ObservationPlan drop_from_plan(const ObservationPlan &plan, double fraction, Rng &rng) {
    check_fraction(fraction, "loss fraction");
    std::vector<Index> removable;
    std::vector<Quantity> keys;
    for (const auto &[q, c] : plan) {
        if (c != NoiseClass::Exact)
            removable.push_back(static_cast<Index>(keys.size()));
        keys.push_back(q);
    }
    const auto dropped = choose_subset(removable, fraction, rng);
    ObservationPlan out = plan;
    for (Index k : dropped)
        out.erase(keys[k]);
    return out;
}

struct Observation {
    Quantity quantity;
    double value = 0.0;
    NoiseClass noise = NoiseClass::Exact;
};

/// Observed data matrix: noisy values on the mask, zero elsewhere.
struct ObservedMatrix {
    MatrixLayout layout;
    Mat values;
    std::vector<Observation> observations;  // one per physical quantity, sorted
    std::vector<std::int8_t> cell_noise;    // per linear cell, -1 when unobserved
    double measurement_sigma = 0.01;
    double pseudo_sigma = 0.10;

    bool is_observed(Cell c) const { return cell_noise[layout.linear(c)] >= 0; }

    std::vector<Cell> mask() const {
        std::vector<Cell> out;
        for (Index r = 0; r < layout.rows(); ++r)
            for (Index c = 0; c < layout.cols(); ++c)
                if (is_observed({r, c}))
                    out.push_back({r, c});
        return out;
    }

    Index mask_size() const {
        return static_cast<Index>(std::count_if(cell_noise.begin(), cell_noise.end(), [](auto v) { return v >= 0; }));
    }

    double sigma(NoiseClass c) const {
        return c == NoiseClass::Exact ? 0.0 : c == NoiseClass::Measurement ? measurement_sigma : pseudo_sigma;
    }
};

/// Assembles the observed matrix from already-noisy observations.
inline ObservedMatrix make_observed(const MatrixLayout &layout, std::vector<Observation> obs, double meas_sigma,
                                    double pseudo_sigma) {
    ObservedMatrix out;
    out.layout = layout;
    out.values = Mat::Zero(layout.rows(), layout.cols());
    out.cell_noise.assign(static_cast<std::size_t>(layout.size()), -1);
    out.measurement_sigma = meas_sigma;
    out.pseudo_sigma = pseudo_sigma;
    std::sort(obs.begin(), obs.end(), [](const auto &a, const auto &b) { return a.quantity < b.quantity; });
    for (const auto &o : obs) {
        for (const auto &c : layout.cells_of(o.quantity)) {
            out.values(c.row, c.col) = o.value;
            out.cell_noise[layout.linear(c)] = static_cast<std::int8_t>(o.noise);
        }
    }
    out.observations = std::move(obs);
    return out;
}

/// Draws multiplicative Gaussian noise, value * (1 + eps), once per planned
/// quantity in plan order; duplicated cells share the draw.
template <class Rng>
ObservedMatrix apply_observation_plan(const DataMatrix &m, const ObservationPlan &plan, double meas_sigma,
                                      double pseudo_sigma, Rng &rng) {
    for (const auto &[q, c] : plan)
        if (is_phasor_kind(q.kind) && q.location != 0)
            throw Error("non-slack voltage phasors can never be observed");
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<Observation> obs;
    obs.reserve(plan.size());
    for (const auto &[q, c] : plan) {
        const auto &cell = m.layout.canonical_cell(q);
        const double truth = m.values(cell.row, cell.col);
        double value = truth;
        if (c != NoiseClass::Exact) {
            const double sigma = c == NoiseClass::Measurement ? meas_sigma : pseudo_sigma;
            value = truth * (1.0 + sigma * unit(rng));
        }
        obs.push_back({q, value, c});
    }
    return make_observed(m.layout, std::move(obs), meas_sigma, pseudo_sigma);
}

/// Drops a random share of the non-exact observations, keeping noise values.
template <class Rng>
ObservedMatrix drop_observations(const ObservedMatrix &om, double fraction, Rng &rng) {
    ObservationPlan plan;
    for (const auto &o : om.observations)
        plan.emplace(o.quantity, o.noise);
    const auto kept = drop_from_plan(plan, fraction, rng);
    std::vector<Observation> obs;
    for (const auto &o : om.observations)
        if (kept.count(o.quantity))
            obs.push_back(o);
    return make_observed(om.layout, std::move(obs), om.measurement_sigma, om.pseudo_sigma);
}

template <class Rng>
ObservationPlan plan_for(const Network &net, const MatrixLayout &layout, const Scenario &sc, Rng &rng) {
    validate(sc);
    return std::visit(
        [&](const auto &k) -> ObservationPlan {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, RandomBusSampling>) {
                return random_sampling_plan(net, layout, k.fraction, rng);
            } else if constexpr (std::is_same_v<T, DataDriven>) {
                return data_driven_plan(net, layout, k, rng);
            } else if constexpr (std::is_same_v<T, FullObservabilityAugmented>) {
                auto plan = data_driven_plan(net, layout, k.base, rng);
                for (const auto &s : k.added)
                    add_sensor(plan, layout, s);
                return plan;
            } else {
                return random_sampling_plan(net, layout, k.availability, rng);
            }
        },
        sc.kind);
}

/// Scenario -> observed matrix. Time-series scenarios sample the placement,
/// draw noise, then drop `loss` of the available measurements.
template <class Rng>
ObservedMatrix apply_observation_model(const Network &net, const DataMatrix &m, const Scenario &sc, Rng &rng) {
    const auto plan = plan_for(net, m.layout, sc, rng);
    auto observed = apply_observation_plan(m, plan, sc.measurement_sigma, sc.pseudo_sigma, rng);
    if (const auto *ts = std::get_if<TimeSeries>(&sc.kind); ts && ts->loss > 0)
        return drop_observations(observed, ts->loss, rng);
    return observed;
}

/// Share of potentially-known quantities that carry a (pseudo)measurement.
inline double measured_share(const Network &net, const ObservedMatrix &om) {
    const auto candidates = potentially_known(net, om.layout);
    if (candidates.empty())
        return 0.0;
    std::size_t measured = 0;
    for (const auto &o : om.observations)
        if (o.noise != NoiseClass::Exact && std::binary_search(candidates.begin(), candidates.end(), o.quantity))
            ++measured;
    return static_cast<double>(measured) / static_cast<double>(candidates.size());
}

// ---------------------------------------------------------------------------
// Singular-value profile

/// Cumulative share of the singular-value sum, sigma_1 >= sigma_2 >= ...
inline Vec singular_value_profile(const Mat &m) {
    if (m.size() == 0)
        throw Error("singular_value_profile: empty matrix");
    const Vec sv = Eigen::JacobiSVD<Mat>(m).singularValues();
    const double total = sv.sum();
    if (!(total > 0))
        throw Error("singular_value_profile: all-zero matrix");
    Vec cum(sv.size());
    double acc = 0.0;
    for (Index k = 0; k < sv.size(); ++k) {
        acc += sv(k);
        cum(k) = acc / total;
    }
    cum(sv.size() - 1) = 1.0;
    return cum;
}

// ---------------------------------------------------------------------------
// CSV serialization

inline void write_matrix_csv(std::ostream &out, const Mat &m, const MatrixLayout &layout) {
    for (Index c = 0; c < layout.cols(); ++c)
        out << (c ? "," : "") << layout.columns()[c].name();
    out << "\n";
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c)
            out << (c ? "," : "") << text::format_double(m(r, c));
        out << "\n";
    }
}

/// One "row,col,noise_class" line per observed cell (0-based indices).
inline void write_mask_csv(std::ostream &out, const ObservedMatrix &om) {
    out << "row,col,noise_class\n";
    for (const auto &c : om.mask())
        out << c.row << "," << c.col << "," << to_string(static_cast<NoiseClass>(om.cell_noise[om.layout.linear(c)]))
            << "\n";
}

} // namespace mcse
