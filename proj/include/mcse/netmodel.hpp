#pragma once

// Single-phase balanced radial distribution networks: case parsing,
// per-unit conversion and the slack-partitioned nodal admittance matrix.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "common.hpp"
#include "keyvalue.hpp"

namespace mcse {

enum class BusCategory { Slack, Solar, LargeLoad, SmallLoad };

inline const char *to_string(BusCategory c) {
    switch (c) {
    case BusCategory::Slack: return "slack";
    case BusCategory::Solar: return "solar";
    case BusCategory::LargeLoad: return "large_load";
    case BusCategory::SmallLoad: return "small_load";
    }
    return "?";
}

struct Bus {
    int id = 0;               // external id as written in the case file
    Complex load{};           // p.u.
    Complex generation{};     // p.u.
    Complex shunt{};          // p.u. admittance at 1 p.u. voltage
    BusCategory category = BusCategory::SmallLoad;

    Complex injection() const { return generation - load; }
};

/// Line between two buses. `from`/`to` are internal bus indices.
struct Branch {
    Index from = 0;
    Index to = 0;
    Complex series_admittance{};  // p.u.
    Complex total_shunt{};        // p.u., split half per end
};

/// Immutable after construction. Internal bus index 0 is always the slack bus.
struct Network {
    std::string name;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    double base_mva = 1.0;
    double base_kv = 1.0;
    Complex slack_voltage{1.0, 0.0};
    int large_load_count = 6;

    Index bus_count() const { return static_cast<Index>(buses.size()); }
    Index branch_count() const { return static_cast<Index>(branches.size()); }
    double base_impedance() const { return base_kv * base_kv / base_mva; }

    Index index_of(int id) const {
        for (std::size_t k = 0; k < buses.size(); ++k)
            if (buses[k].id == id)
                return static_cast<Index>(k);
        throw ValidationError("unknown bus id " + std::to_string(id));
    }

    /// Non-slack net injections in internal order (length |B|-1).
    CVec nonslack_injections() const {
        CVec s(bus_count() - 1);
        for (Index b = 1; b < bus_count(); ++b)
            s(b - 1) = buses[b].injection();
        return s;
    }

    bool is_radial() const { return branch_count() == bus_count() - 1; }

    /// For every branch, the bus that "owns" its current for sampling purposes:
    /// the end farther from the slack along a breadth-first spanning tree.
    /// Branches that close a loop are owned by their `to` end.
    std::vector<Index> branch_owner() const {
        const Index n = bus_count();
        std::vector<std::vector<std::pair<Index, Index>>> adj(n);
        for (Index k = 0; k < branch_count(); ++k) {
            adj[branches[k].from].push_back({branches[k].to, k});
            adj[branches[k].to].push_back({branches[k].from, k});
        }
        std::vector<Index> owner(branch_count(), -1);
        std::vector<bool> seen(n, false);
        std::queue<Index> q;
        q.push(0);
        seen[0] = true;
        while (!q.empty()) {
            const Index b = q.front();
            q.pop();
            for (auto [nb, k] : adj[b]) {
                if (seen[nb])
                    continue;
                seen[nb] = true;
                owner[k] = nb;
                q.push(nb);
            }
        }
        for (Index k = 0; k < branch_count(); ++k)
            if (owner[k] < 0)
                owner[k] = branches[k].to;
        return owner;
    }

    /// Branch owned by each bus (-1 for the slack and for buses owning none).
    std::vector<Index> owned_branch() const {
        std::vector<Index> out(bus_count(), -1);
        const auto owner = branch_owner();
        for (Index k = 0; k < branch_count(); ++k)
            if (out[owner[k]] < 0)
                out[owner[k]] = k;
        return out;
    }
};

// ---------------------------------------------------------------------------
// Validation and classification

inline bool is_connected(const Network &net) {
    const Index n = net.bus_count();
    if (n == 0)
        return false;
    std::vector<std::vector<Index>> adj(n);
    for (const auto &br : net.branches) {
        adj[br.from].push_back(br.to);
        adj[br.to].push_back(br.from);
    }
    std::vector<bool> seen(n, false);
    std::vector<Index> stack{0};
    seen[0] = true;
    Index count = 1;
    while (!stack.empty()) {
        const Index b = stack.back();
        stack.pop_back();
        for (Index nb : adj[b])
            if (!seen[nb]) {
                seen[nb] = true;
                ++count;
                stack.push_back(nb);
            }
    }
    return count == n;
}

inline void validate(const Network &net) {
    if (net.bus_count() < 2)
        throw ValidationError("network needs at least two buses");
    if (!(net.base_mva > 0) || !(net.base_kv > 0))
        throw ValidationError("base_mva and base_kv must be positive");
    int slack = 0;
    for (const auto &b : net.buses)
        slack += b.category == BusCategory::Slack;
    if (slack != 1 || net.buses.front().category != BusCategory::Slack)
        throw ValidationError("exactly one slack bus is required and it must be first internally");
    std::set<std::pair<Index, Index>> seen;
    for (const auto &br : net.branches) {
        if (br.from == br.to)
            throw ValidationError("branch connects a bus to itself");
        if (br.from < 0 || br.to < 0 || br.from >= net.bus_count() || br.to >= net.bus_count())
            throw ValidationError("branch references an unknown bus");
        const auto key = std::minmax(br.from, br.to);
        if (!seen.insert(key).second)
            throw ValidationError("duplicate branch");
        if (std::abs(br.series_admittance) == 0.0)
            throw ValidationError("branch with zero series admittance");
        const Complex z = 1.0 / br.series_admittance;
        if (z.real() < 0)
            throw ValidationError("branch with negative resistance");
    }
    if (!is_connected(net))
        throw ValidationError("network graph is disconnected");
}

/// Slack first; buses with generation are Solar; the `large_load_count`
/// largest remaining loads by apparent power are LargeLoad (ties: lower id).
inline void classify_buses(Network &net) {
    std::vector<Index> loads;
    for (Index b = 1; b < net.bus_count(); ++b) {
        auto &bus = net.buses[b];
        if (std::abs(bus.generation) > 0) {
            bus.category = BusCategory::Solar;
        } else {
            bus.category = BusCategory::SmallLoad;
            loads.push_back(b);
        }
    }
    net.buses.front().category = BusCategory::Slack;
    std::stable_sort(loads.begin(), loads.end(), [&](Index a, Index b) {
        const double sa = std::abs(net.buses[a].load), sb = std::abs(net.buses[b].load);
        if (sa != sb)
            return sa > sb;
        return net.buses[a].id < net.buses[b].id;
    });
    const auto large = std::min<std::size_t>(loads.size(), std::max(0, net.large_load_count));
    for (std::size_t k = 0; k < large; ++k)
        net.buses[loads[k]].category = BusCategory::LargeLoad;
}

namespace detail {

struct RawBus {
    int id;
    Complex load, generation, shunt;
    int line;
};

struct RawBranch {
    int from, to;
    Complex admittance, shunt;
    int line;
};

inline Network assemble_network(std::string name, double base_mva, double base_kv, Complex v1,
                                int slack_id, int large_count, std::vector<RawBus> raw_buses,
                                const std::vector<RawBranch> &raw_branches) {
    Network net;
    net.name = std::move(name);
    net.base_mva = base_mva;
    net.base_kv = base_kv;
    net.slack_voltage = v1;
    net.large_load_count = large_count;

    std::set<int> ids;
    for (const auto &rb : raw_buses)
        if (!ids.insert(rb.id).second)
            throw ParseError("duplicate bus id " + std::to_string(rb.id), rb.line, "id");

    auto slack_it = std::find_if(raw_buses.begin(), raw_buses.end(),
                                 [&](const RawBus &b) { return b.id == slack_id; });
    if (slack_it == raw_buses.end())
        throw ValidationError("slack bus " + std::to_string(slack_id) + " is not defined");
    std::rotate(raw_buses.begin(), slack_it, slack_it + 1);

    std::map<int, Index> index;
    for (const auto &rb : raw_buses) {
        index[rb.id] = net.bus_count();
        net.buses.push_back({rb.id, rb.load, rb.generation, rb.shunt, BusCategory::SmallLoad});
    }
    net.buses.front().category = BusCategory::Slack;

    std::set<std::pair<int, int>> seen;
    for (const auto &rb : raw_branches) {
        if (rb.from == rb.to)
            throw ParseError("branch connects bus " + std::to_string(rb.from) + " to itself", rb.line, "to");
        if (!index.count(rb.from))
            throw ParseError("unknown bus " + std::to_string(rb.from), rb.line, "from");
        if (!index.count(rb.to))
            throw ParseError("unknown bus " + std::to_string(rb.to), rb.line, "to");
        if (!seen.insert(std::minmax(rb.from, rb.to)).second)
            throw ParseError("duplicate branch (" + std::to_string(rb.from) + ", " + std::to_string(rb.to) + ")",
                             rb.line, "from");
        net.branches.push_back({index[rb.from], index[rb.to], rb.admittance, rb.shunt});
    }
    classify_buses(net);
    validate(net);
    return net;
}

inline Complex impedance_to_admittance(double r, double x, int line) {
    const Complex z{r, x};
    if (std::abs(z) == 0.0)
        throw ParseError("zero series impedance", line, "r");
    return 1.0 / z;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Native case format

/// Parses the native case document (see docs/case-format.md).
inline Network parse_case(std::string_view document) {
    const auto doc = KeyValueDocument::parse(document);
    const double base_mva = doc.get_double("base_mva");
    const double base_kv = doc.get_double("base_kv");
    if (!(base_mva > 0))
        throw ParseError("must be positive", doc.line_of("base_mva"), "base_mva");
    if (!(base_kv > 0))
        throw ParseError("must be positive", doc.line_of("base_kv"), "base_kv");

    Complex v1{1.0, 0.0};
    if (doc.has("slack_voltage")) {
        const auto parts = text::split_ws(doc.get("slack_voltage"));
        const int line = doc.line_of("slack_voltage");
        if (parts.empty() || parts.size() > 2)
            throw ParseError("expected '<magnitude> [angle_deg]'", line, "slack_voltage");
        const double mag = text::parse_double(parts[0], line, "slack_voltage");
        const double ang = parts.size() > 1 ? text::parse_double(parts[1], line, "slack_voltage") : 0.0;
        v1 = std::polar(mag, to_radians(ang));
    }
    const int slack_id = static_cast<int>(doc.get_integer_or("slack_bus", 1));
    const int large_count = static_cast<int>(doc.get_integer_or("large_load_count", 6));

    const double kw_per_pu = base_mva * 1000.0;
    std::vector<detail::RawBus> buses;
    if (!doc.has_table("bus"))
        throw ParseError("missing [bus] section", 0, "bus");
    for (const auto &row : doc.table("bus")) {
        static const char *names[] = {"id", "load_kw", "load_kvar", "gen_kw", "gen_kvar", "shunt_kw", "shunt_kvar"};
        if (row.fields.size() < 3 || row.fields.size() > 7)
            throw ParseError("bus row needs 3 to 7 fields", row.line);
        double v[7] = {0, 0, 0, 0, 0, 0, 0};
        const auto id = text::parse_integer(row.fields[0], row.line, names[0]);
        for (std::size_t k = 1; k < row.fields.size(); ++k)
            v[k] = text::parse_double(row.fields[k], row.line, names[k]);
        buses.push_back({static_cast<int>(id), Complex{v[1], v[2]} / kw_per_pu, Complex{v[3], v[4]} / kw_per_pu,
                         Complex{v[5], v[6]} / kw_per_pu, row.line});
    }

    const double zbase = base_kv * base_kv / base_mva;
    std::vector<detail::RawBranch> branches;
    for (const auto &row : doc.table("branch")) {
        static const char *names[] = {"from", "to", "r_ohm", "x_ohm", "shunt_g_pu", "shunt_b_pu"};
        if (row.fields.size() < 4 || row.fields.size() > 6)
            throw ParseError("branch row needs 4 to 6 fields", row.line);
        const auto f = text::parse_integer(row.fields[0], row.line, names[0]);
        const auto t = text::parse_integer(row.fields[1], row.line, names[1]);
        double v[6] = {0, 0, 0, 0, 0, 0};
        for (std::size_t k = 2; k < row.fields.size(); ++k)
            v[k] = text::parse_double(row.fields[k], row.line, names[k]);
        if (v[2] < 0)
            throw ParseError("negative resistance", row.line, "r_ohm");
        branches.push_back({static_cast<int>(f), static_cast<int>(t),
                            detail::impedance_to_admittance(v[2] / zbase, v[3] / zbase, row.line),
                            Complex{v[4], v[5]}, row.line});
    }

    return detail::assemble_network(doc.get_or("name", "case"), base_mva, base_kv, v1, slack_id, large_count,
                                    std::move(buses), branches);
}

/// Writes a network back into the native case format. Numbers are printed
/// with shortest round-trip precision.
inline std::string write_case(const Network &net) {
    using text::format_double;
    std::ostringstream out;
    const double kw_per_pu = net.base_mva * 1000.0;
    const double zbase = net.base_impedance();
    out << "name = " << net.name << "\n";
    out << "base_mva = " << format_double(net.base_mva) << "\n";
    out << "base_kv = " << format_double(net.base_kv) << "\n";
    out << "slack_bus = " << net.buses.front().id << "\n";
    out << "slack_voltage = " << format_double(std::abs(net.slack_voltage)) << " "
        << format_double(to_degrees(std::arg(net.slack_voltage))) << "\n";
    out << "large_load_count = " << net.large_load_count << "\n\n";
    out << "[bus]\n# id load_kw load_kvar gen_kw gen_kvar shunt_kw shunt_kvar\n";
    for (const auto &b : net.buses) {
        const Complex load = b.load * kw_per_pu, gen = b.generation * kw_per_pu, sh = b.shunt * kw_per_pu;
        out << b.id << " " << format_double(load.real()) << " " << format_double(load.imag()) << " "
            << format_double(gen.real()) << " " << format_double(gen.imag()) << " " << format_double(sh.real())
            << " " << format_double(sh.imag()) << "\n";
    }
    out << "\n[branch]\n# from to r_ohm x_ohm shunt_g_pu shunt_b_pu\n";
    for (const auto &br : net.branches) {
        const Complex z = zbase / br.series_admittance;
        out << net.buses[br.from].id << " " << net.buses[br.to].id << " " << format_double(z.real()) << " "
            << format_double(z.imag()) << " " << format_double(br.total_shunt.real()) << " "
            << format_double(br.total_shunt.imag()) << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// MATPOWER-style importer

namespace detail {

/// Extracts the numeric rows of `mpc.<name> = [ ... ];`.
inline std::vector<TableRow> matpower_matrix(std::string_view doc, const std::string &name, bool required) {
    const std::string key = "mpc." + name;
    std::size_t pos = 0;
    while ((pos = doc.find(key, pos)) != std::string_view::npos) {
        const auto after = pos + key.size();
        const auto rest = text::trim(doc.substr(after, doc.find('\n', after) - after));
        if (!rest.empty() && rest.front() == '=')
            break;
        pos = after;
    }
    if (pos == std::string_view::npos) {
        if (required)
            throw ParseError("missing mpc." + name + " table", 0, name);
        return {};
    }
    const auto open = doc.find('[', pos);
    const auto close = doc.find(']', open);
    if (open == std::string_view::npos || close == std::string_view::npos)
        throw ParseError("unterminated mpc." + name + " table", 0, name);

    int line = 1 + static_cast<int>(std::count(doc.begin(), doc.begin() + static_cast<long>(open), '\n'));
    std::vector<TableRow> rows;
    std::string current;
    int row_line = line;
    auto flush = [&] {
        auto body = current;
        if (auto pct = body.find('%'); pct != std::string::npos)
            body.resize(pct);
        auto fields = text::split_ws(body);
        if (!fields.empty())
            rows.push_back({row_line, std::move(fields)});
        current.clear();
    };
    bool in_comment = false;
    for (auto k = open + 1; k < close; ++k) {
        const char c = doc[k];
        if (c == '\n') {
            in_comment = false;
            flush();
            row_line = ++line;
        } else if (c == '%') {
            in_comment = true;
        } else if (in_comment) {
            continue;
        } else if (c == ';') {
            flush();
            row_line = line;
        } else {
            current += (c == ',' || c == '\t') ? ' ' : c;
        }
    }
    flush();
    return rows;
}

inline std::optional<double> matpower_scalar(std::string_view doc, const std::string &name) {
    const std::string key = "mpc." + name;
    const auto pos = doc.find(key);
    if (pos == std::string_view::npos)
        return std::nullopt;
    const auto eq = doc.find('=', pos);
    const auto semi = doc.find_first_of(";\n", eq);
    return text::to_double(doc.substr(eq + 1, semi - eq - 1));
}

} // namespace detail

/// Reads mpc.baseMVA, mpc.bus, mpc.branch and (optionally) mpc.gen from a
/// MATPOWER-style case. Branch impedances are taken as per-unit.
inline Network parse_matpower(std::string_view document) {
    const double base_mva = detail::matpower_scalar(document, "baseMVA").value_or(100.0);
    const auto bus_rows = detail::matpower_matrix(document, "bus", true);
    const auto branch_rows = detail::matpower_matrix(document, "branch", true);
    const auto gen_rows = detail::matpower_matrix(document, "gen", false);

    std::vector<detail::RawBus> buses;
    int slack_id = 0;
    double base_kv = 0.0;
    Complex v1{1.0, 0.0};
    for (const auto &row : bus_rows) {
        if (row.fields.size() < 6)
            throw ParseError("mpc.bus row needs at least 6 columns", row.line);
        const auto id = static_cast<int>(text::parse_integer(row.fields[0], row.line, "bus_i"));
        const auto type = text::parse_integer(row.fields[1], row.line, "type");
        const double pd = text::parse_double(row.fields[2], row.line, "Pd");
        const double qd = text::parse_double(row.fields[3], row.line, "Qd");
        const double gs = text::parse_double(row.fields[4], row.line, "Gs");
        const double bs = text::parse_double(row.fields[5], row.line, "Bs");
        if (type == 3) {
            if (slack_id != 0)
                throw ParseError("more than one slack (type 3) bus", row.line, "type");
            slack_id = id;
            if (row.fields.size() > 8) {
                const double vm = text::parse_double(row.fields[7], row.line, "Vm");
                const double va = text::parse_double(row.fields[8], row.line, "Va");
                v1 = std::polar(vm, to_radians(va));
            }
            if (row.fields.size() > 9)
                base_kv = text::parse_double(row.fields[9], row.line, "baseKV");
        }
        buses.push_back({id, Complex{pd, qd} / base_mva, {}, Complex{gs, bs} / base_mva, row.line});
    }
    if (slack_id == 0)
        throw ParseError("no slack (type 3) bus in mpc.bus", 0, "type");

    for (const auto &row : gen_rows) {
        if (row.fields.size() < 3)
            throw ParseError("mpc.gen row needs at least 3 columns", row.line);
        if (row.fields.size() > 7 && text::parse_double(row.fields[7], row.line, "status") == 0)
            continue;
        const auto id = static_cast<int>(text::parse_integer(row.fields[0], row.line, "bus"));
        auto it = std::find_if(buses.begin(), buses.end(), [&](const auto &b) { return b.id == id; });
        if (it == buses.end())
            throw ParseError("generator at unknown bus " + std::to_string(id), row.line, "bus");
        if (id == slack_id) {
            if (row.fields.size() > 5)
                v1 = std::polar(text::parse_double(row.fields[5], row.line, "Vg"), std::arg(v1));
            continue;
        }
        it->generation += Complex{text::parse_double(row.fields[1], row.line, "Pg"),
                                  text::parse_double(row.fields[2], row.line, "Qg")} /
                          base_mva;
    }

    std::vector<detail::RawBranch> branches;
    for (const auto &row : branch_rows) {
        if (row.fields.size() < 4)
            throw ParseError("mpc.branch row needs at least 4 columns", row.line);
        if (row.fields.size() > 10 && text::parse_double(row.fields[10], row.line, "status") == 0)
            continue;
        const double r = text::parse_double(row.fields[2], row.line, "r");
        const double x = text::parse_double(row.fields[3], row.line, "x");
        const double b = row.fields.size() > 4 ? text::parse_double(row.fields[4], row.line, "b") : 0.0;
        if (r < 0)
            throw ParseError("negative resistance", row.line, "r");
        branches.push_back({static_cast<int>(text::parse_integer(row.fields[0], row.line, "fbus")),
                            static_cast<int>(text::parse_integer(row.fields[1], row.line, "tbus")),
                            detail::impedance_to_admittance(r, x, row.line), Complex{0.0, b}, row.line});
    }
    return detail::assemble_network("matpower", base_mva, base_kv > 0 ? base_kv : 1.0, v1, slack_id, 6,
                                    std::move(buses), branches);
}

inline std::string read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Dispatches on content: documents mentioning `mpc.` go to the MATPOWER importer.
inline Network load_case(const std::string &path) {
    const auto doc = read_file(path);
    if (doc.find("mpc.bus") != std::string::npos)
        return parse_matpower(doc);
    return parse_case(doc);
}

// ---------------------------------------------------------------------------
// Calibration

/// Load scaling, fixed PV injections and an optional new power base,
/// applied on top of a base case.
struct Calibration {
    double load_scale = 1.0;
    std::map<int, Complex> pv_kw;  // bus id -> generation (kW + j kvar)
    std::optional<double> base_mva;
};

/// Re-expresses every per-unit quantity on a new power base.
inline Network rebase(Network net, double base_mva) {
    if (!(base_mva > 0))
        throw ValidationError("base_mva must be positive");
    const double k = net.base_mva / base_mva;
    for (auto &b : net.buses) {
        b.load *= k;
        b.generation *= k;
        b.shunt *= k;
    }
    // Z_base scales with 1/base_mva, so per-unit admittances scale with k.
    for (auto &br : net.branches) {
        br.series_admittance *= k;
        br.total_shunt *= k;
    }
    net.base_mva = base_mva;
    return net;
}

inline Calibration parse_calibration(std::string_view document) {
    const auto doc = KeyValueDocument::parse(document);
    Calibration cal;
    cal.load_scale = doc.get_double_or("load_scale", 1.0);
    if (!(cal.load_scale >= 0))
        throw ParseError("must be nonnegative", doc.line_of("load_scale"), "load_scale");
    if (doc.has("base_mva")) {
        cal.base_mva = doc.get_double("base_mva");
        if (!(*cal.base_mva > 0))
            throw ParseError("must be positive", doc.line_of("base_mva"), "base_mva");
    }
    for (const auto &row : doc.table("pv")) {
        if (row.fields.size() < 2 || row.fields.size() > 3)
            throw ParseError("pv row needs: bus kw [kvar]", row.line);
        const auto id = static_cast<int>(text::parse_integer(row.fields[0], row.line, "bus"));
        const double kw = text::parse_double(row.fields[1], row.line, "kw");
        const double kvar = row.fields.size() > 2 ? text::parse_double(row.fields[2], row.line, "kvar") : 0.0;
        cal.pv_kw[id] = {kw, kvar};
    }
    return cal;
}

inline Network apply_calibration(Network net, const Calibration &cal) {
    if (cal.base_mva)
        net = rebase(std::move(net), *cal.base_mva);
    const double kw_per_pu = net.base_mva * 1000.0;
    for (auto &b : net.buses)
        b.load *= cal.load_scale;
    for (const auto &[id, s] : cal.pv_kw)
        net.buses[net.index_of(id)].generation = s / kw_per_pu;
    classify_buses(net);
    validate(net);
    return net;
}

// ---------------------------------------------------------------------------
// Admittance matrix

/// Direct Y-bus assembly in internal bus order.
inline CMat assemble_ybus(const Network &net) {
    const Index n = net.bus_count();
    CMat y = CMat::Zero(n, n);
    for (const auto &br : net.branches) {
        const Complex ys = br.series_admittance, half = br.total_shunt / 2.0;
        y(br.from, br.from) += ys + half;
        y(br.to, br.to) += ys + half;
        y(br.from, br.to) -= ys;
        y(br.to, br.from) -= ys;
    }
    for (Index b = 0; b < n; ++b)
        y(b, b) += net.buses[b].shunt;
    return y;
}

/// Y partitioned around the slack bus. Holds the factorization of Y_LL.
class AdmittanceBlocks {
public:
    explicit AdmittanceBlocks(const CMat &y) {
        const Index n = y.rows();
        if (n < 2 || y.cols() != n)
            throw DimensionError("admittance matrix must be square with at least two buses");
        y11_ = y(0, 0);
        y1l_ = y.block(0, 1, 1, n - 1).transpose();
        yl1_ = y.block(1, 0, n - 1, 1);
        yll_ = y.block(1, 1, n - 1, n - 1);
        lu_.compute(yll_);
        if (!(lu_.rcond() > 1e-13))
            throw SingularMatrixError("Y_LL is singular (network electrically degenerate)");
    }

    Complex y11() const { return y11_; }
    /// Row block Y_1L stored as a column vector.
    const CVec &y1l() const { return y1l_; }
    const CVec &yl1() const { return yl1_; }
    const CMat &yll() const { return yll_; }
    Index size() const { return yll_.rows() + 1; }

    CMat full() const {
        const Index n = size();
        CMat y(n, n);
        y(0, 0) = y11_;
        y.block(0, 1, 1, n - 1) = y1l_.transpose();
        y.block(1, 0, n - 1, 1) = yl1_;
        y.block(1, 1, n - 1, n - 1) = yll_;
        return y;
    }

    /// Solves Y_LL x = rhs through the stored LU factors.
    template <class Rhs>
    auto solve_yll(const Rhs &rhs) const {
        return lu_.solve(rhs);
    }

private:
    Complex y11_{};
    CVec y1l_, yl1_;
    CMat yll_;
    Eigen::PartialPivLU<CMat> lu_;
};

inline AdmittanceBlocks build_admittance(const Network &net) { return AdmittanceBlocks(assemble_ybus(net)); }

} // namespace mcse
