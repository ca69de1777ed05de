#pragma once

#include <random>
#include <string>

#include <mcse/mcse.hpp>

namespace mcse::testing {

inline std::string data_path(const std::string &name) { return std::string(MCSE_DATA_DIR) + "/" + name; }

inline const Network &calibrated() {
    static const Network net = load_case(data_path("case33_calibrated.case"));
    return net;
}

inline const Network &baran_wu() {
    static const Network net = load_case(data_path("case33bw.case"));
    return net;
}

inline const Experiment &calibrated_experiment() {
    static const Experiment ex = make_experiment(calibrated());
    return ex;
}

/// Small networks written inline.
inline Network two_bus(double r = 0.01, double x = 0.02, double p_kw = 100, double q_kvar = 50) {
    return parse_case("name = two\nbase_mva = 1\nbase_kv = 1\n[bus]\n1 0 0\n2 " + text::format_double(p_kw) + " " +
                      text::format_double(q_kvar) + "\n[branch]\n1 2 " + text::format_double(r) + " " +
                      text::format_double(x) + "\n");
}

inline Network three_bus_chain() {
    return parse_case("name = chain\nbase_mva = 1\nbase_kv = 1\n[bus]\n1 0 0\n2 80 30\n3 60 20\n"
                      "[branch]\n1 2 0.01 0.02\n2 3 0.02 0.03\n");
}

} // namespace mcse::testing
