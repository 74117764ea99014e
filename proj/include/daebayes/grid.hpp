#pragma once

// Network topology, nominal branch/generator data, and bus admittance
// assembly from series branch parameters.

#include "daebayes/types.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace daebayes {

/// Series branch between two buses (0-based indices in memory, 1-based in files).
struct Branch {
    Index from_bus = 0;
    Index to_bus = 0;
    double r = 0.0;           // pu
    double x = 0.0;           // pu
    double b_charging = 0.0;  // pu, total
    double tap = 1.0;
};

struct GeneratorSpec {
    Index bus = 0;
    double M_nom = 0.0;      // s
    double D_nom = 0.0;      // pu torque / pu speed
    double xd = 0.0;         // pu
    double xd_prime = 0.0;   // pu
    double Td0_prime = 0.0;  // s
    double T_ch = 0.0;       // s
    double R_d = 0.0;        // rad/s per pu
    double p_set = 0.0;      // scheduled active power (ignored at the slack)
    double v_set = 1.0;      // terminal voltage setpoint
};

struct BusPQ {
    double P = 0.0;
    double Q = 0.0;
};

struct BusShunt {
    double g_sh = 0.0;
    double b_sh = 0.0;
};

struct NetworkCase {
    std::string name;
    Index n_buses = 0;
    std::vector<Branch> branches;
    std::vector<GeneratorSpec> generators;  // generators[0] sits at the slack bus
    std::vector<BusPQ> loads;               // per bus
    std::vector<BusShunt> shunts;           // per bus
    double base_frequency = 60.0;           // Hz
    std::vector<Index> estimable_r;         // branch indices with r > 0
    std::vector<Index> estimable_x;         // branch indices with x > 0

    Index n_gen() const { return static_cast<Index>(generators.size()); }
    Index n_r() const { return static_cast<Index>(estimable_r.size()); }
    Index n_x() const { return static_cast<Index>(estimable_x.size()); }
    Index n_theta() const { return 2 * n_gen() + n_r() + n_x(); }
    double omega_s() const { return 2.0 * kPi * base_frequency; }
    Index slack_bus() const { return generators.front().bus; }

    /// Index of the generator attached to `bus`, or -1.
    Index generator_at(Index bus) const {
        for (Index g = 0; g < n_gen(); ++g) {
            if (generators[static_cast<std::size_t>(g)].bus == bus) return g;
        }
        return -1;
    }

    /// Rebuild estimable_r / estimable_x from the branch values and check
    /// every structural invariant. Throws InvalidInput.
    void finalize();
};

struct AdmittanceMatrix {
    Matrix G;
    Matrix B;
};

/// Series conductance/susceptance of a branch: g = r/(r²+x²), b = -x/(r²+x²).
inline std::pair<double, double> series_admittance(double r, double x) {
    const double z2 = r * r + x * x;
    if (!(z2 > 0.0)) throw InvalidInput("degenerate branch: r = x = 0");
    return {r / z2, -x / z2};
}

inline void NetworkCase::finalize() {
    if (n_buses < 1) throw InvalidInput("case has no buses");
    if (generators.empty()) throw InvalidInput("case needs at least one generator");
    if (static_cast<Index>(loads.size()) != n_buses) loads.resize(static_cast<std::size_t>(n_buses));
    if (static_cast<Index>(shunts.size()) != n_buses) shunts.resize(static_cast<std::size_t>(n_buses));

    estimable_r.clear();
    estimable_x.clear();
    for (std::size_t l = 0; l < branches.size(); ++l) {
        const Branch& br = branches[l];
        if (br.from_bus < 0 || br.from_bus >= n_buses || br.to_bus < 0 || br.to_bus >= n_buses)
            throw InvalidInput("branch " + std::to_string(l) + ": bus index out of range");
        if (br.from_bus == br.to_bus) throw InvalidInput("branch " + std::to_string(l) + ": self loop");
        if (!(br.x > 0.0)) throw InvalidInput("branch " + std::to_string(l) + ": x must be > 0");
        if (br.r < 0.0) throw InvalidInput("branch " + std::to_string(l) + ": r must be >= 0");
        if (br.b_charging < 0.0) throw InvalidInput("branch " + std::to_string(l) + ": b_charging < 0");
        if (br.tap != 1.0) throw InvalidInput("branch " + std::to_string(l) + ": off-nominal taps unsupported");
        if (br.r > 0.0) estimable_r.push_back(static_cast<Index>(l));
        estimable_x.push_back(static_cast<Index>(l));
    }

    std::vector<bool> has_gen(static_cast<std::size_t>(n_buses), false);
    for (const auto& g : generators) {
        if (g.bus < 0 || g.bus >= n_buses) throw InvalidInput("generator bus out of range");
        if (has_gen[static_cast<std::size_t>(g.bus)]) throw InvalidInput("two generators on one bus");
        has_gen[static_cast<std::size_t>(g.bus)] = true;
        if (!(g.M_nom > 0 && g.D_nom > 0 && g.xd > 0 && g.xd_prime > 0 && g.Td0_prime > 0 &&
              g.T_ch > 0 && g.R_d > 0 && g.v_set > 0))
            throw InvalidInput("generator parameters must be strictly positive");
        if (!(g.xd > g.xd_prime)) throw InvalidInput("generator needs xd > xd_prime");
    }

    // connectivity
    std::vector<std::vector<Index>> adj(static_cast<std::size_t>(n_buses));
    for (const auto& br : branches) {
        adj[static_cast<std::size_t>(br.from_bus)].push_back(br.to_bus);
        adj[static_cast<std::size_t>(br.to_bus)].push_back(br.from_bus);
    }
    std::vector<bool> seen(static_cast<std::size_t>(n_buses), false);
    std::queue<Index> q;
    q.push(0);
    seen[0] = true;
    Index count = 1;
    while (!q.empty()) {
        const Index u = q.front();
        q.pop();
        for (Index v : adj[static_cast<std::size_t>(u)]) {
            if (!seen[static_cast<std::size_t>(v)]) {
                seen[static_cast<std::size_t>(v)] = true;
                ++count;
                q.push(v);
            }
        }
    }
    if (count != n_buses) throw InvalidInput("network graph is not connected");
}

/// Y-bus from the case, with estimable branches overridden by theta_r/theta_x
/// (ordered as case.estimable_r / case.estimable_x).
inline AdmittanceMatrix assemble_ybus(const NetworkCase& c, const Vector& theta_r, const Vector& theta_x) {
    if (theta_r.size() != c.n_r() || theta_x.size() != c.n_x())
        throw InvalidInput("assemble_ybus: parameter dimension mismatch");
    for (Index k = 0; k < theta_r.size(); ++k)
        if (!(theta_r[k] > 0.0)) throw InvalidInput("assemble_ybus: nonpositive resistance");
    for (Index k = 0; k < theta_x.size(); ++k)
        if (!(theta_x[k] > 0.0)) throw InvalidInput("assemble_ybus: nonpositive reactance");

    std::vector<double> r(c.branches.size()), x(c.branches.size());
    for (std::size_t l = 0; l < c.branches.size(); ++l) {
        r[l] = c.branches[l].r;
        x[l] = c.branches[l].x;
    }
    for (Index k = 0; k < c.n_r(); ++k) r[static_cast<std::size_t>(c.estimable_r[static_cast<std::size_t>(k)])] = theta_r[k];
    for (Index k = 0; k < c.n_x(); ++k) x[static_cast<std::size_t>(c.estimable_x[static_cast<std::size_t>(k)])] = theta_x[k];

    const Index n = c.n_buses;
    AdmittanceMatrix Y{Matrix::Zero(n, n), Matrix::Zero(n, n)};
    for (std::size_t l = 0; l < c.branches.size(); ++l) {
        const Branch& br = c.branches[l];
        const auto [gs, bs] = series_admittance(r[l], x[l]);
        const Index i = br.from_bus, j = br.to_bus;
        Y.G(i, j) -= gs;
        Y.G(j, i) -= gs;
        Y.B(i, j) -= bs;
        Y.B(j, i) -= bs;
        Y.G(i, i) += gs;
        Y.G(j, j) += gs;
        Y.B(i, i) += bs + 0.5 * br.b_charging;
        Y.B(j, j) += bs + 0.5 * br.b_charging;
    }
    for (Index i = 0; i < n; ++i) {
        Y.G(i, i) += c.shunts[static_cast<std::size_t>(i)].g_sh;
        Y.B(i, i) += c.shunts[static_cast<std::size_t>(i)].b_sh;
    }
    return Y;
}

inline Vector nominal_r(const NetworkCase& c) {
    Vector v(c.n_r());
    for (Index k = 0; k < c.n_r(); ++k) v[k] = c.branches[static_cast<std::size_t>(c.estimable_r[static_cast<std::size_t>(k)])].r;
    return v;
}

inline Vector nominal_x(const NetworkCase& c) {
    Vector v(c.n_x());
    for (Index k = 0; k < c.n_x(); ++k) v[k] = c.branches[static_cast<std::size_t>(c.estimable_x[static_cast<std::size_t>(k)])].x;
    return v;
}

// ---------------------------------------------------------------------------
// Case file format (JSON). Bus numbers are 1-based in the file.
// ---------------------------------------------------------------------------

inline NetworkCase case_from_json(const nlohmann::json& j) {
    using nlohmann::json;
    NetworkCase c;
    try {
        c.name = j.value("name", std::string("unnamed"));
        c.n_buses = j.at("n_buses").get<Index>();
        c.base_frequency = j.value("base_frequency", 60.0);
        c.loads.assign(static_cast<std::size_t>(c.n_buses), {});
        c.shunts.assign(static_cast<std::size_t>(c.n_buses), {});
        auto bus_of = [&](const json& v) {
            const Index b = v.get<Index>();
            if (b < 1 || b > c.n_buses) throw InvalidInput("bus number out of range: " + std::to_string(b));
            return b - 1;
        };
        if (j.contains("buses")) {
            for (const auto& b : j.at("buses")) {
                const Index i = bus_of(b.at("bus"));
                c.shunts[static_cast<std::size_t>(i)] = {b.value("g_sh", 0.0), b.value("b_sh", 0.0)};
            }
        }
        for (const auto& b : j.at("branches")) {
            Branch br;
            br.from_bus = bus_of(b.at("from_bus"));
            br.to_bus = bus_of(b.at("to_bus"));
            br.r = b.at("r").get<double>();
            br.x = b.at("x").get<double>();
            br.b_charging = b.value("b_charging", 0.0);
            br.tap = b.value("tap", 1.0);
            c.branches.push_back(br);
        }
        for (const auto& g : j.at("generators")) {
            GeneratorSpec s;
            s.bus = bus_of(g.at("bus"));
            s.M_nom = g.at("M_nom").get<double>();
            s.D_nom = g.at("D_nom").get<double>();
            s.xd = g.at("xd").get<double>();
            s.xd_prime = g.at("xd_prime").get<double>();
            s.Td0_prime = g.at("Td0_prime").get<double>();
            s.T_ch = g.at("T_ch").get<double>();
            s.R_d = g.at("R_d").get<double>();
            s.p_set = g.value("p_set", 0.0);
            s.v_set = g.value("v_set", 1.0);
            c.generators.push_back(s);
        }
        if (j.contains("loads")) {
            for (const auto& l : j.at("loads")) {
                const Index i = bus_of(l.at("bus"));
                c.loads[static_cast<std::size_t>(i)] = {l.at("P").get<double>(), l.at("Q").get<double>()};
            }
        }
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("malformed case document: ") + e.what());
    }
    c.finalize();
    return c;
}

inline nlohmann::json case_to_json(const NetworkCase& c) {
    nlohmann::ordered_json j;
    j["name"] = c.name;
    j["n_buses"] = c.n_buses;
    j["base_frequency"] = c.base_frequency;
    j["buses"] = nlohmann::ordered_json::array();
    for (Index i = 0; i < c.n_buses; ++i) {
        const auto& s = c.shunts[static_cast<std::size_t>(i)];
        j["buses"].push_back({{"bus", i + 1}, {"g_sh", s.g_sh}, {"b_sh", s.b_sh}});
    }
    j["branches"] = nlohmann::ordered_json::array();
    for (const auto& b : c.branches) {
        j["branches"].push_back({{"from_bus", b.from_bus + 1},
                                 {"to_bus", b.to_bus + 1},
                                 {"r", b.r},
                                 {"x", b.x},
                                 {"b_charging", b.b_charging},
                                 {"tap", b.tap}});
    }
    j["generators"] = nlohmann::ordered_json::array();
    for (const auto& g : c.generators) {
        j["generators"].push_back({{"bus", g.bus + 1},
                                   {"M_nom", g.M_nom},
                                   {"D_nom", g.D_nom},
                                   {"xd", g.xd},
                                   {"xd_prime", g.xd_prime},
                                   {"Td0_prime", g.Td0_prime},
                                   {"T_ch", g.T_ch},
                                   {"R_d", g.R_d},
                                   {"p_set", g.p_set},
                                   {"v_set", g.v_set}});
    }
    j["loads"] = nlohmann::ordered_json::array();
    for (Index i = 0; i < c.n_buses; ++i) {
        const auto& l = c.loads[static_cast<std::size_t>(i)];
        if (l.P != 0.0 || l.Q != 0.0) j["loads"].push_back({{"bus", i + 1}, {"P", l.P}, {"Q", l.Q}});
    }
    return nlohmann::json(j);
}

inline NetworkCase load_case_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open case file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("case file " + path + ": " + e.what());
    }
    return case_from_json(j);
}

/// WSCC 3-machine 9-bus system, 100 MVA base. Branch and load data follow the
/// widely used MATPOWER `case9`; machine reactances and time constants follow
/// Anderson & Fouad. data/ieee9.json holds the same document.
inline constexpr const char* kIeee9CaseJson = R"json({
  "name": "ieee9",
  "n_buses": 9,
  "base_frequency": 60.0,
  "buses": [
    {"bus": 1, "g_sh": 0.0, "b_sh": 0.0}, {"bus": 2, "g_sh": 0.0, "b_sh": 0.0},
    {"bus": 3, "g_sh": 0.0, "b_sh": 0.0}, {"bus": 4, "g_sh": 0.0, "b_sh": 0.0},
    {"bus": 5, "g_sh": 0.0, "b_sh": 0.0}, {"bus": 6, "g_sh": 0.0, "b_sh": 0.0},
    {"bus": 7, "g_sh": 0.0, "b_sh": 0.0}, {"bus": 8, "g_sh": 0.0, "b_sh": 0.0},
    {"bus": 9, "g_sh": 0.0, "b_sh": 0.0}
  ],
  "branches": [
    {"from_bus": 1, "to_bus": 4, "r": 0.0,    "x": 0.0576, "b_charging": 0.0,   "tap": 1.0},
    {"from_bus": 4, "to_bus": 5, "r": 0.017,  "x": 0.092,  "b_charging": 0.158, "tap": 1.0},
    {"from_bus": 5, "to_bus": 6, "r": 0.039,  "x": 0.17,   "b_charging": 0.358, "tap": 1.0},
    {"from_bus": 3, "to_bus": 6, "r": 0.0,    "x": 0.0586, "b_charging": 0.0,   "tap": 1.0},
    {"from_bus": 6, "to_bus": 7, "r": 0.0119, "x": 0.1008, "b_charging": 0.209, "tap": 1.0},
    {"from_bus": 7, "to_bus": 8, "r": 0.0085, "x": 0.072,  "b_charging": 0.149, "tap": 1.0},
    {"from_bus": 8, "to_bus": 2, "r": 0.0,    "x": 0.0625, "b_charging": 0.0,   "tap": 1.0},
    {"from_bus": 8, "to_bus": 9, "r": 0.032,  "x": 0.161,  "b_charging": 0.306, "tap": 1.0},
    {"from_bus": 9, "to_bus": 4, "r": 0.01,   "x": 0.085,  "b_charging": 0.176, "tap": 1.0}
  ],
  "generators": [
    {"bus": 1, "M_nom": 0.236, "D_nom": 1.92, "xd": 0.146,  "xd_prime": 0.0608, "Td0_prime": 8.96,
     "T_ch": 0.2, "R_d": 0.12566370614359174, "p_set": 0.0,  "v_set": 1.0},
    {"bus": 2, "M_nom": 0.064, "D_nom": 0.50, "xd": 0.8958, "xd_prime": 0.1198, "Td0_prime": 6.00,
     "T_ch": 0.2, "R_d": 0.12566370614359174, "p_set": 1.63, "v_set": 1.0},
    {"bus": 3, "M_nom": 0.030, "D_nom": 0.20, "xd": 1.3125, "xd_prime": 0.1813, "Td0_prime": 5.89,
     "T_ch": 0.2, "R_d": 0.12566370614359174, "p_set": 0.85, "v_set": 1.0}
  ],
  "loads": [
    {"bus": 5, "P": 0.90, "Q": 0.30},
    {"bus": 7, "P": 1.00, "Q": 0.35},
    {"bus": 9, "P": 1.25, "Q": 0.50}
  ]
})json";

inline NetworkCase builtin_case_ieee9() { return case_from_json(nlohmann::json::parse(kIeee9CaseJson)); }

}  // namespace daebayes
