#pragma once

// Run configuration: strict JSON parsing (unknown keys are errors), the
// defaults of the 9-bus protocol, and the reproducibility header written at
// the top of every output file.

#include "daebayes/experiments.hpp"
#include "daebayes/likelihood.hpp"
#include "daebayes/params.hpp"
#include "daebayes/sampler.hpp"
#include "daebayes/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#ifndef DAEBAYES_VERSION
#define DAEBAYES_VERSION "0.0.0"
#endif

namespace daebayes {

inline constexpr const char* kVersion = DAEBAYES_VERSION;

enum class RunMode { Joint, Decoupled, Ablation };

inline const char* to_string(RunMode m) {
    switch (m) {
        case RunMode::Joint: return "joint";
        case RunMode::Decoupled: return "decoupled";
        case RunMode::Ablation: return "ablation";
    }
    return "?";
}

struct InitConfig {
    bool stagewise = true;
    InitOptions options;
};

struct RunConfig {
    std::string case_name = "ieee9";
    std::uint64_t seed = 1;
    double horizon = 10.0;
    PerturbationCaps caps;
    bool table_generators = true;
    NoiseModel noise;
    bool s_hat_at_truth = true;
    WindowSpec windows;
    PriorWidths prior;
    FidelityConfig fidelity;
    std::vector<Index> monitored_buses{1, 3, 4, 5, 6, 7, 8};  // 0-based
    std::optional<std::vector<PulseSchedule>> experiments;
    std::string budget = "short";
    SamplerConfig mcmc = budget_short();
    bool full_block = false;
    InitConfig init;
    RunMode mode = RunMode::Joint;
    std::vector<std::string> frozen_blocks;
    std::string out = "out";
    std::optional<std::string> data;  // measurement file from `simulate`

    GridSpec grid() const { return {horizon, fidelity.exact.dt, fidelity.exact.decim}; }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw InvalidInput(where + ": expected an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, _] : j.items())
        if (!ok.count(k)) throw InvalidInput("unknown config key: " + (where.empty() ? k : where + "." + k));
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& dst) {
    if (!j.contains(key)) return;
    try {
        dst = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("config key ") + key + ": " + e.what());
    }
}

inline void read_classes(const nlohmann::json& j, const char* key, std::array<double, 4>& dst, const std::string& where) {
    if (!j.contains(key)) return;
    const auto& c = j.at(key);
    check_keys(c, {"M", "D", "r", "x"}, where + "." + key);
    const char* names[4] = {"M", "D", "r", "x"};
    for (std::size_t k = 0; k < 4; ++k) read(c, names[k], dst[k]);
}

inline void read_level(const nlohmann::json& j, const char* key, FidelityLevel& l) {
    if (!j.contains(key)) return;
    const auto& f = j.at(key);
    check_keys(f, {"dt", "decim", "newton_tol"}, std::string("fidelity.") + key);
    read(f, "dt", l.dt);
    read(f, "decim", l.decim);
    read(f, "newton_tol", l.newton_tol);
}

}  // namespace detail

/// Applies the named budget to cfg.mcmc, keeping the adaptation settings.
inline void apply_budget(RunConfig& cfg, const std::string& budget) {
    SamplerConfig b;
    if (budget == "short") b = budget_short();
    else if (budget == "full") b = budget_full();
    else throw InvalidInput("budget must be short or full");
    cfg.mcmc.n_burn = b.n_burn;
    cfg.mcmc.n_samp = b.n_samp;
    cfg.mcmc.n_thin = b.n_thin;
    cfg.budget = budget;
}

inline RunMode parse_mode(const std::string& s) {
    if (s == "joint") return RunMode::Joint;
    if (s == "decoupled") return RunMode::Decoupled;
    if (s == "ablation") return RunMode::Ablation;
    throw InvalidInput("mode must be joint, decoupled or ablation");
}

inline void validate(const RunConfig& c) {
    if (!(c.horizon > 0.0)) throw InvalidInput("horizon must be positive");
    c.fidelity.validate();
    if (c.mcmc.n_samp < 10) throw InvalidInput("mcmc.n_samp must be at least 10");
    if (c.mcmc.n_burn < 0 || c.mcmc.n_thin < 1 || c.mcmc.adapt.n_adapt < 1) throw InvalidInput("invalid MCMC budget");
    if (!(c.mcmc.adapt.a_target > 0.0 && c.mcmc.adapt.a_target < 1.0)) throw InvalidInput("a_target must be in (0,1)");
    if (c.monitored_buses.empty()) throw InvalidInput("no monitored buses");
    for (double v : c.prior.width)
        if (!(v > 0.0)) throw InvalidInput("prior widths must be positive");
    for (double v : c.prior.box)
        if (!(v > 0.0)) throw InvalidInput("prior boxes must be positive");
    for (const auto& b : c.frozen_blocks)
        if (b != "dyn" && b != "res" && b != "rea") throw InvalidInput("unknown frozen block: " + b);
    if (c.frozen_blocks.size() >= 3) throw InvalidInput("all blocks frozen");
}

inline RunConfig config_from_json(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::read;
    check_keys(j, {"case", "seed", "horizon", "truth", "snr_db", "noise", "windows", "prior", "fidelity",
                   "monitored_buses", "experiments", "mcmc", "init", "mode", "frozen_blocks", "out", "data"},
               "");
    RunConfig c;
    read(j, "case", c.case_name);
    read(j, "seed", c.seed);
    read(j, "horizon", c.horizon);
    if (j.contains("truth")) {
        const auto& t = j.at("truth");
        check_keys(t, {"caps", "generators"}, "truth");
        if (t.contains("caps")) {
            std::array<double, 4> caps{c.caps.M, c.caps.D, c.caps.r, c.caps.x};
            detail::read_classes(t, "caps", caps, "truth");
            c.caps = {caps[0], caps[1], caps[2], caps[3]};
        }
        std::string g = "table";
        read(t, "generators", g);
        if (g != "table" && g != "drawn") throw InvalidInput("truth.generators must be table or drawn");
        c.table_generators = g == "table";
    }
    if (j.contains("snr_db")) {
        const auto& s = j.at("snr_db");
        if (s.is_string() && s.get<std::string>() == "inf") c.noise.snr_db = kInf;
        else if (s.is_number()) c.noise.snr_db = s.get<double>();
        else throw InvalidInput("snr_db must be a number or \"inf\"");
    }
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        check_keys(n, {"rho", "kappa_volt", "kappa_freq", "sigma_floor", "s_hat_at"}, "noise");
        read(n, "rho", c.noise.rho);
        read(n, "kappa_volt", c.noise.kappa_volt);
        read(n, "kappa_freq", c.noise.kappa_freq);
        read(n, "sigma_floor", c.noise.sigma_floor);
        std::string at = "truth";
        read(n, "s_hat_at", at);
        if (at != "truth" && at != "nominal") throw InvalidInput("noise.s_hat_at must be truth or nominal");
        c.s_hat_at_truth = at == "truth";
    }
    if (j.contains("windows")) {
        const auto& w = j.at("windows");
        check_keys(w, {"inertia", "damping", "w_freq_M", "w_freq_D", "w_volt_Y"}, "windows");
        read(w, "inertia", c.windows.inertia);
        read(w, "damping", c.windows.damping);
        read(w, "w_freq_M", c.windows.w_freq_M);
        read(w, "w_freq_D", c.windows.w_freq_D);
        read(w, "w_volt_Y", c.windows.w_volt_Y);
    }
    if (j.contains("prior")) {
        const auto& p = j.at("prior");
        check_keys(p, {"width", "box"}, "prior");
        detail::read_classes(p, "width", c.prior.width, "prior");
        detail::read_classes(p, "box", c.prior.box, "prior");
    }
    if (j.contains("fidelity")) {
        const auto& f = j.at("fidelity");
        check_keys(f, {"exact", "coarse"}, "fidelity");
        detail::read_level(f, "exact", c.fidelity.exact);
        detail::read_level(f, "coarse", c.fidelity.coarse);
    }
    if (j.contains("monitored_buses")) {
        std::vector<Index> b;
        read(j, "monitored_buses", b);
        c.monitored_buses.clear();
        for (Index v : b) c.monitored_buses.push_back(v - 1);
    }
    if (j.contains("experiments") && !j.at("experiments").is_null()) {
        std::vector<PulseSchedule> e;
        for (const auto& s : j.at("experiments")) e.push_back(schedule_from_json(s));
        c.experiments = e;
    }
    if (j.contains("mcmc")) {
        const auto& m = j.at("mcmc");
        check_keys(m, {"budget", "n_burn", "n_samp", "n_thin", "n_adapt", "a_target", "c0", "t0", "window",
                       "beta_max", "kernel", "proposal", "audit_every"},
                   "mcmc");
        std::string budget = c.budget;
        read(m, "budget", budget);
        apply_budget(c, budget);
        read(m, "n_burn", c.mcmc.n_burn);
        read(m, "n_samp", c.mcmc.n_samp);
        read(m, "n_thin", c.mcmc.n_thin);
        read(m, "n_adapt", c.mcmc.adapt.n_adapt);
        read(m, "a_target", c.mcmc.adapt.a_target);
        read(m, "c0", c.mcmc.adapt.c0);
        read(m, "t0", c.mcmc.adapt.t0);
        read(m, "window", c.mcmc.adapt.window);
        read(m, "beta_max", c.mcmc.adapt.beta_max);
        read(m, "audit_every", c.mcmc.audit_every);
        std::string kernel = "da", proposal = "blocked";
        read(m, "kernel", kernel);
        read(m, "proposal", proposal);
        if (kernel != "da" && kernel != "exact") throw InvalidInput("mcmc.kernel must be da or exact");
        if (proposal != "blocked" && proposal != "full") throw InvalidInput("mcmc.proposal must be blocked or full");
        c.mcmc.mode = kernel == "da" ? KernelMode::DelayedAcceptance : KernelMode::ExactOnly;
        c.full_block = proposal == "full";
    }
    if (j.contains("init")) {
        const auto& i = j.at("init");
        check_keys(i, {"stagewise", "include_prior", "stage_a_iters", "stage_b_iters", "polish_iters"}, "init");
        read(i, "stagewise", c.init.stagewise);
        read(i, "include_prior", c.init.options.include_prior);
        read(i, "stage_a_iters", c.init.options.stage_a_iters);
        read(i, "stage_b_iters", c.init.options.stage_b_iters);
        read(i, "polish_iters", c.init.options.polish_iters);
    }
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    read(j, "frozen_blocks", c.frozen_blocks);
    read(j, "out", c.out);
    if (j.contains("data") && !j.at("data").is_null()) c.data = j.at("data").get<std::string>();
    validate(c);
    return c;
}

/// Every field, explicitly; feeding this back reproduces the run.
inline nlohmann::json config_to_json(const RunConfig& c) {
    auto classes = [](const std::array<double, 4>& a) {
        return nlohmann::json{{"M", a[0]}, {"D", a[1]}, {"r", a[2]}, {"x", a[3]}};
    };
    auto level = [](const FidelityLevel& l) {
        return nlohmann::json{{"dt", l.dt}, {"decim", l.decim}, {"newton_tol", l.newton_tol}};
    };
    nlohmann::json j;
    j["case"] = c.case_name;
    j["seed"] = c.seed;
    j["horizon"] = c.horizon;
    j["truth"] = {{"caps", classes({c.caps.M, c.caps.D, c.caps.r, c.caps.x})},
                  {"generators", c.table_generators ? "table" : "drawn"}};
    j["snr_db"] = std::isinf(c.noise.snr_db) ? nlohmann::json("inf") : nlohmann::json(c.noise.snr_db);
    j["noise"] = {{"rho", c.noise.rho},
                  {"kappa_volt", c.noise.kappa_volt},
                  {"kappa_freq", c.noise.kappa_freq},
                  {"sigma_floor", c.noise.sigma_floor},
                  {"s_hat_at", c.s_hat_at_truth ? "truth" : "nominal"}};
    j["windows"] = {{"inertia", c.windows.inertia},
                    {"damping", c.windows.damping},
                    {"w_freq_M", c.windows.w_freq_M},
                    {"w_freq_D", c.windows.w_freq_D},
                    {"w_volt_Y", c.windows.w_volt_Y}};
    j["prior"] = {{"width", classes(c.prior.width)}, {"box", classes(c.prior.box)}};
    j["fidelity"] = {{"exact", level(c.fidelity.exact)}, {"coarse", level(c.fidelity.coarse)}};
    std::vector<Index> buses;
    for (Index b : c.monitored_buses) buses.push_back(b + 1);
    j["monitored_buses"] = buses;
    if (c.experiments) {
        j["experiments"] = nlohmann::json::array();
        for (const auto& s : *c.experiments) j["experiments"].push_back(schedule_to_json(s));
    } else {
        j["experiments"] = nullptr;
    }
    const auto& a = c.mcmc.adapt;
    j["mcmc"] = {{"budget", c.budget},
                 {"n_burn", c.mcmc.n_burn},
                 {"n_samp", c.mcmc.n_samp},
                 {"n_thin", c.mcmc.n_thin},
                 {"n_adapt", a.n_adapt},
                 {"a_target", a.a_target},
                 {"c0", a.c0},
                 {"t0", a.t0},
                 {"window", a.window},
                 {"beta_max", a.beta_max},
                 {"kernel", c.mcmc.mode == KernelMode::DelayedAcceptance ? "da" : "exact"},
                 {"proposal", c.full_block ? "full" : "blocked"},
                 {"audit_every", c.mcmc.audit_every}};
    j["init"] = {{"stagewise", c.init.stagewise},
                 {"include_prior", c.init.options.include_prior},
                 {"stage_a_iters", c.init.options.stage_a_iters},
                 {"stage_b_iters", c.init.options.stage_b_iters},
                 {"polish_iters", c.init.options.polish_iters}};
    j["mode"] = to_string(c.mode);
    j["frozen_blocks"] = c.frozen_blocks;
    j["out"] = c.out;
    j["data"] = c.data ? nlohmann::json(*c.data) : nlohmann::json(nullptr);
    return j;
}

inline RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw InvalidInput("config file " + path + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    return s;
}

/// Hash of the effective configuration, excluding the output directory.
inline std::string config_hash(const RunConfig& c) {
    nlohmann::json j = config_to_json(c);
    j.erase("out");
    return hex64(fnv1a(j.dump()));
}

inline std::string csv_header_line(const RunConfig& c) {
    return std::string("# daebayes ") + kVersion + " config_hash=" + config_hash(c) + " seed=" + std::to_string(c.seed);
}

inline nlohmann::json json_header(const RunConfig& c) {
    return {{"tool", "daebayes"}, {"version", kVersion}, {"config_hash", config_hash(c)}, {"seed", c.seed}};
}

}  // namespace daebayes
