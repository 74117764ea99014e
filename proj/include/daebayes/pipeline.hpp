#pragma once

// Command implementations behind the CLI: problem assembly, estimation in
// joint / decoupled form, the sampler ablation, and file output.

#include "daebayes/config.hpp"
#include "daebayes/dae.hpp"
#include "daebayes/experiments.hpp"
#include "daebayes/grid.hpp"
#include "daebayes/identifiability.hpp"
#include "daebayes/likelihood.hpp"
#include "daebayes/params.hpp"
#include "daebayes/sampler.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace daebayes {

struct Problem {
    RunConfig cfg;
    NetworkCase net;
    ChannelLayout channels;
    GridSpec grid;
    TruthSpec truth;
    PriorSpec prior;
    std::vector<MeasurementSet> data;

    PhysicsPosterior posterior() const { return {net, prior, data, channels, grid, cfg.fidelity}; }
    ParamLayout layout() const { return ParamLayout(net); }
};

inline NetworkCase load_network(const RunConfig& cfg) {
    if (cfg.case_name == "ieee9") return builtin_case_ieee9();
    return load_case_file(cfg.case_name);
}

inline std::vector<PulseSchedule> experiment_set(const RunConfig& cfg) {
    return cfg.experiments ? *cfg.experiments : default_experiments_ieee9();
}

inline nlohmann::json truth_to_json(const TruthSpec& t, const ParamLayout& layout) {
    nlohmann::json names = layout.names;
    return {{"names", names},
            {"theta", vector_to_json(t.theta_true.flat())},
            {"caps", {{"M", t.caps.M}, {"D", t.caps.D}, {"r", t.caps.r}, {"x", t.caps.x}}},
            {"seed", t.seed}};
}

/// Case, truth, priors and measurements. Measurements are read from
/// cfg.data when set, otherwise synthesized. Throws InvalidInput on bad
/// configuration and SolverFailure when the truth is infeasible.
inline Problem build_problem(const RunConfig& cfg) {
    Problem p;
    p.cfg = cfg;
    p.net = load_network(cfg);
    for (Index b : cfg.monitored_buses)
        if (b < 0 || b >= p.net.n_buses) throw InvalidInput("monitored bus out of range");
    p.channels = {cfg.monitored_buses, p.net.n_gen()};
    p.grid = cfg.grid();
    p.prior = default_priors(p.net, cfg.prior);
    const ParamLayout layout(p.net);
    if (cfg.data) {
        std::ifstream in(*cfg.data);
        if (!in) throw InvalidInput("cannot open measurement file: " + *cfg.data);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::parse_error& e) {
            throw InvalidInput("measurement file is not valid JSON: " + std::string(e.what()));
        }
        const Vector t = vector_from_json(j.at("truth").at("theta"));
        p.truth.theta_true = ParamVector::from_flat(t, layout.n_gen, layout.n_r, layout.n_x);
        p.truth.caps = cfg.caps;
        p.truth.seed = cfg.seed;
        for (const auto& e : j.at("experiments")) p.data.push_back(measurement_from_json(e));
        return p;
    }
    const std::optional<ParamVector> gens =
        cfg.table_generators && cfg.case_name == "ieee9" ? std::optional(table_generator_truth_ieee9()) : std::nullopt;
    p.truth = draw_truth(p.net, cfg.seed, cfg.caps, gens);
    SynthesisConfig sc;
    sc.grid = p.grid;
    sc.noise = cfg.noise;
    sc.windows = cfg.windows;
    sc.channels = p.channels;
    sc.seed = cfg.seed;
    if (!cfg.s_hat_at_truth) sc.s_hat_theta = nominal_params(p.net);
    p.data = synthesize(p.net, p.truth, experiment_set(cfg), sc);
    return p;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

inline std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const RunConfig& cfg) : out_(path) {
        if (!out_) throw InvalidInput("cannot write " + path.string());
        out_ << csv_header_line(cfg) << '\n';
    }
    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

inline void write_json(const std::filesystem::path& path, const RunConfig& cfg, nlohmann::json body) {
    nlohmann::json j;
    j["header"] = json_header(cfg);
    for (auto& [k, v] : body.items()) j[k] = v;
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline std::filesystem::path ensure_out(const RunConfig& cfg) {
    std::filesystem::path dir(cfg.out);
    std::filesystem::create_directories(dir);
    return dir;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

inline void write_measurements(const Problem& p, const std::filesystem::path& dir) {
    const auto names = p.channels.names();
    nlohmann::json exps = nlohmann::json::array();
    for (std::size_t e = 0; e < p.data.size(); ++e) {
        const MeasurementSet& m = p.data[e];
        CsvWriter csv(dir / ("exp" + std::to_string(e + 1) + ".csv"), p.cfg);
        std::vector<std::string> head{"t"};
        head.insert(head.end(), names.begin(), names.end());
        csv.row(head);
        for (Index k = 0; k < m.n_times(); ++k) {
            std::vector<std::string> r{fmt(m.times[static_cast<std::size_t>(k)])};
            for (Index j = 0; j < m.y.rows(); ++j) r.push_back(fmt(m.y(j, k)));
            csv.row(r);
        }
        exps.push_back(measurement_to_json(m));
    }
    write_json(dir / "measurements.json", p.cfg,
               {{"config", config_to_json(p.cfg)},
                {"channels", names},
                {"truth", truth_to_json(p.truth, p.layout())},
                {"experiments", exps}});
}

inline void cmd_simulate(const RunConfig& cfg) {
    const Problem p = build_problem(cfg);
    write_measurements(p, ensure_out(cfg));
}

// ---------------------------------------------------------------------------
// identify
// ---------------------------------------------------------------------------

struct IdentifyResult {
    InitResult init;
    CurvatureReport curvature;
};

inline InitResult initialize(const PhysicsPosterior& post, const RunConfig& cfg, const std::vector<bool>& frozen) {
    if (cfg.init.stagewise) return stagewise_init(post, cfg.init.options, frozen);
    InitResult r;
    r.eta0 = r.eta_stage_a = r.eta_stage_b = Vector::Zero(post.dimension());
    r.H0 = gauss_newton_curvature(fd_jacobian(post, r.eta0, cfg.init.options.fd_step).J);
    r.forward_solves = 2 * post.dimension() * static_cast<Index>(post.data().size());
    return r;
}

inline IdentifyResult run_identify(const Problem& p) {
    const PhysicsPosterior post = p.posterior();
    IdentifyResult r;
    r.init = initialize(post, p.cfg, {});
    r.curvature = curvature_report(post, r.init.eta0, p.cfg.init.options.fd_step);
    return r;
}

/// I_rx over the largest generator-network cross index.
inline double rx_dominance(const Matrix& I) {
    const double cross = std::max({I(0, 2), I(0, 3), I(1, 2), I(1, 3)});
    return cross > 0.0 ? I(2, 3) / cross : kInf;
}

inline const std::array<const char*, 4> kClassNames{"M", "D", "r", "x"};

inline void write_identify(const Problem& p, const IdentifyResult& r, const std::filesystem::path& dir) {
    const Matrix& I = r.curvature.I;
    {
        CsvWriter csv(dir / "coid.csv", p.cfg);
        csv.row({"", "M", "D", "r", "x"});
        for (Index a = 0; a < 4; ++a) {
            std::vector<std::string> row{kClassNames[static_cast<std::size_t>(a)]};
            for (Index b = 0; b < 4; ++b) row.push_back(fmt(I(a, b)));
            csv.row(row);
        }
    }
    const ParamLayout layout = p.layout();
    {
        CsvWriter csv(dir / "curvature.csv", p.cfg);
        std::vector<std::string> head{""};
        head.insert(head.end(), layout.names.begin(), layout.names.end());
        csv.row(head);
        for (Index i = 0; i < r.curvature.H.rows(); ++i) {
            std::vector<std::string> row{layout.names[static_cast<std::size_t>(i)]};
            for (Index j = 0; j < r.curvature.H.cols(); ++j) row.push_back(fmt(r.curvature.H(i, j)));
            csv.row(row);
        }
    }
    // Column energy of J split by channel class.
    {
        const Index p_ch = p.channels.size();
        CsvWriter csv(dir / "jacobian_diag.csv", p.cfg);
        csv.row({"param", "eta_ref", "col_norm", "voltage_energy", "frequency_energy"});
        const Matrix& J = r.curvature.J_eta;
        for (Index c = 0; c < J.cols(); ++c) {
            double ev = 0.0, ef = 0.0;
            for (Index row = 0; row < J.rows(); ++row) {
                const double v = J(row, c) * J(row, c);
                (p.channels.class_of(row % p_ch) == ChannelClass::Voltage ? ev : ef) += v;
            }
            csv.row({layout.names[static_cast<std::size_t>(c)], fmt(r.curvature.reference_eta[c]),
                     fmt(J.col(c).norm()), fmt(ev), fmt(ef)});
        }
    }
    write_json(dir / "identify.json", p.cfg,
               {{"config", config_to_json(p.cfg)},
                {"reference_eta", vector_to_json(r.curvature.reference_eta)},
                {"coid", matrix_to_json(I)},
                {"one_sided_columns", r.curvature.one_sided},
                {"init_forward_solves", r.init.forward_solves},
                {"rx_dominance", rx_dominance(I)},
                {"I_MD", I(0, 1)}});
}

inline void cmd_identify(const RunConfig& cfg) {
    const Problem p = build_problem(cfg);
    write_identify(p, run_identify(p), ensure_out(cfg));
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

struct SamplerVariant {
    std::string name = "blocked+da";
    KernelMode kernel = KernelMode::DelayedAcceptance;
    bool full_block = false;
};

struct EstimateResult {
    RunMode mode = RunMode::Joint;
    SamplerVariant variant;
    std::vector<InitResult> inits;
    std::vector<ChainResult> chains;
    Matrix samples;             // eta, combined across the decoupled pair
    std::vector<bool> active;   // coordinates that were sampled
    Summary summary;
    double noise_ratio = 0.0;   // |l_data| / (0.5 ||eta_hat||^2)
    double full_log_like = 0.0;
    Index exact_solves = 0, coarse_solves = 0, iterations = 0;
    double wall_seconds = 0.0;
};

inline std::vector<bool> frozen_coords(const BlockPartition& b, Index dim) {
    std::vector<bool> f(static_cast<std::size_t>(dim), false);
    for (Index k = 0; k < b.size(); ++k)
        if (b.frozen[static_cast<std::size_t>(k)])
            for (Index i : b.blocks[static_cast<std::size_t>(k)]) f[static_cast<std::size_t>(i)] = true;
    return f;
}

inline void log_line(const std::string& s) { std::cerr << "[daebayes] " << s << std::endl; }

/// One chain with the given frozen blocks. `init` is reused when supplied.
inline ChainResult run_one(const PhysicsPosterior& post, const RunConfig& cfg, const SamplerVariant& v,
                           const std::vector<std::string>& frozen, std::uint64_t chain, InitResult& init,
                           bool have_init) {
    const ParamLayout layout(post.network());
    BlockPartition blocks = freeze(default_blocks(layout), frozen);
    blocks.validate(post.dimension());
    const auto fz = frozen_coords(blocks, post.dimension());
    if (!have_init) init = initialize(post, cfg, fz);
    if (v.full_block) blocks = full_block(blocks);
    SamplerConfig sc = cfg.mcmc;
    sc.mode = v.kernel;
    return run_chain(post, init.eta0, init.H0, blocks, sc, cfg.seed, chain);
}

inline std::vector<std::string> merged(std::vector<std::string> a, const std::vector<std::string>& b) {
    for (const auto& s : b)
        if (std::find(a.begin(), a.end(), s) == a.end()) a.push_back(s);
    return a;
}

/// Joint: one chain over every unfrozen block. Decoupled: (M, D) with the
/// network pinned at nominal, then (r, x) with the generators pinned.
inline EstimateResult run_estimate(const Problem& p, RunMode mode, const SamplerVariant& v,
                                   const InitResult* shared_init = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    const PhysicsPosterior post = p.posterior();
    const ParamLayout layout = p.layout();
    const Index d = post.dimension();
    EstimateResult res;
    res.mode = mode;
    res.variant = v;
    std::vector<std::vector<std::string>> runs;
    if (mode == RunMode::Decoupled) runs = {merged({"res", "rea"}, p.cfg.frozen_blocks), merged({"dyn"}, p.cfg.frozen_blocks)};
    else runs = {p.cfg.frozen_blocks};
    for (const auto& fr : runs)
        if (fr.size() >= 3) throw InvalidInput("all blocks frozen");

    res.active.assign(static_cast<std::size_t>(d), false);
    res.samples = Matrix::Zero(p.cfg.mcmc.n_samp, d);
    for (std::size_t k = 0; k < runs.size(); ++k) {
        InitResult init;
        const bool have = shared_init && runs.size() == 1;
        if (have) init = *shared_init;
        log_line(std::string(to_string(mode)) + " " + v.name + " chain " + std::to_string(k));
        ChainResult ch = run_one(post, p.cfg, v, runs[k], k, init, have);
        const auto fz = frozen_coords(freeze(default_blocks(layout), runs[k]), d);
        for (Index i = 0; i < d; ++i)
            if (!fz[static_cast<std::size_t>(i)]) {
                res.active[static_cast<std::size_t>(i)] = true;
                res.samples.col(i) = ch.samples.col(i);
            }
        res.exact_solves += ch.ledger.exact_solves;
        res.coarse_solves += ch.ledger.coarse_solves;
        res.iterations += ch.ledger.iterations;
        res.inits.push_back(std::move(init));
        res.chains.push_back(std::move(ch));
    }
    res.summary = summarize(res.samples, p.prior, layout, p.truth.theta_true, res.active);
    const Vector eta_hat = res.summary.eta_mean;
    res.full_log_like = post.full_data_log_likelihood(eta_hat);
    const double half = 0.5 * eta_hat.squaredNorm();
    res.noise_ratio = half > 0.0 ? std::abs(res.full_log_like) / half : kInf;
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

struct Verdict {
    std::string name;
    bool pass = false;
    std::string detail;
};

inline std::vector<Verdict> estimate_verdicts(const Problem& p, const EstimateResult& r) {
    std::vector<Verdict> v;
    const Summary& s = r.summary;
    auto pct = [](double x) {
        std::ostringstream o;
        o << std::fixed << std::setprecision(2) << 100.0 * x << "%";
        return o.str();
    };
    bool ledgers = true;
    for (const auto& c : r.chains) ledgers = ledgers && c.ledger.consistent() && c.ledger.audit_mismatches == 0;
    v.push_back({"ledger_conservation", ledgers, ledgers ? "all counters balance" : "ledger mismatch"});
    const double ratio = r.noise_ratio;
    v.push_back({"noise_diagnostic", ratio >= 1e3 && ratio <= 1e6, "ratio " + fmt(ratio)});
    const bool joint = r.mode == RunMode::Joint && p.cfg.frozen_blocks.empty();
    if (!joint) return v;
    const double red = 1.0 - static_cast<double>(r.exact_solves) / static_cast<double>(r.iterations);
    if (p.cfg.budget == "short") {
        const bool ok = s.of(ParamClass::M).mean_err <= 0.05 && s.of(ParamClass::D).max_err <= 0.25 &&
                        s.of(ParamClass::r).mean_err <= 0.10 && s.of(ParamClass::x).mean_err <= 0.10;
        v.push_back({"reduced_budget_recovery", ok,
                     "M mean " + pct(s.of(ParamClass::M).mean_err) + ", D max " + pct(s.of(ParamClass::D).max_err) +
                         ", r mean " + pct(s.of(ParamClass::r).mean_err) + ", x mean " +
                         pct(s.of(ParamClass::x).mean_err)});
        if (r.variant.kernel == KernelMode::DelayedAcceptance)
            v.push_back({"exact_solve_reduction", red >= 0.40, pct(red)});
    } else {
        auto within = [&](ParamClass c, double mean, double max) {
            return s.of(c).mean_err <= mean && s.of(c).max_err <= max;
        };
        const bool ok = within(ParamClass::M, 0.02, 0.03) && within(ParamClass::D, 0.04, 0.07) &&
                        within(ParamClass::r, 0.05, 0.08) && within(ParamClass::x, 0.02, 0.05);
        std::ostringstream d;
        for (ParamClass c : kParamClasses)
            d << to_string(c) << " " << pct(s.of(c).mean_err) << "/" << pct(s.of(c).max_err) << " ";
        v.push_back({"full_budget_errors", ok, d.str()});
        v.push_back({"coverage", s.covered >= 18, std::to_string(s.covered) + "/" + std::to_string(s.with_truth)});
        const double acc = r.chains.front().ledger.acceptance();
        v.push_back({"acceptance_band", acc >= 0.15 && acc <= 0.35, pct(acc)});
    }
    return v;
}

inline nlohmann::json verdicts_to_json(const std::vector<Verdict>& v) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& x : v) j.push_back({{"check", x.name}, {"pass", x.pass}, {"detail", x.detail}});
    return j;
}

inline nlohmann::json summary_to_json(const Summary& s) {
    nlohmann::json params = nlohmann::json::array();
    for (const auto& q : s.params) {
        nlohmann::json e{{"name", q.name}, {"class", to_string(q.cls)}, {"active", q.active}, {"mean", q.mean},
                         {"std", q.std},   {"q025", q.q025},            {"q975", q.q975}};
        if (q.truth) e["truth"] = *q.truth;
        if (q.rel_err) e["rel_err"] = *q.rel_err;
        if (q.covered) e["covered"] = *q.covered;
        params.push_back(e);
    }
    nlohmann::json classes = nlohmann::json::object();
    for (ParamClass c : kParamClasses)
        classes[to_string(c)] = {{"count", s.of(c).count}, {"mean_err", s.of(c).mean_err}, {"max_err", s.of(c).max_err}};
    return {{"params", params}, {"classes", classes}, {"covered", s.covered}, {"with_truth", s.with_truth}};
}

inline void write_summary_csv(const std::filesystem::path& path, const RunConfig& cfg, const Summary& s) {
    CsvWriter csv(path, cfg);
    csv.row({"param", "class", "active", "mean", "std", "q025", "q975", "truth", "rel_err", "covered"});
    for (const auto& q : s.params) {
        if (!q.active) continue;
        csv.row({q.name, to_string(q.cls), q.active ? "1" : "0", fmt(q.mean), fmt(q.std), fmt(q.q025), fmt(q.q975),
                 q.truth ? fmt(*q.truth) : "", q.rel_err ? fmt(*q.rel_err) : "",
                 q.covered ? (*q.covered ? "1" : "0") : ""});
    }
}

inline void write_estimate(const Problem& p, const EstimateResult& r, const std::filesystem::path& dir,
                           const std::optional<IdentifyResult>& ident = std::nullopt) {
    const ParamLayout layout = p.layout();
    {
        CsvWriter csv(dir / "samples.csv", p.cfg);
        std::vector<std::string> head{"k"};
        for (const auto& n : layout.names) head.push_back("eta_" + n);
        for (const auto& n : layout.names) head.push_back(n);
        csv.row(head);
        for (Index k = 0; k < r.samples.rows(); ++k) {
            const Vector eta = r.samples.row(k).transpose();
            const Vector th = to_physical(eta, p.prior).flat();
            std::vector<std::string> row{std::to_string(k)};
            for (Index i = 0; i < eta.size(); ++i) row.push_back(fmt(eta[i]));
            for (Index i = 0; i < th.size(); ++i) row.push_back(fmt(th[i]));
            csv.row(row);
        }
    }
    write_summary_csv(dir / "summary.csv", p.cfg, r.summary);
    nlohmann::json chains = nlohmann::json::array();
    for (std::size_t k = 0; k < r.chains.size(); ++k) {
        const ChainResult& c = r.chains[k];
        std::vector<double> scales = c.proposal.scale;
        chains.push_back({{"eta0", vector_to_json(c.eta0)},
                          {"frozen", c.blocks.frozen},
                          {"blocks", c.blocks.names},
                          {"ledger", c.ledger.to_json(c.blocks)},
                          {"proposal_scales", scales},
                          {"init_forward_solves", r.inits[k].forward_solves}});
    }
    write_json(dir / "ledger.json", p.cfg, {{"chains", chains}});
    nlohmann::json report{{"config", config_to_json(p.cfg)},
                          {"mode", to_string(r.mode)},
                          {"variant", r.variant.name},
                          {"truth", truth_to_json(p.truth, layout)},
                          {"summary", summary_to_json(r.summary)},
                          {"chains", chains},
                          {"iterations", r.iterations},
                          {"exact_solves", r.exact_solves},
                          {"coarse_solves", r.coarse_solves},
                          {"wall_seconds", r.wall_seconds},
                          {"full_data_log_likelihood", r.full_log_like},
                          {"noise_ratio", r.noise_ratio},
                          {"checks", verdicts_to_json(estimate_verdicts(p, r))}};
    if (ident) {
        report["coid"] = matrix_to_json(ident->curvature.I);
        report["coid_reference_eta"] = vector_to_json(ident->curvature.reference_eta);
    }
    write_json(dir / "report.json", p.cfg, report);
}

inline void cmd_estimate(const RunConfig& cfg) {
    const Problem p = build_problem(cfg);
    const auto dir = ensure_out(cfg);
    SamplerVariant v;
    v.kernel = cfg.mcmc.mode;
    v.full_block = cfg.full_block;
    v.name = std::string(v.full_block ? "full-block" : "blocked") + (v.kernel == KernelMode::ExactOnly ? "+exact" : "+da");
    const RunMode mode = cfg.mode == RunMode::Ablation ? RunMode::Joint : cfg.mode;
    std::optional<IdentifyResult> ident;
    const InitResult* shared = nullptr;
    if (mode == RunMode::Joint) {
        const PhysicsPosterior post = p.posterior();
        IdentifyResult id;
        id.init = initialize(post, cfg, frozen_coords(freeze(default_blocks(p.layout()), cfg.frozen_blocks),
                                                       post.dimension()));
        if (cfg.frozen_blocks.empty()) id.curvature = curvature_report(post, id.init.eta0, cfg.init.options.fd_step);
        ident = std::move(id);
        shared = &ident->init;
    }
    const EstimateResult r = run_estimate(p, mode, v, shared);
    write_estimate(p, r, dir, ident && cfg.frozen_blocks.empty() ? ident : std::nullopt);
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

/// Median over parameters of |mean_a - mean_b| / |mean_b|.
inline double median_mean_shift(const Summary& a, const Summary& b, const std::vector<bool>& active = {}) {
    std::vector<double> s;
    for (Index i = 0; i < a.theta_mean.size(); ++i) {
        if (!active.empty() && !active[static_cast<std::size_t>(i)]) continue;
        s.push_back(std::abs(a.theta_mean[i] - b.theta_mean[i]) / std::abs(b.theta_mean[i]));
    }
    std::sort(s.begin(), s.end());
    return quantile_sorted(s, 0.5);
}

struct AblationResult {
    std::vector<EstimateResult> runs;  // blocked+da, blocked+exact, full-block+da, decoupled
    InitResult init;
    std::vector<Verdict> checks;
};

inline AblationResult run_ablation(const Problem& p) {
    AblationResult a;
    const PhysicsPosterior post = p.posterior();
    a.init = initialize(post, p.cfg, frozen_coords(freeze(default_blocks(p.layout()), p.cfg.frozen_blocks), post.dimension()));
    a.runs.push_back(run_estimate(p, RunMode::Joint, {"blocked+da", KernelMode::DelayedAcceptance, false}, &a.init));
    a.runs.push_back(run_estimate(p, RunMode::Joint, {"blocked+exact", KernelMode::ExactOnly, false}, &a.init));
    a.runs.push_back(run_estimate(p, RunMode::Joint, {"full-block+da", KernelMode::DelayedAcceptance, true}, &a.init));
    a.runs.push_back(run_estimate(p, RunMode::Decoupled, {"decoupled+da", KernelMode::DelayedAcceptance, false}));

    const EstimateResult &da = a.runs[0], &ex = a.runs[1], &fb = a.runs[2], &dc = a.runs[3];
    const double shift = median_mean_shift(ex.summary, da.summary);
    a.checks.push_back({"da_consistency_shift", shift <= 0.02, "median shift " + fmt(shift)});
    const double solves = static_cast<double>(da.exact_solves) / static_cast<double>(ex.exact_solves);
    a.checks.push_back({"da_exact_solve_ratio", solves <= 0.60,
                        std::to_string(da.exact_solves) + " vs " + std::to_string(ex.exact_solves)});
    const auto d1 = p.layout().indices(ParamClass::D).front();
    const double e_joint = *da.summary.params[static_cast<std::size_t>(d1)].rel_err;
    const double e_dec = *dc.summary.params[static_cast<std::size_t>(d1)].rel_err;
    a.checks.push_back({"decoupled_D1_bias", e_dec >= 3.0 * e_joint, "D1 error " + fmt(e_dec) + " vs " + fmt(e_joint)});
    const bool fb_worse = fb.summary.of(ParamClass::D).mean_err >= da.summary.of(ParamClass::D).mean_err;
    a.checks.push_back({"full_block_D_error_not_better", fb_worse,
                        fmt(fb.summary.of(ParamClass::D).mean_err) + " vs " + fmt(da.summary.of(ParamClass::D).mean_err)});
    return a;
}

inline void write_ablation(const Problem& p, const AblationResult& a, const std::filesystem::path& dir) {
    CsvWriter csv(dir / "ablation.csv", p.cfg);
    csv.row({"variant", "iterations", "exact_solves", "coarse_solves", "wall_s", "acceptance", "M_mean", "M_max",
             "D_mean", "D_max", "r_mean", "r_max", "x_mean", "x_max", "covered", "median_shift_vs_da"});
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : a.runs) {
        double acc = 0.0;
        for (const auto& c : r.chains) acc += c.ledger.acceptance();
        acc /= static_cast<double>(r.chains.size());
        std::vector<std::string> row{r.variant.name, std::to_string(r.iterations), std::to_string(r.exact_solves),
                                     std::to_string(r.coarse_solves), fmt(r.wall_seconds), fmt(acc)};
        for (ParamClass c : kParamClasses) {
            row.push_back(fmt(r.summary.of(c).mean_err));
            row.push_back(fmt(r.summary.of(c).max_err));
        }
        row.push_back(std::to_string(r.summary.covered) + "/" + std::to_string(r.summary.with_truth));
        row.push_back(fmt(median_mean_shift(r.summary, a.runs[0].summary)));
        csv.row(row);
        runs.push_back({{"variant", r.variant.name},
                        {"mode", to_string(r.mode)},
                        {"summary", summary_to_json(r.summary)},
                        {"iterations", r.iterations},
                        {"exact_solves", r.exact_solves},
                        {"coarse_solves", r.coarse_solves},
                        {"wall_seconds", r.wall_seconds}});
    }
    write_json(dir / "ablation.json", p.cfg,
               {{"config", config_to_json(p.cfg)}, {"runs", runs}, {"checks", verdicts_to_json(a.checks)}});
}

inline void cmd_ablate(const RunConfig& cfg) {
    const Problem p = build_problem(cfg);
    write_ablation(p, run_ablation(p), ensure_out(cfg));
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Collects the JSON outputs found in the output directory into report.md
/// and returns the text.
inline std::string cmd_report(const RunConfig& cfg) {
    const std::filesystem::path dir(cfg.out);
    if (!std::filesystem::is_directory(dir)) throw InvalidInput("output directory does not exist: " + cfg.out);
    auto load = [&](const char* name) -> std::optional<nlohmann::json> {
        std::ifstream in(dir / name);
        if (!in) return std::nullopt;
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::parse_error&) {
            throw InvalidInput(std::string("malformed ") + name);
        }
        return j;
    };
    std::ostringstream md;
    md << "<!-- " << csv_header_line(cfg) << " -->\n# daebayes run report\n\n";
    bool any = false;
    if (const auto id = load("identify.json")) {
        any = true;
        md << "## Co-identifiability\n\n|   | M | D | r | x |\n|---|---|---|---|---|\n";
        const Matrix I = matrix_from_json(id->at("coid"));
        for (Index a = 0; a < 4; ++a) {
            md << "| " << kClassNames[static_cast<std::size_t>(a)] << " |";
            for (Index b = 0; b < 4; ++b) md << ' ' << std::fixed << std::setprecision(3) << I(a, b) << " |";
            md << '\n';
        }
        md << "\nI_rx / max generator-network cross index: " << std::setprecision(2) << rx_dominance(I) << "\n\n";
    }
    auto checks = [&](const nlohmann::json& j) {
        for (const auto& c : j.at("checks"))
            md << "- " << (c.at("pass").get<bool>() ? "PASS " : "FAIL ") << c.at("check").get<std::string>() << ": "
               << c.at("detail").get<std::string>() << '\n';
        md << '\n';
    };
    if (const auto est = load("report.json")) {
        any = true;
        md << "## Estimate (" << est->at("mode").get<std::string>() << ", " << est->at("variant").get<std::string>()
           << ")\n\n| param | mean | 95% CI | truth | rel. err |\n|---|---|---|---|---|\n";
        for (const auto& q : est->at("summary").at("params")) {
            if (!q.at("active").get<bool>()) continue;
            md << "| " << q.at("name").get<std::string>() << " | " << std::setprecision(5) << std::defaultfloat
               << q.at("mean").get<double>() << " | [" << q.at("q025").get<double>() << ", "
               << q.at("q975").get<double>() << "] | " << q.value("truth", 0.0) << " | " << std::fixed
               << std::setprecision(2) << 100.0 * q.value("rel_err", 0.0) << "% |\n";
        }
        md << "\nexact solves " << est->at("exact_solves").get<Index>() << " of " << est->at("iterations").get<Index>()
           << " iterations, " << std::setprecision(1) << est->at("wall_seconds").get<double>() << " s\n\n";
        checks(*est);
    }
    if (const auto ab = load("ablation.json")) {
        any = true;
        md << "## Ablation\n\n| variant | exact solves | time (s) | M mean/max | D mean/max | r mean/max | x mean/max |\n"
              "|---|---|---|---|---|---|---|\n";
        for (const auto& r : ab->at("runs")) {
            md << "| " << r.at("variant").get<std::string>() << " | " << r.at("exact_solves").get<Index>() << " | "
               << std::fixed << std::setprecision(1) << r.at("wall_seconds").get<double>() << " |";
            for (const char* c : kClassNames) {
                const auto& k = r.at("summary").at("classes").at(c);
                md << ' ' << std::setprecision(2) << 100.0 * k.at("mean_err").get<double>() << "/"
                   << 100.0 * k.at("max_err").get<double>() << "% |";
            }
            md << '\n';
        }
        md << '\n';
        checks(*ab);
    }
    if (!any) throw InvalidInput("no results found in " + cfg.out);
    std::ofstream out(dir / "report.md");
    out << md.str();
    return md.str();
}

}  // namespace daebayes
