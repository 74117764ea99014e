#pragma once

// Blocked adaptive Metropolis proposals in eta, the three-stage
// multifidelity delayed-acceptance kernel, chain driver, posterior
// summaries and the stagewise least-squares initializer.
//
// The kernel is generic over a Target with
//   Index dimension() const;
//   bool in_box(const Vector&) const;
//   std::optional<Ctx> screen(const Vector&) const;          // Stage 0
//   V evaluate(const Vector&, const Ctx&, Fidelity) const;   // V = double or PosteriorEval

#include "daebayes/identifiability.hpp"
#include "daebayes/likelihood.hpp"
#include "daebayes/params.hpp"
#include "daebayes/rng.hpp"
#include "daebayes/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace daebayes {

struct BlockPartition {
    std::vector<std::vector<Index>> blocks;
    std::vector<std::string> names;
    std::vector<bool> frozen;

    Index size() const { return static_cast<Index>(blocks.size()); }

    /// Cyclic order over unfrozen blocks.
    std::vector<Index> schedule() const {
        std::vector<Index> s;
        for (Index b = 0; b < size(); ++b)
            if (!frozen[static_cast<std::size_t>(b)]) s.push_back(b);
        return s;
    }

    void validate(Index dim) const {
        std::vector<int> seen(static_cast<std::size_t>(dim), 0);
        for (const auto& b : blocks)
            for (Index i : b) {
                if (i < 0 || i >= dim) throw InvalidInput("block index out of range");
                ++seen[static_cast<std::size_t>(i)];
            }
        for (int s : seen)
            if (s != 1) throw InvalidInput("blocks must be a disjoint cover of the parameters");
        if (schedule().empty()) throw InvalidInput("all blocks are frozen");
    }
};

/// dyn = (M, D), res = r, rea = x.
inline BlockPartition default_blocks(const ParamLayout& layout) {
    BlockPartition p;
    std::vector<Index> dyn = layout.indices(ParamClass::M);
    const auto d = layout.indices(ParamClass::D);
    dyn.insert(dyn.end(), d.begin(), d.end());
    p.blocks = {dyn, layout.indices(ParamClass::r), layout.indices(ParamClass::x)};
    p.names = {"dyn", "res", "rea"};
    p.frozen = {false, false, false};
    return p;
}

/// A single block over every unfrozen coordinate of `base`.
inline BlockPartition full_block(const BlockPartition& base) {
    BlockPartition p;
    std::vector<Index> all, pinned;
    for (Index b = 0; b < base.size(); ++b) {
        auto& dst = base.frozen[static_cast<std::size_t>(b)] ? pinned : all;
        dst.insert(dst.end(), base.blocks[static_cast<std::size_t>(b)].begin(),
                   base.blocks[static_cast<std::size_t>(b)].end());
    }
    std::sort(all.begin(), all.end());
    p.blocks.push_back(all);
    p.names.push_back("all");
    p.frozen.push_back(false);
    if (!pinned.empty()) {
        std::sort(pinned.begin(), pinned.end());
        p.blocks.push_back(pinned);
        p.names.push_back("frozen");
        p.frozen.push_back(true);
    }
    return p;
}

inline BlockPartition freeze(BlockPartition p, const std::vector<std::string>& names) {
    for (const auto& n : names) {
        const auto it = std::find(p.names.begin(), p.names.end(), n);
        if (it == p.names.end()) throw InvalidInput("unknown block: " + n);
        p.frozen[static_cast<std::size_t>(it - p.names.begin())] = true;
    }
    return p;
}

inline Matrix submatrix(const Matrix& A, const std::vector<Index>& idx) {
    const auto n = static_cast<Index>(idx.size());
    Matrix S(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) S(i, j) = A(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    return S;
}

/// Lower Cholesky factor, adding 1e-10 trace/d to the diagonal up to three times.
inline std::optional<Matrix> jittered_cholesky(Matrix C) {
    C = 0.5 * (C + C.transpose());
    const double jitter = 1e-10 * std::max(C.trace(), 1e-300) / static_cast<double>(C.rows());
    for (int attempt = 0; attempt <= 3; ++attempt) {
        if (attempt > 0) C.diagonal().array() += jitter;
        Eigen::LLT<Matrix> llt(C);
        if (llt.info() == Eigen::Success) {
            Matrix L = llt.matrixL();
            if ((L.diagonal().array() > 0.0).all() && L.allFinite()) return L;
        }
    }
    return std::nullopt;
}

struct AdaptConfig {
    int n_adapt = 50;
    double a_target = 0.24;
    double c0 = 1.0;
    double t0 = 10.0;
    Index window = 500;
    double beta_max = 0.7;
};

struct ProposalState {
    std::vector<double> scale;    // s_b
    std::vector<Matrix> chol;     // L_b
    std::vector<Matrix> base_cov; // prior-plus-curvature block covariance
    std::vector<Index> accepts, trials;  // current adaptation window
    Index epoch = 0;
};

/// Block covariances (H0_bb + I)^-1 and unit scales.
inline ProposalState init_proposal(const BlockPartition& blocks, const Matrix& H0) {
    ProposalState s;
    for (const auto& b : blocks.blocks) {
        const auto d = static_cast<Index>(b.size());
        Matrix C = (submatrix(H0, b) + Matrix::Identity(d, d)).inverse();
        const auto L = jittered_cholesky(C);
        if (!L) throw InvalidInput("initial block covariance is not positive definite");
        s.base_cov.push_back(C);
        s.chol.push_back(*L);
        s.scale.push_back(1.0);
        s.accepts.push_back(0);
        s.trials.push_back(0);
    }
    return s;
}

/// eta with block b moved by s_b (2.38 / sqrt(d_b)) L_b z.
template <class Rng>
Vector propose(const Vector& eta, const BlockPartition& blocks, Index b, const ProposalState& ps, Rng& rng,
               std::normal_distribution<double>& normal) {
    const auto& idx = blocks.blocks[static_cast<std::size_t>(b)];
    const auto d = static_cast<Index>(idx.size());
    Vector z(d);
    for (Index i = 0; i < d; ++i) z[i] = normal(rng);
    const Vector step = ps.scale[static_cast<std::size_t>(b)] * (2.38 / std::sqrt(static_cast<double>(d))) *
                        (ps.chol[static_cast<std::size_t>(b)] * z);
    Vector out = eta;
    for (Index i = 0; i < d; ++i) out[idx[static_cast<std::size_t>(i)]] += step[i];
    return out;
}

/// Robbins-Monro scale update and covariance blend. `iteration` counts
/// completed iterations; nothing changes after burn-in.
inline void adapt(ProposalState& ps, const BlockPartition& blocks, const std::deque<Vector>& history,
                  Index iteration, Index n_burn, const AdaptConfig& cfg) {
    if (iteration > n_burn || iteration == 0 || iteration % cfg.n_adapt != 0) return;
    const double gamma = cfg.c0 / (1.0 + static_cast<double>(ps.epoch) / cfg.t0);
    for (Index b = 0; b < blocks.size(); ++b) {
        const auto bs = static_cast<std::size_t>(b);
        if (blocks.frozen[bs]) continue;
        if (ps.trials[bs] > 0) {
            const double rate = static_cast<double>(ps.accepts[bs]) / static_cast<double>(ps.trials[bs]);
            ps.scale[bs] *= std::exp(gamma * (rate - cfg.a_target));
        }
        ps.accepts[bs] = ps.trials[bs] = 0;
        const auto& idx = blocks.blocks[bs];
        const auto d = static_cast<Index>(idx.size());
        const auto n = static_cast<Index>(history.size());
        if (n < 2) continue;
        Matrix X(n, d);
        for (Index k = 0; k < n; ++k)
            for (Index i = 0; i < d; ++i) X(k, i) = history[static_cast<std::size_t>(k)][idx[static_cast<std::size_t>(i)]];
        const Eigen::RowVectorXd mu = X.colwise().mean();
        X.rowwise() -= mu;
        const Matrix emp = X.transpose() * X / static_cast<double>(n - 1);
        const double beta = std::min(cfg.beta_max, static_cast<double>(n) / static_cast<double>(cfg.window));
        if (const auto L = jittered_cholesky(beta * emp + (1.0 - beta) * ps.base_cov[bs])) ps.chol[bs] = *L;
    }
    ++ps.epoch;
}

struct RunLedger {
    std::vector<Index> proposals;  // per block
    std::vector<Index> accepted;   // per block
    Index iterations = 0;
    Index box_rejects = 0;
    Index stage0_rejects = 0;
    Index stage1_accepts = 0;
    Index stage1_rejects = 0;
    Index stage2_accepts = 0;
    Index stage2_rejects = 0;
    Index exact_solves = 0;
    Index coarse_solves = 0;
    Index audits = 0;
    Index audit_mismatches = 0;
    double wall_seconds = 0.0;

    Index total_proposals() const {
        Index s = 0;
        for (Index p : proposals) s += p;
        return s;
    }
    Index total_accepted() const { return stage2_accepts; }
    double acceptance() const {
        return iterations ? static_cast<double>(stage2_accepts) / static_cast<double>(iterations) : 0.0;
    }
    /// Reduction of exact solves relative to one per iteration.
    double exact_reduction() const {
        return iterations ? 1.0 - static_cast<double>(exact_solves) / static_cast<double>(iterations) : 0.0;
    }
    bool consistent() const {
        return total_proposals() == box_rejects + stage0_rejects + stage1_accepts + stage1_rejects &&
               stage1_accepts == stage2_accepts + stage2_rejects && exact_solves == stage1_accepts + 1 &&
               total_proposals() == iterations;
    }

    nlohmann::json to_json(const BlockPartition& blocks) const {
        nlohmann::json per = nlohmann::json::object();
        for (std::size_t b = 0; b < proposals.size(); ++b)
            per[blocks.names[b]] = {{"proposals", proposals[b]}, {"accepted", accepted[b]}};
        const double s1 = stage1_accepts + stage1_rejects;
        return {{"iterations", iterations},
                {"blocks", per},
                {"box_rejects", box_rejects},
                {"stage0_rejects", stage0_rejects},
                {"stage1_accepts", stage1_accepts},
                {"stage1_rejects", stage1_rejects},
                {"stage2_accepts", stage2_accepts},
                {"stage2_rejects", stage2_rejects},
                {"exact_solves", exact_solves},
                {"coarse_solves", coarse_solves},
                {"stage1_acceptance", s1 > 0 ? stage1_accepts / s1 : 0.0},
                {"stage2_acceptance", stage1_accepts ? static_cast<double>(stage2_accepts) / stage1_accepts : 0.0},
                {"overall_acceptance", acceptance()},
                {"exact_solve_reduction", exact_reduction()},
                {"audits", audits},
                {"audit_mismatches", audit_mismatches},
                {"wall_seconds", wall_seconds}};
    }
};

namespace detail {
inline double value_of(double v) { return v; }
inline double value_of(const PosteriorEval& e) { return e.log_post; }

/// exp(a) capped at 1 with -inf handled.
inline double accept_prob(double log_ratio) {
    if (std::isnan(log_ratio) || log_ratio == -kInf) return 0.0;
    return log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
}
}  // namespace detail

struct ChainState {
    Vector eta;
    double exact = -kInf;   // exact log-posterior at eta
    double coarse = -kInf;  // coarse log-posterior at eta
};

enum class KernelMode { DelayedAcceptance, ExactOnly };

/// One Metropolis step. u1 drives Stage 1 (or the single exact test), u2 Stage 2.
template <class Target>
bool da_step(const Target& target, ChainState& state, const Vector& candidate, KernelMode mode, double u1, double u2,
             RunLedger& ledger) {
    if (!target.in_box(candidate)) {
        ++ledger.box_rejects;
        return false;
    }
    const auto ctx = target.screen(candidate);
    if (!ctx) {
        ++ledger.stage0_rejects;
        return false;
    }
    double coarse = state.coarse;
    double log_ratio;
    if (mode == KernelMode::DelayedAcceptance) {
        coarse = detail::value_of(target.evaluate(candidate, *ctx, Fidelity::Coarse));
        ++ledger.coarse_solves;
        const double a1 = detail::accept_prob(coarse - state.coarse);
        if (!(u1 < a1)) {
            ++ledger.stage1_rejects;
            return false;
        }
        ++ledger.stage1_accepts;
        const double exact = detail::value_of(target.evaluate(candidate, *ctx, Fidelity::Exact));
        ++ledger.exact_solves;
        log_ratio = exact == -kInf ? -kInf : (exact - state.exact) - (coarse - state.coarse);
        if (!(u2 < detail::accept_prob(log_ratio))) {
            ++ledger.stage2_rejects;
            return false;
        }
        ++ledger.stage2_accepts;
        state = {candidate, exact, coarse};
        return true;
    }
    ++ledger.stage1_accepts;
    const double exact = detail::value_of(target.evaluate(candidate, *ctx, Fidelity::Exact));
    ++ledger.exact_solves;
    if (!(u1 < detail::accept_prob(exact - state.exact))) {
        ++ledger.stage2_rejects;
        return false;
    }
    ++ledger.stage2_accepts;
    state = {candidate, exact, coarse};
    return true;
}

struct SamplerConfig {
    Index n_burn = 3000;
    Index n_samp = 2000;
    Index n_thin = 2;
    AdaptConfig adapt;
    KernelMode mode = KernelMode::DelayedAcceptance;
    Index audit_every = 500;

    Index total_iterations() const { return n_burn + n_samp * n_thin; }
};

inline SamplerConfig budget_short() {
    SamplerConfig c;
    c.n_burn = 300;
    c.n_samp = 200;
    c.n_thin = 1;
    return c;
}

inline SamplerConfig budget_full() { return SamplerConfig{}; }

struct ChainResult {
    Matrix samples;               // n_samp x d, eta
    std::vector<double> log_post; // exact log-posterior of each kept sample
    Vector eta0;
    RunLedger ledger;
    ProposalState proposal;
    BlockPartition blocks;
};

/// Runs one chain from eta0. Frozen blocks stay at their eta0 values.
template <class Target>
ChainResult run_chain(const Target& target, const Vector& eta0, const Matrix& H0, const BlockPartition& blocks,
                      const SamplerConfig& cfg, std::uint64_t seed, std::uint64_t chain = 0) {
    const auto t_start = std::chrono::steady_clock::now();
    const Index d = target.dimension();
    blocks.validate(d);
    if (eta0.size() != d || H0.rows() != d || H0.cols() != d) throw InvalidInput("run_chain: dimension mismatch");
    if (cfg.n_samp < 1 || cfg.n_thin < 1 || cfg.n_burn < 0 || cfg.adapt.n_adapt < 1)
        throw InvalidInput("run_chain: invalid budget");

    ChainResult res;
    res.blocks = blocks;
    res.eta0 = eta0;
    res.proposal = init_proposal(blocks, H0);
    res.ledger.proposals.assign(static_cast<std::size_t>(blocks.size()), 0);
    res.ledger.accepted.assign(static_cast<std::size_t>(blocks.size()), 0);
    res.samples.resize(cfg.n_samp, d);

    Philox4x32 prop_rng(seed, streams::kProposal + chain), acc_rng(seed, streams::kAccept + chain);
    std::normal_distribution<double> normal;

    auto fresh = [&](const Vector& eta, ChainState& s) {
        if (!target.in_box(eta)) return false;
        const auto ctx = target.screen(eta);
        if (!ctx) return false;
        s.eta = eta;
        s.exact = detail::value_of(target.evaluate(eta, *ctx, Fidelity::Exact));
        if (cfg.mode == KernelMode::DelayedAcceptance)
            s.coarse = detail::value_of(target.evaluate(eta, *ctx, Fidelity::Coarse));
        return std::isfinite(s.exact) && (cfg.mode == KernelMode::ExactOnly || std::isfinite(s.coarse));
    };

    ChainState state;
    if (!fresh(eta0, state)) throw SolverFailure(FailureKind::PfDiverged, "chain start is infeasible");
    res.ledger.exact_solves = 1;
    res.ledger.coarse_solves = cfg.mode == KernelMode::DelayedAcceptance ? 1 : 0;

    const std::vector<Index> sched = blocks.schedule();
    std::deque<Vector> history;
    Index kept = 0;
    const Index total = cfg.total_iterations();
    for (Index it = 0; it < total; ++it) {
        const Index b = sched[static_cast<std::size_t>(it % static_cast<Index>(sched.size()))];
        const auto bs = static_cast<std::size_t>(b);
        const Vector cand = propose(state.eta, blocks, b, res.proposal, prop_rng, normal);
        const double u1 = acc_rng.uniform(), u2 = acc_rng.uniform();
        ++res.ledger.proposals[bs];
        ++res.ledger.iterations;
        const bool acc = da_step(target, state, cand, cfg.mode, u1, u2, res.ledger);
        if (acc) ++res.ledger.accepted[bs];
        if (it < cfg.n_burn) {
            ++res.proposal.trials[bs];
            if (acc) ++res.proposal.accepts[bs];
            history.push_back(state.eta);
            if (static_cast<Index>(history.size()) > cfg.adapt.window) history.pop_front();
            adapt(res.proposal, blocks, history, it + 1, cfg.n_burn, cfg.adapt);
        } else if ((it - cfg.n_burn + 1) % cfg.n_thin == 0) {
            res.samples.row(kept) = state.eta.transpose();
            res.log_post.push_back(state.exact);
            ++kept;
        }
        if (cfg.audit_every > 0 && (it + 1) % cfg.audit_every == 0) {
            ChainState check;
            ++res.ledger.audits;
            const bool ok = fresh(state.eta, check);
            const auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9 * (1.0 + std::abs(a)); };
            if (!ok || !close(check.exact, state.exact) ||
                (cfg.mode == KernelMode::DelayedAcceptance && !close(check.coarse, state.coarse)))
                ++res.ledger.audit_mismatches;
        }
    }
    res.ledger.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return res;
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

/// Linear-interpolation quantile of a sorted sample.
inline double quantile_sorted(const std::vector<double>& v, double q) {
    if (v.empty()) throw InvalidInput("quantile of an empty sample");
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct ParamSummary {
    std::string name;
    ParamClass cls = ParamClass::M;
    bool active = true;
    double mean = 0, std = 0, q025 = 0, q975 = 0;
    std::optional<double> truth, rel_err;
    std::optional<bool> covered;
};

struct ClassRollup {
    Index count = 0;
    double mean_err = 0.0, max_err = 0.0;
};

struct Summary {
    std::vector<ParamSummary> params;
    std::array<ClassRollup, 4> classes{};
    Index covered = 0, with_truth = 0;
    Vector theta_mean, eta_mean;

    const ClassRollup& of(ParamClass c) const { return classes[static_cast<std::size_t>(c)]; }
};

/// Transforms samples to theta, then aggregates; `active` hides frozen
/// coordinates from the rollups.
inline Summary summarize(const Matrix& eta_samples, const PriorSpec& prior, const ParamLayout& layout,
                         const std::optional<ParamVector>& truth = std::nullopt,
                         const std::vector<bool>& active = {}) {
    if (eta_samples.rows() < 10) throw InvalidInput("summarize needs at least 10 samples");
    const Index n = eta_samples.rows(), d = eta_samples.cols();
    Matrix theta(n, d);
    for (Index k = 0; k < n; ++k) theta.row(k) = to_physical(eta_samples.row(k).transpose(), prior).flat().transpose();
    Summary s;
    s.theta_mean = theta.colwise().mean().transpose();
    s.eta_mean = eta_samples.colwise().mean().transpose();
    const Vector t_true = truth ? truth->flat() : Vector();
    for (Index i = 0; i < d; ++i) {
        ParamSummary p;
        p.name = layout.names[static_cast<std::size_t>(i)];
        p.cls = layout.class_of(i);
        p.active = active.empty() || active[static_cast<std::size_t>(i)];
        std::vector<double> col(theta.col(i).data(), theta.col(i).data() + n);
        p.mean = s.theta_mean[i];
        double var = 0.0;
        for (double v : col) var += (v - p.mean) * (v - p.mean);
        p.std = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0;
        std::sort(col.begin(), col.end());
        if (col.front() == col.back()) {
            p.mean = s.theta_mean[i] = col.front();
            p.std = 0.0;
        }
        p.q025 = quantile_sorted(col, 0.025);
        p.q975 = quantile_sorted(col, 0.975);
        if (truth) {
            p.truth = t_true[i];
            p.rel_err = std::abs(p.mean - t_true[i]) / t_true[i];
            p.covered = t_true[i] >= p.q025 && t_true[i] <= p.q975;
            if (p.active) {
                auto& c = s.classes[static_cast<std::size_t>(p.cls)];
                ++c.count;
                c.mean_err += *p.rel_err;
                c.max_err = std::max(c.max_err, *p.rel_err);
                ++s.with_truth;
                s.covered += *p.covered ? 1 : 0;
            }
        }
        s.params.push_back(p);
    }
    for (auto& c : s.classes)
        if (c.count) c.mean_err /= static_cast<double>(c.count);
    return s;
}

// ---------------------------------------------------------------------------
// Stagewise initialization
// ---------------------------------------------------------------------------

struct InitOptions {
    int stage_a_iters = 8;
    int stage_b_iters = 8;
    int polish_iters = 10;
    int max_halvings = 20;
    bool include_prior = false;  // append eta rows to the objective
    double ridge = 1e-8;
    double fd_step = 1e-4;
    double rel_tol = 1e-8;
};

struct InitResult {
    Vector eta0;
    Vector eta_stage_a, eta_stage_b;
    Matrix H0;
    std::vector<double> objective;  // after every accepted step, all stages
    Index forward_solves = 0;
};

namespace detail {

/// Damped Gauss-Newton on 0.5 ||r(eta)||^2 (+ 0.5 ||eta||^2) over `coords`.
inline Vector gauss_newton(const PhysicsPosterior& post, Vector eta, const std::vector<Index>& coords,
                           const std::vector<bool>& mask, int iters, const InitOptions& opt, InitResult& out) {
    const PriorSpec& prior = post.prior();
    auto objective = [&](const Vector& e) {
        const auto ctx = post.screen(e);
        if (!ctx) return kInf;
        try {
            out.forward_solves += static_cast<Index>(post.data().size());
            const Vector r = post.standardized_residuals(*ctx, mask);
            double v = 0.5 * r.squaredNorm();
            if (opt.include_prior) v += 0.5 * e.squaredNorm();
            return v;
        } catch (const SolverFailure&) {
            return kInf;
        }
    };
    double f = objective(eta);
    if (!std::isfinite(f)) throw SolverFailure(FailureKind::PfDiverged, "stagewise init: infeasible start");
    const auto n = static_cast<Index>(coords.size());
    for (int it = 0; it < iters; ++it) {
        const FdJacobian fd = fd_jacobian(post, eta, opt.fd_step, coords, mask);
        out.forward_solves += 2 * n * static_cast<Index>(post.data().size());
        Matrix A = fd.J.transpose() * fd.J;
        Vector g = fd.J.transpose() * fd.r0;
        if (opt.include_prior) {
            A += Matrix::Identity(n, n);
            for (Index k = 0; k < n; ++k) g[k] += eta[coords[static_cast<std::size_t>(k)]];
        }
        A.diagonal().array() += opt.ridge * (1.0 + A.diagonal().array());
        const Vector step = -A.ldlt().solve(g);
        double t = 1.0;
        bool accepted = false;
        for (int h = 0; h <= opt.max_halvings; ++h, t *= 0.5) {
            Vector trial = eta;
            for (Index k = 0; k < n; ++k) {
                const Index i = coords[static_cast<std::size_t>(k)];
                trial[i] = std::clamp(eta[i] + t * step[k], prior.eta_min[i], prior.eta_max[i]);
            }
            const double ft = objective(trial);
            if (ft < f) {
                const double rel = (f - ft) / std::max(1.0, std::abs(f));
                eta = trial;
                f = ft;
                out.objective.push_back(f);
                accepted = true;
                if (rel < opt.rel_tol) return eta;
                break;
            }
        }
        if (!accepted) break;
    }
    return eta;
}

}  // namespace detail

/// Stage A: (M, D) on frequency channels; Stage B: (r, x) on all channels;
/// then a joint polish. H0 is the Gauss-Newton curvature at the result.
inline InitResult stagewise_init(const PhysicsPosterior& post, const InitOptions& opt = {},
                                 const std::vector<bool>& frozen_coords = {}) {
    const ParamLayout layout(post.network());
    InitResult out;
    auto free_of = [&](std::vector<ParamClass> classes) {
        std::vector<Index> c;
        for (ParamClass k : classes)
            for (Index i : layout.indices(k))
                if (frozen_coords.empty() || !frozen_coords[static_cast<std::size_t>(i)]) c.push_back(i);
        return c;
    };
    std::vector<bool> freq_mask(static_cast<std::size_t>(post.channels().size()));
    for (Index j = 0; j < post.channels().size(); ++j)
        freq_mask[static_cast<std::size_t>(j)] = post.channels().class_of(j) == ChannelClass::Frequency;

    Vector eta = Vector::Zero(post.dimension());
    const auto dyn = free_of({ParamClass::M, ParamClass::D});
    if (!dyn.empty()) eta = detail::gauss_newton(post, eta, dyn, freq_mask, opt.stage_a_iters, opt, out);
    out.eta_stage_a = eta;
    const auto net = free_of({ParamClass::r, ParamClass::x});
    if (!net.empty()) eta = detail::gauss_newton(post, eta, net, {}, opt.stage_b_iters, opt, out);
    out.eta_stage_b = eta;
    const auto all = free_of({ParamClass::M, ParamClass::D, ParamClass::r, ParamClass::x});
    eta = detail::gauss_newton(post, eta, all, {}, opt.polish_iters, opt, out);
    out.eta0 = eta;
    const FdJacobian fd = fd_jacobian(post, eta, opt.fd_step);
    out.forward_solves += 2 * post.dimension() * static_cast<Index>(post.data().size());
    out.H0 = gauss_newton_curvature(fd.J);
    return out;
}

}  // namespace daebayes
