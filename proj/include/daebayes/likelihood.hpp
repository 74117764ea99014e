#pragma once

// Residuals, the segmented multi-experiment Gaussian likelihood and the
// exact / coarse log-posteriors in standardized coordinates.

#include "daebayes/dae.hpp"
#include "daebayes/experiments.hpp"
#include "daebayes/params.hpp"
#include "daebayes/types.hpp"

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace daebayes {

struct FidelityLevel {
    double dt = 0.01;
    int decim = 16;
    double newton_tol = 1e-10;
};

struct FidelityConfig {
    FidelityLevel exact{0.01, 16, 1e-10};
    // The coarse integrator also doubles its step; only fit-grid times are sampled.
    FidelityLevel coarse{0.02, 24, 1e-7};

    const FidelityLevel& at(Fidelity f) const { return f == Fidelity::Exact ? exact : coarse; }
    void validate() const {
        if (!(coarse.decim > exact.decim)) throw InvalidInput("coarse decimation must exceed the exact one");
        for (const auto* l : {&exact, &coarse})
            if (!(l->dt > 0.0) || !(l->newton_tol > 0.0) || l->decim < 1)
                throw InvalidInput("fidelity levels need dt > 0, tol > 0, decim >= 1");
    }
};

/// Fit-grid indices used at each fidelity: all of them for the exact level,
/// floor(m * coarse/exact) for the coarse level (nearest lower fit point).
inline std::vector<Index> fidelity_indices(const FidelityConfig& fc, Fidelity f, double horizon, double base_dt) {
    const Index n_exact = static_cast<Index>(std::floor(horizon / base_dt / fc.exact.decim + 1e-9)) + 1;
    std::vector<Index> idx;
    if (f == Fidelity::Exact) {
        for (Index k = 0; k < n_exact; ++k) idx.push_back(k);
        return idx;
    }
    const Index n_coarse = static_cast<Index>(std::floor(horizon / base_dt / fc.coarse.decim + 1e-9)) + 1;
    for (Index m = 0; m < n_coarse; ++m) {
        const auto k = static_cast<Index>(std::floor(static_cast<double>(m * fc.coarse.decim) / fc.exact.decim + 1e-9));
        if (k < n_exact && (idx.empty() || k > idx.back())) idx.push_back(k);
    }
    return idx;
}

struct PosteriorEval {
    double log_post = -kInf;
    double log_like = -kInf;
    double log_prior = -kInf;
    Fidelity fidelity = Fidelity::Exact;
    bool feasible = false;
    Index n_forward_solves = 0;
    std::optional<FailureKind> failure;
};

/// -1/2 sum_e sum_k sum_j w_jk r_jk^2 / sigma_j^2 over the given columns.
inline double log_likelihood(const std::vector<Matrix>& residuals, const std::vector<MeasurementSet>& data,
                             const std::vector<Index>& columns) {
    if (residuals.size() != data.size()) throw InvalidInput("log_likelihood: experiment count mismatch");
    double sum = 0.0;
    for (std::size_t e = 0; e < data.size(); ++e) {
        const Matrix& r = residuals[e];
        const MeasurementSet& m = data[e];
        if (r.rows() != m.sigma_eff.size() || r.cols() != static_cast<Index>(columns.size()))
            throw InvalidInput("log_likelihood: residual shape mismatch");
        const Vector inv_var = m.sigma_eff.array().square().inverse();
        for (Index c = 0; c < r.cols(); ++c) {
            const Index k = columns[static_cast<std::size_t>(c)];
            sum += (m.weights.col(k).array() * r.col(c).array().square() * inv_var.array()).sum();
        }
    }
    return -0.5 * sum;
}

/// The Gaussian normalizing term -1/2 sum log(2 pi sigma^2) over every
/// observation, which the sampler drops.
inline double gaussian_log_normalizer(const std::vector<MeasurementSet>& data) {
    double s = 0.0;
    for (const auto& m : data)
        s += -0.5 * static_cast<double>(m.n_times()) * (2.0 * kPi * m.sigma_eff.array().square()).log().sum();
    return s;
}

class PhysicsPosterior {
public:
    struct Context {
        ParamVector theta;
        std::shared_ptr<const DaeModel> model;
        OperatingPoint op;
    };

    PhysicsPosterior(NetworkCase c, PriorSpec prior, std::vector<MeasurementSet> data, ChannelLayout channels,
                     GridSpec grid = {}, FidelityConfig fidelity = {})
        : case_(std::make_shared<const NetworkCase>(std::move(c))),
          prior_(std::move(prior)),
          data_(std::move(data)),
          channels_(std::move(channels)),
          grid_(grid),
          fidelity_(fidelity) {
        fidelity_.validate();
        if (data_.empty()) throw InvalidInput("no experiments");
        if (prior_.size() != case_->n_theta()) throw InvalidInput("prior dimension does not match the case");
        for (const auto& m : data_) {
            if (m.n_times() != grid_.n_points() || m.y.rows() != channels_.size())
                throw InvalidInput("measurement set does not match the fit grid or channel layout");
        }
        for (Fidelity f : {Fidelity::Exact, Fidelity::Coarse}) {
            const double ratio = grid_.spacing() / fidelity_.at(f).dt;
            if (std::abs(ratio - std::round(ratio)) > 1e-9)
                throw InvalidInput(std::string(to_string(f)) + " step does not divide the fit-grid spacing");
            columns_[f == Fidelity::Exact ? 0 : 1] = fidelity_indices(fidelity_, f, grid_.horizon, grid_.dt);
        }
    }

    Index dimension() const { return prior_.size(); }
    const PriorSpec& prior() const { return prior_; }
    const NetworkCase& network() const { return *case_; }
    const std::vector<MeasurementSet>& data() const { return data_; }
    const ChannelLayout& channels() const { return channels_; }
    const GridSpec& grid() const { return grid_; }
    const FidelityConfig& fidelity() const { return fidelity_; }
    const std::vector<Index>& columns(Fidelity f) const { return columns_[f == Fidelity::Exact ? 0 : 1]; }

    bool in_box(const Vector& eta) const { return prior_.in_box(eta); }

    /// Stage 0: equilibrium at theta(eta); nullopt when the power flow fails.
    std::optional<Context> screen(const Vector& eta) const {
        Context ctx;
        ctx.theta = to_physical(eta, prior_);
        try {
            ctx.model = std::make_shared<const DaeModel>(*case_, ctx.theta);
            ctx.op = solve_equilibrium(*ctx.model, base_loads(*case_));
        } catch (const SolverFailure&) {
            return std::nullopt;
        }
        return ctx;
    }

    /// Predicted channels at the fidelity's fit-grid columns, one matrix per
    /// experiment. Throws SolverFailure; `solves` counts integrations tried.
    std::vector<Matrix> predict(const Context& ctx, Fidelity f, Index* solves = nullptr) const {
        const FidelityLevel& lvl = fidelity_.at(f);
        SolverConfig sc;
        sc.dt = lvl.dt;
        sc.newton_tol = lvl.newton_tol;
        sc.fidelity = f;
        const auto& cols = columns(f);
        std::vector<Matrix> out;
        for (const auto& m : data_) {
            if (solves) ++*solves;
            const Trajectory tr =
                integrate(*ctx.model, ctx.op, LoadProfile(ctx.op.loads, m.schedule), grid_.horizon, sc, channels_);
            Matrix pred(channels_.size(), static_cast<Index>(cols.size()));
            for (std::size_t c = 0; c < cols.size(); ++c) {
                const Index n = tr.find(m.times[static_cast<std::size_t>(cols[c])]);
                if (n < 0) throw InvalidInput("fit-grid time missing from the integration grid");
                pred.col(static_cast<Index>(c)) = tr.channels.col(n);
            }
            out.push_back(std::move(pred));
        }
        return out;
    }

    std::vector<Matrix> residuals(const Context& ctx, Fidelity f, Index* solves = nullptr) const {
        std::vector<Matrix> pred = predict(ctx, f, solves);
        const auto& cols = columns(f);
        for (std::size_t e = 0; e < data_.size(); ++e)
            for (std::size_t c = 0; c < cols.size(); ++c)
                pred[e].col(static_cast<Index>(c)) = data_[e].y.col(cols[c]) - pred[e].col(static_cast<Index>(c));
        return pred;
    }

    /// Residuals at eta; throws SolverFailure when infeasible.
    std::vector<Matrix> residuals(const Vector& eta, Fidelity f) const {
        const auto ctx = screen(eta);
        if (!ctx) throw SolverFailure(FailureKind::PfDiverged, "infeasible parameter point");
        return residuals(*ctx, f);
    }

    /// Stacked sqrt(w) r / sigma_eff at the exact fidelity, experiment-major,
    /// then time, then channel. `mask` restricts the channel set.
    Vector standardized_residuals(const Context& ctx, const std::vector<bool>& mask = {}) const {
        const auto res = residuals(ctx, Fidelity::Exact);
        return standardize(res, mask);
    }

    Vector standardize(const std::vector<Matrix>& res, const std::vector<bool>& mask = {}) const {
        Index p_used = 0;
        for (Index j = 0; j < channels_.size(); ++j) p_used += mask.empty() || mask[static_cast<std::size_t>(j)];
        const auto& cols = columns(Fidelity::Exact);
        Vector out(static_cast<Index>(data_.size() * cols.size()) * p_used);
        Index row = 0;
        for (std::size_t e = 0; e < data_.size(); ++e) {
            for (std::size_t c = 0; c < cols.size(); ++c) {
                for (Index j = 0; j < channels_.size(); ++j) {
                    if (!mask.empty() && !mask[static_cast<std::size_t>(j)]) continue;
                    out[row++] = std::sqrt(data_[e].weights(j, cols[c])) * res[e](j, static_cast<Index>(c)) /
                                 data_[e].sigma_eff[j];
                }
            }
        }
        return out;
    }

    /// Log-posterior after a successful Stage 0; -inf on integration failure.
    PosteriorEval evaluate(const Vector& eta, const Context& ctx, Fidelity f) const {
        PosteriorEval ev;
        ev.fidelity = f;
        ev.log_prior = log_prior(eta, prior_);
        try {
            const auto res = residuals(ctx, f, &ev.n_forward_solves);
            ev.log_like = log_likelihood(res, data_, columns(f));
        } catch (const SolverFailure& e) {
            ev.failure = e.kind();
            ev.log_like = -kInf;
            return ev;
        }
        ev.feasible = std::isfinite(ev.log_like) && std::isfinite(ev.log_prior);
        ev.log_post = ev.feasible ? ev.log_like + ev.log_prior : -kInf;
        return ev;
    }

    /// Box gate, Stage 0, then the forward evaluation.
    PosteriorEval log_posterior(const Vector& eta, Fidelity f) const {
        PosteriorEval ev;
        ev.fidelity = f;
        if (eta.size() != dimension()) throw InvalidInput("log_posterior: dimension mismatch");
        if (!in_box(eta)) return ev;
        const auto ctx = screen(eta);
        if (!ctx) {
            ev.failure = FailureKind::PfDiverged;
            ev.log_prior = log_prior(eta, prior_);
            return ev;
        }
        return evaluate(eta, *ctx, f);
    }

    /// Exact data log-likelihood including the Gaussian normalizer.
    double full_data_log_likelihood(const Vector& eta) const {
        const PosteriorEval ev = log_posterior(eta, Fidelity::Exact);
        if (!ev.feasible) return -kInf;
        return ev.log_like + gaussian_log_normalizer(data_);
    }

private:
    std::shared_ptr<const NetworkCase> case_;
    PriorSpec prior_;
    std::vector<MeasurementSet> data_;
    ChannelLayout channels_;
    GridSpec grid_;
    FidelityConfig fidelity_;
    std::vector<Index> columns_[2];
};

}  // namespace daebayes
