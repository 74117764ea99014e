// One PASS/FAIL line per acceptance criterion. Criterion 8 (full budget)
// runs only when DAEBAYES_FULL=1.

#include "daebayes/pipeline.hpp"
#include "../toy_targets.hpp"

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>

using namespace daebayes;

namespace {

struct Tally {
    bool all = true;
    void line(int n, bool pass, const std::string& detail) {
        std::cout << "criterion " << n << ' ' << (pass ? "PASS" : "FAIL") << ": " << detail << std::endl;
        all = all && pass;
    }
};

std::string num(double v, int prec = 4) {
    std::ostringstream s;
    s << std::setprecision(prec) << v;
    return s.str();
}

std::string pct(double v) { return num(100.0 * v, 3) + "%"; }

Matrix channels_at(const NetworkCase& c, const Vector& theta, const PulseSchedule& s, double dt,
                   const ChannelLayout& ch, const std::vector<double>& times) {
    const DaeModel m(c, ParamVector::from_flat(theta, c.n_gen(), c.n_r(), c.n_x()));
    const OperatingPoint op = solve_equilibrium(m, base_loads(c));
    SolverConfig sc;
    sc.dt = dt;
    return sample_channels(integrate(m, op, LoadProfile(op.loads, s), 10.0, sc, ch), times);
}

void forward_model(Tally& t) {
    const NetworkCase c = builtin_case_ieee9();
    const ChannelLayout ch = default_channels_ieee9();
    double eq_res = 0.0;
    for (const ParamVector& th : {nominal_params(c), draw_truth(c, 1, {}, table_generator_truth_ieee9()).theta_true}) {
        const DaeModel m(c, th);
        const OperatingPoint op = solve_equilibrium(m, base_loads(c));
        eq_res = std::max({eq_res, m.f(op.xd, op.xa, op.setpoints).cwiseAbs().maxCoeff(),
                           m.g(op.xd, op.xa, op.loads).cwiseAbs().maxCoeff()});
    }
    const DaeModel m(c, nominal_params(c));
    const OperatingPoint op = solve_equilibrium(m, base_loads(c));
    const Trajectory tr = integrate(m, op, LoadProfile(op.loads, PulseSchedule{}), 10.0, SolverConfig{}, ch);
    double drift = 0.0;
    for (Index n = 0; n < tr.size(); ++n) {
        Vector x0(op.xd.size() + op.xa.size());
        x0 << op.xd, op.xa;
        drift = std::max(drift, (tr.states.col(n) - x0).cwiseAbs().maxCoeff());
    }
    const PulseSchedule s = default_experiments_ieee9()[0];
    const Vector th = nominal_params(c).flat();
    std::vector<double> times;
    for (int k = 0; k <= 50; ++k) times.push_back(0.2 * k);
    const Matrix ref = channels_at(c, th, s, 0.04 / 64.0, ch, times);
    std::vector<double> err;
    for (double dt : {0.04, 0.02, 0.01}) err.push_back((channels_at(c, th, s, dt, ch, times) - ref).norm());
    const double r1 = err[0] / err[1], r2 = err[1] / err[2];
    const bool ok = eq_res <= 1e-8 && drift <= 1e-6 && r1 > 3.3 && r1 < 4.8 && r2 > 3.3 && r2 < 4.8;
    t.line(1, ok,
           "equilibrium residual " + num(eq_res, 3) + ", 10 s drift " + num(drift, 3) + ", error ratios per dt halving " +
               num(r1) + " / " + num(r2));
}

void sensitivities(Tally& t) {
    const NetworkCase c = builtin_case_ieee9();
    const ChannelLayout ch = default_channels_ieee9();
    const ParamVector theta = nominal_params(c);
    const DaeModel model(c, theta);
    const OperatingPoint op = solve_equilibrium(model, base_loads(c));
    const auto times = GridSpec{}.times();
    const Vector th = theta.flat();
    double worst = 0.0, constraint = 0.0;
    for (const auto& s : default_experiments_ieee9()) {
        const SensitivityRun run = integrate_sensitivities(model, op, LoadProfile(op.loads, s), 10.0, SolverConfig{}, ch);
        constraint = std::max(constraint, run.max_constraint_residual);
        std::vector<Matrix> Y;
        for (double tk : times) Y.push_back(measurement_sensitivity(run, model, ch, run.trajectory.find(tk)));
        for (Index i = 0; i < th.size(); ++i) {
            const double h = 1e-5 * th[i];
            Vector tp = th, tm = th;
            tp[i] += h;
            tm[i] -= h;
            const Matrix fd = (channels_at(c, tp, s, 0.01, ch, times) - channels_at(c, tm, s, 0.01, ch, times)) / (2 * h);
            Matrix an(fd.rows(), fd.cols());
            for (std::size_t k = 0; k < times.size(); ++k) an.col(static_cast<Index>(k)) = Y[k].col(i);
            worst = std::max(worst, (fd - an).norm() / an.norm());
        }
    }
    t.line(2, worst <= 1e-3 && constraint <= 1e-6,
           "max relative column mismatch FD vs variational " + num(worst, 3) + " over 4 experiments x 21 parameters; "
           "algebraic constraint residual " + num(constraint, 3));
}

void da_toy(Tally& t) {
    const toy::GaussianTarget g = toy::correlated_2d();
    BlockPartition b;
    b.blocks = {{0, 1}};
    b.names = {"all"};
    b.frozen = {false};
    SamplerConfig cfg;
    cfg.n_burn = 2000;
    cfg.n_samp = 100000;
    cfg.n_thin = 1;
    const ChainResult r = run_chain(g, Vector::Zero(2), Matrix::Zero(2, 2), b, cfg, 1);
    const Matrix S = g.prec.inverse();
    double worst = 0.0;
    for (Index i = 0; i < 2; ++i) {
        const Vector x = r.samples.col(i);
        worst = std::max(worst, std::abs(x.mean() - g.mu[i]) / toy::batch_se(x));
        for (Index j = i; j < 2; ++j) {
            const Vector p = (r.samples.col(i).array() - g.mu[i]) * (r.samples.col(j).array() - g.mu[j]);
            worst = std::max(worst, std::abs(p.mean() - S(i, j)) / toy::batch_se(p));
        }
    }
    t.line(4, worst <= 3.0 && r.ledger.consistent(),
           "largest |moment error| / MC standard error " + num(worst, 3) + " over 2 means and 3 covariances, " +
               std::to_string(r.ledger.exact_solves) + " exact evaluations in " + std::to_string(r.ledger.iterations) +
               " steps");
}

}  // namespace

int main() {
    Tally t;
    forward_model(t);
    sensitivities(t);

    const Problem p = build_problem(RunConfig{});
    const PhysicsPosterior post = p.posterior();
    const InitResult init = initialize(post, p.cfg, {});
    const CurvatureReport cr = curvature_report(post, init.eta0);
    const Matrix& I = cr.I;
    const double cross = std::max({I(0, 2), I(0, 3), I(1, 2), I(1, 3)});
    t.line(3, I(2, 3) >= 5.0 * cross && I(0, 1) < 0.15,
           "I_rx " + num(I(2, 3), 3) + " vs max cross " + num(cross, 3) + " (I_Mr " + num(I(0, 2), 3) + ", I_Mx " +
               num(I(0, 3), 3) + ", I_Dr " + num(I(1, 2), 3) + ", I_Dx " + num(I(1, 3), 3) + "), ratio " +
               num(I(2, 3) / cross, 3) + " (need >= 5); I_MD " + num(I(0, 1), 3) + " (need < 0.15)");

    da_toy(t);

    const EstimateResult da = run_estimate(p, RunMode::Joint, {"blocked+da", KernelMode::DelayedAcceptance, false}, &init);
    const Summary& s = da.summary;
    const double red = 1.0 - static_cast<double>(da.exact_solves) / static_cast<double>(da.iterations);
    const bool ok5 = s.of(ParamClass::M).mean_err <= 0.05 && s.of(ParamClass::D).max_err <= 0.25 &&
                     s.of(ParamClass::r).mean_err <= 0.10 && s.of(ParamClass::x).mean_err <= 0.10 && red >= 0.40;
    t.line(5, ok5,
           "M mean " + pct(s.of(ParamClass::M).mean_err) + ", D max " + pct(s.of(ParamClass::D).max_err) + ", r mean " +
               pct(s.of(ParamClass::r).mean_err) + ", x mean " + pct(s.of(ParamClass::x).mean_err) +
               ", exact-solve reduction " + pct(red) + ", coverage " + std::to_string(s.covered) + "/21, " +
               num(da.wall_seconds, 3) + " s");

    const EstimateResult ex = run_estimate(p, RunMode::Joint, {"blocked+exact", KernelMode::ExactOnly, false}, &init);
    const double shift = median_mean_shift(ex.summary, da.summary);
    const double ratio = static_cast<double>(da.exact_solves) / static_cast<double>(ex.exact_solves);
    t.line(6, shift <= 0.02 && ratio <= 0.60,
           "median posterior-mean shift " + pct(shift) + ", exact solves " + std::to_string(da.exact_solves) + " vs " +
               std::to_string(ex.exact_solves) + " (" + pct(ratio) + ")");

    const EstimateResult dc = run_estimate(p, RunMode::Decoupled, {"decoupled+da", KernelMode::DelayedAcceptance, false});
    const Index d1 = p.layout().indices(ParamClass::D).front();
    const double ej = *da.summary.params[static_cast<std::size_t>(d1)].rel_err;
    const double ed = *dc.summary.params[static_cast<std::size_t>(d1)].rel_err;
    t.line(7, ed >= 3.0 * ej, "D1 error decoupled " + pct(ed) + " vs joint " + pct(ej) + ", ratio " + num(ed / ej, 3));

    const char* full = std::getenv("DAEBAYES_FULL");
    if (full && std::string(full) == "1") {
        RunConfig fc;
        apply_budget(fc, "full");
        const Problem pf = build_problem(fc);
        const EstimateResult r = run_estimate(pf, RunMode::Joint, {"blocked+da", KernelMode::DelayedAcceptance, false}, &init);
        const Summary& f = r.summary;
        auto within = [&](ParamClass c, double mean, double max) {
            return f.of(c).mean_err <= mean && f.of(c).max_err <= max;
        };
        const double acc = r.chains.front().ledger.acceptance();
        const bool ok = within(ParamClass::M, 0.02, 0.03) && within(ParamClass::D, 0.04, 0.07) &&
                        within(ParamClass::r, 0.05, 0.08) && within(ParamClass::x, 0.02, 0.05) && f.covered >= 18 &&
                        acc >= 0.15 && acc <= 0.35;
        std::ostringstream d;
        for (ParamClass c : kParamClasses)
            d << to_string(c) << " " << pct(f.of(c).mean_err) << "/" << pct(f.of(c).max_err) << ", ";
        d << "coverage " << f.covered << "/21, acceptance " << pct(acc) << ", " << num(r.wall_seconds, 4) << " s";
        t.line(8, ok, d.str());
    } else {
        std::cout << "criterion 8 SKIP: full 7000-iteration budget runs with DAEBAYES_FULL=1" << std::endl;
    }

    t.line(9, da.noise_ratio >= 1e3 && da.noise_ratio <= 1e6,
           "|l_data| / (0.5 ||eta_hat||^2) = " + num(std::abs(da.full_log_like), 4) + " / " +
               num(0.5 * da.summary.eta_mean.squaredNorm(), 4) + " = " + num(da.noise_ratio, 3));
    return t.all ? 0 : 1;
}
