#pragma once

// Finite-difference measurement Jacobians in eta, Gauss-Newton curvature,
// the block co-identifiability map, and the forward sensitivity system used
// to validate the finite differences.

#include "daebayes/dae.hpp"
#include "daebayes/likelihood.hpp"
#include "daebayes/params.hpp"
#include "daebayes/types.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <vector>

namespace daebayes {

struct FdJacobian {
    Matrix J;              // rows: stacked standardized residuals
    Vector r0;             // residual at the reference point
    Index one_sided = 0;   // columns with an infeasible neighbour
    Index dropped = 0;     // columns with both neighbours infeasible (left zero)
};

/// Central differences of the stacked standardized residual map in eta.
/// `coords` selects the columns (all when empty); `mask` the channels.
inline FdJacobian fd_jacobian(const PhysicsPosterior& post, const Vector& eta, double h = 1e-4,
                              const std::vector<Index>& coords = {}, const std::vector<bool>& mask = {}) {
    std::vector<Index> cols = coords;
    if (cols.empty())
        for (Index i = 0; i < post.dimension(); ++i) cols.push_back(i);
    auto eval = [&](const Vector& e) -> std::optional<Vector> {
        const auto ctx = post.screen(e);
        if (!ctx) return std::nullopt;
        try {
            return post.standardized_residuals(*ctx, mask);
        } catch (const SolverFailure&) {
            return std::nullopt;
        }
    };
    FdJacobian out;
    const auto r0 = eval(eta);
    if (!r0) throw SolverFailure(FailureKind::PfDiverged, "fd_jacobian: reference point is infeasible");
    out.r0 = *r0;
    out.J = Matrix::Zero(r0->size(), static_cast<Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
        Vector ep = eta, em = eta;
        ep[cols[c]] += h;
        em[cols[c]] -= h;
        const auto rp = eval(ep), rm = eval(em);
        const auto k = static_cast<Index>(c);
        if (rp && rm) {
            out.J.col(k) = (*rp - *rm) / (2.0 * h);
        } else if (rp) {
            out.J.col(k) = (*rp - out.r0) / h;
            ++out.one_sided;
        } else if (rm) {
            out.J.col(k) = (out.r0 - *rm) / h;
            ++out.one_sided;
        } else {
            ++out.dropped;
        }
    }
    return out;
}

/// H = J^T J, symmetrized.
inline Matrix gauss_newton_curvature(const Matrix& J) {
    if (!J.allFinite()) throw InvalidInput("gauss_newton_curvature: non-finite Jacobian");
    Matrix H = J.transpose() * J;
    return 0.5 * (H + H.transpose());
}

/// I_XY = ||H_XY||_F / sqrt(||H_XX||_F ||H_YY||_F).
inline Matrix co_identifiability(const Matrix& H, const std::vector<std::vector<Index>>& blocks) {
    const auto nb = static_cast<Index>(blocks.size());
    std::vector<int> seen(static_cast<std::size_t>(H.rows()), 0);
    for (const auto& b : blocks)
        for (Index i : b) {
            if (i < 0 || i >= H.rows()) throw InvalidInput("co_identifiability: block index out of range");
            ++seen[static_cast<std::size_t>(i)];
        }
    for (int s : seen)
        if (s != 1) throw InvalidInput("co_identifiability: blocks must partition the parameters");
    auto sub = [&](const std::vector<Index>& a, const std::vector<Index>& b) {
        double s = 0.0;
        for (Index i : a)
            for (Index j : b) s += H(i, j) * H(i, j);
        return std::sqrt(s);
    };
    Vector diag(nb);
    for (Index x = 0; x < nb; ++x) {
        diag[x] = sub(blocks[static_cast<std::size_t>(x)], blocks[static_cast<std::size_t>(x)]);
        if (!(diag[x] > 0.0)) throw InvalidInput("co-identifiability index undefined: zero diagonal block");
    }
    Matrix I = Matrix::Identity(nb, nb);
    for (Index x = 0; x < nb; ++x)
        for (Index y = x + 1; y < nb; ++y) {
            I(x, y) = I(y, x) = sub(blocks[static_cast<std::size_t>(x)], blocks[static_cast<std::size_t>(y)]) /
                                std::sqrt(diag[x] * diag[y]);
        }
    return I;
}

/// Class blocks {M, D, r, x} in that order.
inline std::vector<std::vector<Index>> class_blocks(const ParamLayout& layout) {
    std::vector<std::vector<Index>> b;
    for (ParamClass c : kParamClasses) b.push_back(layout.indices(c));
    return b;
}

struct CurvatureReport {
    Matrix J_eta;
    Matrix H;
    std::vector<std::vector<Index>> blocks;
    Matrix I;
    Vector reference_eta;
    Index one_sided = 0;
};

inline CurvatureReport curvature_report(const PhysicsPosterior& post, const Vector& eta, double h = 1e-4) {
    CurvatureReport rep;
    const FdJacobian fd = fd_jacobian(post, eta, h);
    rep.J_eta = fd.J;
    rep.H = gauss_newton_curvature(fd.J);
    rep.blocks = class_blocks(ParamLayout(post.network()));
    rep.I = co_identifiability(rep.H, rep.blocks);
    rep.reference_eta = eta;
    rep.one_sided = fd.one_sided + fd.dropped;
    return rep;
}

// ---------------------------------------------------------------------------
// Forward sensitivities
// ---------------------------------------------------------------------------

struct SensitivityRun {
    Trajectory trajectory;
    std::vector<Matrix> S_d;  // per node, n_d x n_theta
    std::vector<Matrix> S_a;  // per node, n_a x n_theta
    Matrix S_u;               // d[T_ref; E_fd] / d theta
    double max_constraint_residual = 0.0;
};

/// d(x*, u*)/d theta from the equilibrium conditions bordered by the
/// power-flow specification (slack angle, generator voltages, non-slack
/// dispatch), which fixes the rotational and setpoint freedoms.
inline Matrix initial_sensitivities(const DaeModel& model, const OperatingPoint& op) {
    const NetworkCase& c = model.network();
    const StateLayout& L = model.layout();
    const Index nd = L.n_d(), na = L.n_a(), nu = 2 * L.n_gen, n = nd + na + nu;
    const Index nth = model.theta().size();
    Matrix K = Matrix::Zero(n, n);
    Matrix J;
    model.jacobian(op.xd, op.xa, J);
    K.topLeftCorner(nd + na, nd + na) = J;
    K.block(0, nd + na, nd, nu) = model.f_setpoints();
    Index row = nd + na;
    K(row++, nd + L.ang(c.slack_bus())) = 1.0;
    for (Index g = 0; g < L.n_gen; ++g) K(row++, nd + L.v(model.gen(g).bus)) = 1.0;
    for (Index g = 1; g < L.n_gen; ++g) K(row++, nd + L.pg(g)) = 1.0;
    Matrix rhs = Matrix::Zero(n, nth);
    rhs.topRows(nd) = -model.f_theta(op.xd, op.xa, op.setpoints);
    rhs.middleRows(nd, na) = -model.g_theta(op.xa);
    const Eigen::FullPivLU<Matrix> lu(K);
    if (!lu.isInvertible()) throw SolverFailure(FailureKind::SensitivitySingular, "bordered equilibrium system");
    return lu.solve(rhs);
}

/// Trapezoidal integration of the Schur-reduced sensitivity ODE
/// S_d' = A S_d + B along a trajectory, with S_a from the algebraic rows.
inline SensitivityRun integrate_sensitivities(const DaeModel& model, const OperatingPoint& op,
                                              const LoadProfile& profile, double horizon, const SolverConfig& cfg,
                                              const ChannelLayout& channels) {
    const StateLayout& L = model.layout();
    const Index nd = L.n_d(), na = L.n_a();
    SensitivityRun run;
    run.trajectory = integrate(model, op, profile, horizon, cfg, channels);
    const Trajectory& tr = run.trajectory;

    const Matrix S0 = initial_sensitivities(model, op);
    run.S_u = S0.bottomRows(2 * L.n_gen);
    const Matrix fu_Su = model.f_setpoints() * run.S_u;

    struct Local {
        Matrix A, B, gxd, gth;
        Eigen::PartialPivLU<Matrix> gxa;
    };
    Matrix J;
    auto local = [&](Index n, const Vector& xa) {
        const Vector xd = tr.states.col(n).head(nd);
        model.jacobian(xd, xa, J);
        Local l;
        l.gxa.compute(J.block(nd, nd, na, na));
        if (!(l.gxa.rcond() > 1e-14)) throw SolverFailure(FailureKind::SensitivitySingular, "g_xa singular");
        l.gxd = J.block(nd, 0, na, nd);
        l.gth = model.g_theta(xa);
        const Matrix fxa = J.block(0, nd, nd, na);
        l.A = J.topLeftCorner(nd, nd) - fxa * l.gxa.solve(l.gxd);
        l.B = model.f_theta(xd, xa, op.setpoints) + fu_Su - fxa * l.gxa.solve(l.gth);
        return l;
    };
    auto recover = [&](const Local& l, const Matrix& Sd, Matrix& Sa) {
        Sa = -l.gxa.solve(l.gxd * Sd + l.gth);
        const Matrix& Gxa = l.gxa.reconstructedMatrix();
        run.max_constraint_residual =
            std::max(run.max_constraint_residual, (l.gxd * Sd + Gxa * Sa + l.gth).cwiseAbs().maxCoeff());
    };

    const Index nn = tr.size();
    run.S_d.resize(static_cast<std::size_t>(nn));
    run.S_a.resize(static_cast<std::size_t>(nn));
    run.S_d[0] = S0.topRows(nd);
    // A step arriving at a load jump ends on the left limit of x_a.
    std::vector<const Vector*> left(static_cast<std::size_t>(nn), nullptr);
    for (const auto& [n, xa] : tr.pre_jump) left[static_cast<std::size_t>(n)] = &xa;
    auto xa_at = [&](Index n) -> Vector { return tr.states.col(n).tail(na); };

    Local cur = local(0, xa_at(0));
    recover(cur, run.S_d[0], run.S_a[0]);
    const Matrix I = Matrix::Identity(nd, nd);
    for (Index n = 0; n + 1 < nn; ++n) {
        const double h = tr.times[static_cast<std::size_t>(n + 1)] - tr.times[static_cast<std::size_t>(n)];
        const Vector* lim = left[static_cast<std::size_t>(n + 1)];
        Local next = local(n + 1, lim ? *lim : xa_at(n + 1));
        const Matrix& S = run.S_d[static_cast<std::size_t>(n)];
        const Matrix rhs = S + 0.5 * h * (cur.A * S + cur.B + next.B);
        run.S_d[static_cast<std::size_t>(n + 1)] = (I - 0.5 * h * next.A).partialPivLu().solve(rhs);
        if (lim) next = local(n + 1, xa_at(n + 1));
        recover(next, run.S_d[static_cast<std::size_t>(n + 1)], run.S_a[static_cast<std::size_t>(n + 1)]);
        cur = std::move(next);
    }
    return run;
}

/// d y / d theta at node n (p x n_theta).
inline Matrix measurement_sensitivity(const SensitivityRun& run, const DaeModel& model, const ChannelLayout& ch,
                                      Index n) {
    const StateLayout& L = model.layout();
    const Vector xa = run.trajectory.states.col(n).tail(L.n_a());
    const Matrix Hx = measure_jacobian(L, ch, model.network().omega_s(), xa);
    Matrix S(L.n_x(), model.theta().size());
    S << run.S_d[static_cast<std::size_t>(n)], run.S_a[static_cast<std::size_t>(n)];
    return Hx * S;
}

}  // namespace daebayes
