#pragma once

// Semi-explicit index-1 power-system DAE
//
//   xd' = f(xd, xa, u; theta),   0 = g(xd, xa, d; theta)
//
// with a one-axis (flux-decay) machine per generator (x_q = x'_d, zero
// stator resistance, constant field voltage), a first-order governor with
// droop, and constant-PQ loads.
//
// State layout
//   xd = [delta, dw, E', Tm] per generator, interleaved (4 entries each)
//   xa = [P_G, Q_G] per generator, then [V, theta] per bus
// Residual rows of g follow the same layout: two stator rows per generator,
// then active/reactive power balance per bus.

#include "daebayes/grid.hpp"
#include "daebayes/params.hpp"
#include "daebayes/types.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace daebayes {

struct StateLayout {
    Index n_gen = 0, n_bus = 0;

    StateLayout() = default;
    explicit StateLayout(const NetworkCase& c) : n_gen(c.n_gen()), n_bus(c.n_buses) {}

    Index n_d() const { return 4 * n_gen; }
    Index n_a() const { return 2 * n_gen + 2 * n_bus; }
    Index n_x() const { return n_d() + n_a(); }

    // into xd
    static Index delta(Index g) { return 4 * g; }
    static Index dw(Index g) { return 4 * g + 1; }
    static Index eq(Index g) { return 4 * g + 2; }
    static Index tm(Index g) { return 4 * g + 3; }
    // into xa
    static Index pg(Index g) { return 2 * g; }
    static Index qg(Index g) { return 2 * g + 1; }
    Index v(Index bus) const { return 2 * n_gen + 2 * bus; }
    Index ang(Index bus) const { return 2 * n_gen + 2 * bus + 1; }
};

struct Setpoints {
    Vector T_ref;  // per generator
    Vector E_fd;   // per generator
};

struct LoadVector {
    Vector P, Q;  // per bus

    bool operator==(const LoadVector& o) const { return P == o.P && Q == o.Q; }
};

inline LoadVector base_loads(const NetworkCase& c) {
    LoadVector l{Vector(c.n_buses), Vector(c.n_buses)};
    for (Index i = 0; i < c.n_buses; ++i) {
        l.P[i] = c.loads[static_cast<std::size_t>(i)].P;
        l.Q[i] = c.loads[static_cast<std::size_t>(i)].Q;
    }
    return l;
}

enum class Fidelity { Exact, Coarse };

inline const char* to_string(Fidelity f) { return f == Fidelity::Exact ? "exact" : "coarse"; }

struct SolverConfig {
    double dt = 0.01;
    double newton_tol = 1e-10;
    int newton_max_iter = 25;
    Fidelity fidelity = Fidelity::Exact;
};

/// DAE right-hand sides and Jacobians for one parameter vector.
class DaeModel {
public:
    DaeModel(const NetworkCase& c, const ParamVector& theta)
        : case_(&c), layout_(c), theta_(theta), Y_(assemble_ybus(c, theta.r, theta.x)) {
        if (theta.M.size() != c.n_gen() || theta.D.size() != c.n_gen())
            throw InvalidInput("DaeModel: generator parameter dimension mismatch");
        if ((theta.M.array() <= 0).any() || (theta.D.array() <= 0).any())
            throw InvalidInput("DaeModel: nonpositive generator parameter");
    }

    const NetworkCase& network() const { return *case_; }
    const StateLayout& layout() const { return layout_; }
    const ParamVector& theta() const { return theta_; }
    const AdmittanceMatrix& ybus() const { return Y_; }

    Vector f(const Vector& xd, const Vector& xa, const Setpoints& u) const {
        Vector out(layout_.n_d());
        f_into(xd, xa, u, out);
        return out;
    }

    void f_into(const Vector& xd, const Vector& xa, const Setpoints& u, Eigen::Ref<Vector> out) const {
        const auto& L = layout_;
        for (Index g = 0; g < L.n_gen; ++g) {
            const GeneratorSpec& s = gen(g);
            const Index bus = s.bus;
            const double delta = xd[L.delta(g)], dw = xd[L.dw(g)], E = xd[L.eq(g)], Tm = xd[L.tm(g)];
            const double V = xa[L.v(bus)], th = xa[L.ang(bus)], P = xa[L.pg(g)];
            const double id = (E - V * std::cos(delta - th)) / s.xd_prime;
            out[L.delta(g)] = dw;
            out[L.dw(g)] = (Tm - P - theta_.D[g] * dw) / theta_.M[g];
            out[L.eq(g)] = (u.E_fd[g] - E - (s.xd - s.xd_prime) * id) / s.Td0_prime;
            out[L.tm(g)] = (u.T_ref[g] - Tm - dw / s.R_d) / s.T_ch;
        }
    }

    Vector g(const Vector& xd, const Vector& xa, const LoadVector& d) const {
        Vector out(layout_.n_a());
        g_into(xd, xa, d, out);
        return out;
    }

    void g_into(const Vector& xd, const Vector& xa, const LoadVector& d, Eigen::Ref<Vector> out) const {
        const auto& L = layout_;
        const Index n = L.n_bus;
        for (Index g = 0; g < L.n_gen; ++g) {
            const GeneratorSpec& s = gen(g);
            const double E = xd[L.eq(g)];
            const double V = xa[L.v(s.bus)];
            const double phi = xd[L.delta(g)] - xa[L.ang(s.bus)];
            out[L.pg(g)] = xa[L.pg(g)] - E * V * std::sin(phi) / s.xd_prime;
            out[L.qg(g)] = xa[L.qg(g)] - (E * V * std::cos(phi) - V * V) / s.xd_prime;
        }
        for (Index i = 0; i < n; ++i) {
            double Pi = 0.0, Qi = 0.0;
            const double Vi = xa[L.v(i)], ti = xa[L.ang(i)];
            for (Index j = 0; j < n; ++j) {
                const double Gij = Y_.G(i, j), Bij = Y_.B(i, j);
                if (Gij == 0.0 && Bij == 0.0) continue;
                const double tij = ti - xa[L.ang(j)];
                const double c = std::cos(tij), sn = std::sin(tij);
                const double Vj = xa[L.v(j)];
                Pi += Vj * (Gij * c + Bij * sn);
                Qi += Vj * (Gij * sn - Bij * c);
            }
            Pi *= Vi;
            Qi *= Vi;
            double PG = 0.0, QG = 0.0;
            const Index gi = case_->generator_at(i);
            if (gi >= 0) {
                PG = xa[L.pg(gi)];
                QG = xa[L.qg(gi)];
            }
            out[L.v(i) ] = PG - d.P[i] - Pi;
            out[L.ang(i)] = QG - d.Q[i] - Qi;
        }
    }

    /// Writes [f_xd f_xa; g_xd g_xa] into J ((n_d+n_a) square). Loads enter
    /// g additively, so the Jacobian does not depend on them.
    void jacobian(const Vector& xd, const Vector& xa, Matrix& J) const {
        const auto& L = layout_;
        const Index nd = L.n_d();
        J.setZero(L.n_x(), L.n_x());
        for (Index g = 0; g < L.n_gen; ++g) {
            const GeneratorSpec& s = gen(g);
            const Index bus = s.bus;
            const double delta = xd[L.delta(g)], E = xd[L.eq(g)];
            const double V = xa[L.v(bus)], th = xa[L.ang(bus)];
            const double phi = delta - th;
            const double cp = std::cos(phi), sp = std::sin(phi);
            const double M = theta_.M[g], D = theta_.D[g];
            const double c = (s.xd - s.xd_prime) / s.xd_prime;
            // f rows
            J(L.delta(g), L.dw(g)) = 1.0;
            J(L.dw(g), L.tm(g)) = 1.0 / M;
            J(L.dw(g), L.dw(g)) = -D / M;
            J(L.dw(g), nd + L.pg(g)) = -1.0 / M;
            J(L.eq(g), L.eq(g)) = -(1.0 + c) / s.Td0_prime;
            J(L.eq(g), L.delta(g)) = -c * V * sp / s.Td0_prime;
            J(L.eq(g), nd + L.v(bus)) = c * cp / s.Td0_prime;
            J(L.eq(g), nd + L.ang(bus)) = c * V * sp / s.Td0_prime;
            J(L.tm(g), L.tm(g)) = -1.0 / s.T_ch;
            J(L.tm(g), L.dw(g)) = -1.0 / (s.R_d * s.T_ch);
            // stator rows
            const Index rp = nd + L.pg(g), rq = nd + L.qg(g);
            const double xp = s.xd_prime;
            J(rp, nd + L.pg(g)) = 1.0;
            J(rp, L.eq(g)) = -V * sp / xp;
            J(rp, nd + L.v(bus)) = -E * sp / xp;
            J(rp, L.delta(g)) = -E * V * cp / xp;
            J(rp, nd + L.ang(bus)) = E * V * cp / xp;
            J(rq, nd + L.qg(g)) = 1.0;
            J(rq, L.eq(g)) = -V * cp / xp;
            J(rq, nd + L.v(bus)) = -(E * cp - 2.0 * V) / xp;
            J(rq, L.delta(g)) = E * V * sp / xp;
            J(rq, nd + L.ang(bus)) = -E * V * sp / xp;
            // generator injection into bus balance
            J(nd + L.v(bus), nd + L.pg(g)) = 1.0;
            J(nd + L.ang(bus), nd + L.qg(g)) = 1.0;
        }
        injection_jacobian(xa, J, nd, nd, -1.0);
    }

    /// d f / d theta (n_d x n_theta), setpoints held fixed.
    Matrix f_theta(const Vector& xd, const Vector& xa, const Setpoints&) const {
        const auto& L = layout_;
        Matrix F = Matrix::Zero(L.n_d(), theta_.size());
        for (Index g = 0; g < L.n_gen; ++g) {
            const double M = theta_.M[g], D = theta_.D[g];
            const double dw = xd[L.dw(g)], Tm = xd[L.tm(g)], P = xa[L.pg(g)];
            F(L.dw(g), g) = -(Tm - P - D * dw) / (M * M);
            F(L.dw(g), L.n_gen + g) = -dw / M;
        }
        return F;
    }

    /// d f / d u with u = [T_ref; E_fd] (n_d x 2 n_gen).
    Matrix f_setpoints() const {
        const auto& L = layout_;
        Matrix F = Matrix::Zero(L.n_d(), 2 * L.n_gen);
        for (Index g = 0; g < L.n_gen; ++g) {
            F(L.tm(g), g) = 1.0 / gen(g).T_ch;
            F(L.eq(g), L.n_gen + g) = 1.0 / gen(g).Td0_prime;
        }
        return F;
    }

    /// d g / d theta (n_a x n_theta); only the network rows depend on r, x.
    Matrix g_theta(const Vector& xa) const {
        const auto& L = layout_;
        const NetworkCase& c = *case_;
        Matrix Gt = Matrix::Zero(L.n_a(), theta_.size());
        auto add_branch = [&](Index l, double rr, double xx, bool wrt_r, Index col) {
            const Branch& br = c.branches[static_cast<std::size_t>(l)];
            const double z2 = rr * rr + xx * xx, z4 = z2 * z2;
            double dg, db;
            if (wrt_r) {
                dg = (xx * xx - rr * rr) / z4;
                db = 2.0 * xx * rr / z4;
            } else {
                dg = -2.0 * rr * xx / z4;
                db = (xx * xx - rr * rr) / z4;
            }
            const Index ends[2][2] = {{br.from_bus, br.to_bus}, {br.to_bus, br.from_bus}};
            for (const auto& e : ends) {
                const Index i = e[0], j = e[1];
                const double Vi = xa[L.v(i)], Vj = xa[L.v(j)];
                const double tij = xa[L.ang(i)] - xa[L.ang(j)];
                const double cs = std::cos(tij), sn = std::sin(tij);
                const double dP = Vi * Vi * dg - Vi * Vj * (dg * cs + db * sn);
                const double dQ = -Vi * Vi * db - Vi * Vj * (dg * sn - db * cs);
                Gt(L.v(i), col) -= dP;
                Gt(L.ang(i), col) -= dQ;
            }
        };
        const Index off_r = 2 * L.n_gen, off_x = off_r + c.n_r();
        // branch values as currently parameterized
        for (Index k = 0; k < c.n_r(); ++k) {
            const Index l = c.estimable_r[static_cast<std::size_t>(k)];
            add_branch(l, theta_.r[k], branch_x(l), true, off_r + k);
        }
        for (Index k = 0; k < c.n_x(); ++k) {
            const Index l = c.estimable_x[static_cast<std::size_t>(k)];
            add_branch(l, branch_r(l), theta_.x[k], false, off_x + k);
        }
        return Gt;
    }

    const GeneratorSpec& gen(Index g) const { return case_->generators[static_cast<std::size_t>(g)]; }

    /// Bus injections P_i, Q_i of the network.
    std::pair<Vector, Vector> injections(const Vector& V, const Vector& ang) const {
        const Index n = layout_.n_bus;
        Vector P = Vector::Zero(n), Q = Vector::Zero(n);
        for (Index i = 0; i < n; ++i) {
            for (Index j = 0; j < n; ++j) {
                const double Gij = Y_.G(i, j), Bij = Y_.B(i, j);
                if (Gij == 0.0 && Bij == 0.0) continue;
                const double tij = ang[i] - ang[j];
                P[i] += V[j] * (Gij * std::cos(tij) + Bij * std::sin(tij));
                Q[i] += V[j] * (Gij * std::sin(tij) - Bij * std::cos(tij));
            }
            P[i] *= V[i];
            Q[i] *= V[i];
        }
        return {P, Q};
    }

private:
    double branch_r(Index l) const {
        const auto& er = case_->estimable_r;
        const auto it = std::find(er.begin(), er.end(), l);
        return it == er.end() ? case_->branches[static_cast<std::size_t>(l)].r : theta_.r[it - er.begin()];
    }
    double branch_x(Index l) const {
        const auto& ex = case_->estimable_x;
        const auto it = std::find(ex.begin(), ex.end(), l);
        return it == ex.end() ? case_->branches[static_cast<std::size_t>(l)].x : theta_.x[it - ex.begin()];
    }

    /// Adds scale * d[P_i; Q_i]/d[V; theta] into J at rows row0 + ang/v slots.
    void injection_jacobian(const Vector& xa, Matrix& J, Index row0, Index col0, double scale) const {
        const auto& L = layout_;
        const Index n = L.n_bus;
        Vector V(n), ang(n);
        for (Index i = 0; i < n; ++i) {
            V[i] = xa[L.v(i)];
            ang[i] = xa[L.ang(i)];
        }
        const auto [P, Q] = injections(V, ang);
        for (Index i = 0; i < n; ++i) {
            const Index rP = row0 + L.v(i), rQ = row0 + L.ang(i);
            for (Index j = 0; j < n; ++j) {
                const double Gij = Y_.G(i, j), Bij = Y_.B(i, j);
                if (j != i && Gij == 0.0 && Bij == 0.0) continue;
                const Index cV = col0 + L.v(j), cT = col0 + L.ang(j);
                if (j == i) {
                    J(rP, cT) += scale * (-Q[i] - Bij * V[i] * V[i]);
                    J(rP, cV) += scale * (P[i] / V[i] + Gij * V[i]);
                    J(rQ, cT) += scale * (P[i] - Gij * V[i] * V[i]);
                    J(rQ, cV) += scale * (Q[i] / V[i] - Bij * V[i]);
                } else {
                    const double tij = ang[i] - ang[j];
                    const double cs = std::cos(tij), sn = std::sin(tij);
                    J(rP, cT) += scale * (V[i] * V[j] * (Gij * sn - Bij * cs));
                    J(rP, cV) += scale * (V[i] * (Gij * cs + Bij * sn));
                    J(rQ, cT) += scale * (-V[i] * V[j] * (Gij * cs + Bij * sn));
                    J(rQ, cV) += scale * (V[i] * (Gij * sn - Bij * cs));
                }
            }
        }
    }

    const NetworkCase* case_;
    StateLayout layout_;
    ParamVector theta_;
    AdmittanceMatrix Y_;
};

// ---------------------------------------------------------------------------
// Equilibrium
// ---------------------------------------------------------------------------

struct OperatingPoint {
    Vector xd;
    Vector xa;
    Setpoints setpoints;
    LoadVector loads;
};

struct PowerFlowResult {
    Vector V, ang;  // per bus
    Vector PG, QG;  // per generator
    int iterations = 0;
    double mismatch = 0.0;
};

struct PowerFlowOptions {
    double tol = 1e-10;
    int max_iter = 30;
    double v_min = 0.5;
    double v_max = 1.5;
};

/// Polar Newton power flow: generators[0] bus is slack, other generator
/// buses PV, remaining buses PQ. Damped by step halving.
inline PowerFlowResult solve_power_flow(const DaeModel& model, const LoadVector& loads,
                                        const PowerFlowOptions& opt = {}) {
    const NetworkCase& c = model.network();
    const Index n = c.n_buses;
    const Index slack = c.slack_bus();
    std::vector<Index> ang_idx, v_idx;  // buses with unknown angle / magnitude
    for (Index i = 0; i < n; ++i) {
        if (i != slack) ang_idx.push_back(i);
        if (c.generator_at(i) < 0) v_idx.push_back(i);
    }
    const Index na = static_cast<Index>(ang_idx.size()), nv = static_cast<Index>(v_idx.size());

    Vector V = Vector::Ones(n), ang = Vector::Zero(n);
    Vector Pspec = -loads.P, Qspec = -loads.Q;
    for (Index g = 0; g < c.n_gen(); ++g) {
        const auto& s = c.generators[static_cast<std::size_t>(g)];
        V[s.bus] = s.v_set;
        Pspec[s.bus] += s.p_set;
    }

    auto mismatch = [&](const Vector& Vv, const Vector& aa) {
        const auto [P, Q] = model.injections(Vv, aa);
        Vector m(na + nv);
        for (Index k = 0; k < na; ++k) m[k] = Pspec[ang_idx[static_cast<std::size_t>(k)]] - P[ang_idx[static_cast<std::size_t>(k)]];
        for (Index k = 0; k < nv; ++k) m[na + k] = Qspec[v_idx[static_cast<std::size_t>(k)]] - Q[v_idx[static_cast<std::size_t>(k)]];
        return m;
    };

    // Reuse the DAE injection Jacobian through a throwaway algebraic vector.
    const StateLayout& L = model.layout();
    auto jac = [&](const Vector& Vv, const Vector& aa) {
        Vector xd = Vector::Zero(L.n_d());
        Vector xa = Vector::Zero(L.n_a());
        for (Index i = 0; i < n; ++i) {
            xa[L.v(i)] = Vv[i];
            xa[L.ang(i)] = aa[i];
        }
        Matrix Jfull;
        model.jacobian(xd, xa, Jfull);
        // network rows of g are (PG - PL - P); d(-P)/dx, so flip sign back.
        const Index nd = L.n_d();
        Matrix Jpf(na + nv, na + nv);
        for (Index r = 0; r < na; ++r) {
            const Index row = nd + L.v(ang_idx[static_cast<std::size_t>(r)]);
            for (Index k = 0; k < na; ++k) Jpf(r, k) = -Jfull(row, nd + L.ang(ang_idx[static_cast<std::size_t>(k)]));
            for (Index k = 0; k < nv; ++k) Jpf(r, na + k) = -Jfull(row, nd + L.v(v_idx[static_cast<std::size_t>(k)]));
        }
        for (Index r = 0; r < nv; ++r) {
            const Index row = nd + L.ang(v_idx[static_cast<std::size_t>(r)]);
            for (Index k = 0; k < na; ++k) Jpf(na + r, k) = -Jfull(row, nd + L.ang(ang_idx[static_cast<std::size_t>(k)]));
            for (Index k = 0; k < nv; ++k) Jpf(na + r, na + k) = -Jfull(row, nd + L.v(v_idx[static_cast<std::size_t>(k)]));
        }
        return Jpf;
    };

    PowerFlowResult res;
    Vector m = mismatch(V, ang);
    double norm = m.lpNorm<Eigen::Infinity>();
    int it = 0;
    while (norm > opt.tol) {
        if (it >= opt.max_iter || !std::isfinite(norm))
            throw SolverFailure(FailureKind::PfDiverged, "power flow did not converge (mismatch " + std::to_string(norm) + ")");
        ++it;
        // mismatch = spec - calc, d(mismatch)/dz = -dcalc/dz = -Jpf
        const Vector dz = jac(V, ang).partialPivLu().solve(m);
        double step = 1.0;
        bool improved = false;
        for (int h = 0; h < 12; ++h) {
            Vector Vt = V, at = ang;
            for (Index k = 0; k < na; ++k) at[ang_idx[static_cast<std::size_t>(k)]] += step * dz[k];
            for (Index k = 0; k < nv; ++k) Vt[v_idx[static_cast<std::size_t>(k)]] += step * dz[na + k];
            const Vector mt = mismatch(Vt, at);
            const double nt = mt.lpNorm<Eigen::Infinity>();
            if (std::isfinite(nt) && (nt < norm || h == 11)) {
                V = Vt;
                ang = at;
                m = mt;
                norm = nt;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if (!improved) throw SolverFailure(FailureKind::PfDiverged, "power flow line search failed");
    }
    for (Index i = 0; i < n; ++i) {
        if (!(V[i] >= opt.v_min && V[i] <= opt.v_max))
            throw SolverFailure(FailureKind::PfDiverged, "power flow converged to implausible voltage at bus " + std::to_string(i + 1));
    }
    const auto [P, Q] = model.injections(V, ang);
    res.V = V;
    res.ang = ang;
    res.PG.resize(c.n_gen());
    res.QG.resize(c.n_gen());
    for (Index g = 0; g < c.n_gen(); ++g) {
        const Index b = c.generators[static_cast<std::size_t>(g)].bus;
        res.PG[g] = P[b] + loads.P[b];
        res.QG[g] = Q[b] + loads.Q[b];
    }
    res.iterations = it;
    res.mismatch = norm;
    return res;
}

/// Power flow followed by the machine back-solve: delta, E', Tm = P_G,
/// T_ref = Tm, E_fd from the stator and field equations.
inline OperatingPoint solve_equilibrium(const DaeModel& model, const LoadVector& loads0,
                                        const PowerFlowOptions& opt = {}) {
    const StateLayout& L = model.layout();
    const PowerFlowResult pf = solve_power_flow(model, loads0, opt);
    OperatingPoint op;
    op.loads = loads0;
    op.xd = Vector::Zero(L.n_d());
    op.xa = Vector::Zero(L.n_a());
    op.setpoints.T_ref.resize(L.n_gen);
    op.setpoints.E_fd.resize(L.n_gen);
    for (Index i = 0; i < L.n_bus; ++i) {
        op.xa[L.v(i)] = pf.V[i];
        op.xa[L.ang(i)] = pf.ang[i];
    }
    for (Index g = 0; g < L.n_gen; ++g) {
        const GeneratorSpec& s = model.gen(g);
        const double V = pf.V[s.bus], th = pf.ang[s.bus];
        const std::complex<double> Vc = std::polar(V, th);
        const std::complex<double> S(pf.PG[g], pf.QG[g]);
        const std::complex<double> I = std::conj(S / Vc);
        const std::complex<double> E = Vc + std::complex<double>(0.0, s.xd_prime) * I;
        const double Em = std::abs(E), delta = std::arg(E);
        const double id = (Em - V * std::cos(delta - th)) / s.xd_prime;
        op.xd[L.delta(g)] = delta;
        op.xd[L.dw(g)] = 0.0;
        op.xd[L.eq(g)] = Em;
        op.xd[L.tm(g)] = pf.PG[g];
        op.xa[L.pg(g)] = pf.PG[g];
        op.xa[L.qg(g)] = pf.QG[g];
        op.setpoints.T_ref[g] = pf.PG[g];
        op.setpoints.E_fd[g] = Em + (s.xd - s.xd_prime) * id;
    }
    return op;
}

// ---------------------------------------------------------------------------
// Disturbances
// ---------------------------------------------------------------------------

struct Pulse {
    Index bus = 0;  // 0-based
    double start = 0.0;
    double duration = 0.0;
    double amplitude = 0.0;  // fraction of local base load
};

struct PulseSchedule {
    std::vector<Pulse> pulses;
    bool scale_reactive = true;  // keep local Q/P when perturbing P
};

/// Piecewise-constant, right-continuous load profile d(t).
class LoadProfile {
public:
    LoadProfile(LoadVector base, PulseSchedule schedule) : base_(std::move(base)), schedule_(std::move(schedule)) {}

    const LoadVector& base() const { return base_; }
    const PulseSchedule& schedule() const { return schedule_; }

    LoadVector at(double t) const {
        LoadVector l = base_;
        for (const auto& p : schedule_.pulses) {
            if (t >= p.start - kTimeEps && t < p.start + p.duration - kTimeEps) {
                l.P[p.bus] += p.amplitude * base_.P[p.bus];
                if (schedule_.scale_reactive) l.Q[p.bus] += p.amplitude * base_.Q[p.bus];
            }
        }
        return l;
    }

    std::vector<double> breakpoints() const {
        std::vector<double> b;
        for (const auto& p : schedule_.pulses) {
            b.push_back(p.start);
            b.push_back(p.start + p.duration);
        }
        std::sort(b.begin(), b.end());
        return b;
    }

    static constexpr double kTimeEps = 1e-9;

private:
    LoadVector base_;
    PulseSchedule schedule_;
};

// ---------------------------------------------------------------------------
// Measurement map
// ---------------------------------------------------------------------------

enum class ChannelClass { Voltage, Frequency };

/// Channel ordering: (V_r, V_i) per monitored bus, then dw/omega_s per generator.
struct ChannelLayout {
    std::vector<Index> monitored_buses;  // 0-based
    Index n_gen = 0;

    Index size() const { return 2 * static_cast<Index>(monitored_buses.size()) + n_gen; }
    Index n_voltage() const { return 2 * static_cast<Index>(monitored_buses.size()); }
    ChannelClass class_of(Index j) const { return j < n_voltage() ? ChannelClass::Voltage : ChannelClass::Frequency; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (Index b : monitored_buses) {
            out.push_back("Vr" + std::to_string(b + 1));
            out.push_back("Vi" + std::to_string(b + 1));
        }
        for (Index g = 0; g < n_gen; ++g) out.push_back("f" + std::to_string(g + 1));
        return out;
    }
};

/// Buses 4-9 plus bus 2 on the 9-bus case.
inline ChannelLayout default_channels_ieee9() { return ChannelLayout{{1, 3, 4, 5, 6, 7, 8}, 3}; }

inline void measure_into(const StateLayout& L, const ChannelLayout& ch, double omega_s, const Vector& xd,
                         const Vector& xa, Eigen::Ref<Vector> out) {
    Index k = 0;
    for (Index b : ch.monitored_buses) {
        if (b < 0 || b >= L.n_bus) throw InvalidInput("monitored bus out of range");
        const double V = xa[L.v(b)], th = xa[L.ang(b)];
        out[k++] = V * std::cos(th);
        out[k++] = V * std::sin(th);
    }
    for (Index g = 0; g < ch.n_gen; ++g) out[k++] = xd[L.dw(g)] / omega_s;
}

inline Vector measure(const StateLayout& L, const ChannelLayout& ch, double omega_s, const Vector& xd,
                      const Vector& xa) {
    Vector out(ch.size());
    measure_into(L, ch, omega_s, xd, xa, out);
    return out;
}

/// d h / d [xd; xa] (p x n_x).
inline Matrix measure_jacobian(const StateLayout& L, const ChannelLayout& ch, double omega_s, const Vector& xa) {
    Matrix H = Matrix::Zero(ch.size(), L.n_x());
    const Index nd = L.n_d();
    Index k = 0;
    for (Index b : ch.monitored_buses) {
        const double V = xa[L.v(b)], th = xa[L.ang(b)];
        H(k, nd + L.v(b)) = std::cos(th);
        H(k, nd + L.ang(b)) = -V * std::sin(th);
        ++k;
        H(k, nd + L.v(b)) = std::sin(th);
        H(k, nd + L.ang(b)) = V * std::cos(th);
        ++k;
    }
    for (Index g = 0; g < ch.n_gen; ++g) H(k++, L.dw(g)) = 1.0 / omega_s;
    return H;
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

struct Trajectory {
    std::vector<double> times;
    Matrix states;    // n_x x n_nodes, [xd; xa], right limits at load switches
    Matrix channels;  // p x n_nodes
    /// Algebraic left limits at nodes where the load switched: (node, xa^-).
    std::vector<std::pair<Index, Vector>> pre_jump;
    Index newton_iterations = 0;

    Index size() const { return static_cast<Index>(times.size()); }

    /// Node index whose time matches t, or -1.
    Index find(double t) const {
        const auto it = std::lower_bound(times.begin(), times.end(), t - 1e-9);
        if (it == times.end() || std::abs(*it - t) > 1e-9) return -1;
        return static_cast<Index>(it - times.begin());
    }
};

/// Integration node times: uniform dt grid on [0, T] merged with the
/// breakpoints of the load profile.
inline std::vector<double> integration_nodes(double horizon, double dt, const std::vector<double>& breaks) {
    if (!(dt > 0.0)) throw InvalidInput("dt must be positive");
    const auto n = static_cast<long>(std::floor(horizon / dt + 1e-9));
    std::vector<double> t;
    t.reserve(static_cast<std::size_t>(n) + 2 + breaks.size());
    for (long k = 0; k <= n; ++k) t.push_back(static_cast<double>(k) * dt);
    if (horizon - t.back() > 1e-9) t.push_back(horizon);
    for (double b : breaks) {
        if (b > 0.0 && b < horizon) t.push_back(b);
    }
    std::sort(t.begin(), t.end());
    std::vector<double> out;
    for (double v : t) {
        if (out.empty() || v - out.back() > 1e-9) out.push_back(v);
    }
    return out;
}

namespace detail {

/// Newton on g(xd, xa, loads) = 0 for xa with xd fixed.
inline void resolve_algebraic(const DaeModel& model, const Vector& xd, Vector& xa, const LoadVector& loads,
                              const SolverConfig& cfg) {
    const StateLayout& L = model.layout();
    const Index nd = L.n_d(), na = L.n_a();
    Vector r(na);
    Matrix J;
    for (int it = 0; it <= cfg.newton_max_iter; ++it) {
        model.g_into(xd, xa, loads, r);
        const double nr = r.lpNorm<Eigen::Infinity>();
        if (nr <= cfg.newton_tol) return;
        if (it == cfg.newton_max_iter || !std::isfinite(nr)) break;
        model.jacobian(xd, xa, J);
        xa -= J.block(nd, nd, na, na).partialPivLu().solve(r);
    }
    throw SolverFailure(FailureKind::StepDiverged, "algebraic re-solve at load switch failed");
}

}  // namespace detail

/// Fixed-step implicit trapezoidal rule on the differential rows with the
/// algebraic rows enforced at every node; all rows solved together by Newton.
inline Trajectory integrate(const DaeModel& model, const OperatingPoint& op, const LoadProfile& profile,
                            double horizon, const SolverConfig& cfg, const ChannelLayout& channels) {
    const StateLayout& L = model.layout();
    const Index nd = L.n_d(), na = L.n_a(), nx = L.n_x();
    const double omega_s = model.network().omega_s();

    Trajectory tr;
    tr.times = integration_nodes(horizon, cfg.dt, profile.breakpoints());
    const Index nn = tr.size();
    tr.states.resize(nx, nn);
    tr.channels.resize(channels.size(), nn);

    Vector xd = op.xd, xa = op.xa;
    LoadVector current = op.loads;
    Vector f_old(nd), f_new(nd), R(nx);
    Matrix J(nx, nx), Jstep(nx, nx);
    Eigen::PartialPivLU<Matrix> lu(nx);

    auto record = [&](Index n) {
        tr.states.col(n).head(nd) = xd;
        tr.states.col(n).tail(na) = xa;
        measure_into(L, channels, omega_s, xd, xa, tr.channels.col(n));
    };

    for (Index n = 0; n < nn; ++n) {
        const double t = tr.times[static_cast<std::size_t>(n)];
        LoadVector here = profile.at(t);
        if (!(here == current)) {
            tr.pre_jump.emplace_back(n, xa);
            current = std::move(here);
            detail::resolve_algebraic(model, xd, xa, current, cfg);
        }
        record(n);
        if (n + 1 == nn) break;

        const double h = tr.times[static_cast<std::size_t>(n + 1)] - t;
        model.f_into(xd, xa, op.setpoints, f_old);
        const Vector xd_old = xd;
        bool converged = false;
        for (int it = 0; it <= cfg.newton_max_iter; ++it) {
            model.f_into(xd, xa, op.setpoints, f_new);
            R.head(nd) = xd - xd_old - 0.5 * h * (f_new + f_old);
            model.g_into(xd, xa, current, R.tail(na));
            const double nr = R.lpNorm<Eigen::Infinity>();
            if (nr <= cfg.newton_tol) {
                converged = true;
                break;
            }
            if (it == cfg.newton_max_iter || !std::isfinite(nr)) break;
            model.jacobian(xd, xa, J);
            Jstep = J;
            Jstep.topRows(nd) *= -0.5 * h;
            Jstep.topLeftCorner(nd, nd).diagonal().array() += 1.0;
            lu.compute(Jstep);
            const Vector dz = lu.solve(R);
            xd -= dz.head(nd);
            xa -= dz.tail(na);
            ++tr.newton_iterations;
        }
        if (!converged)
            throw SolverFailure(FailureKind::StepDiverged, "Newton failed in step ending at t=" +
                                                               std::to_string(tr.times[static_cast<std::size_t>(n + 1)]));
    }
    return tr;
}

}  // namespace daebayes
