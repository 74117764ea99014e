#pragma once

// Physical parameter vector theta = [M, D, r, x], standardized latent
// coordinates eta, log-normal priors and box constraints.

#include "daebayes/grid.hpp"
#include "daebayes/types.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace daebayes {

enum class ParamClass { M = 0, D = 1, r = 2, x = 3 };

inline constexpr std::array<ParamClass, 4> kParamClasses{ParamClass::M, ParamClass::D, ParamClass::r,
                                                          ParamClass::x};

inline const char* to_string(ParamClass c) {
    switch (c) {
        case ParamClass::M: return "M";
        case ParamClass::D: return "D";
        case ParamClass::r: return "r";
        case ParamClass::x: return "x";
    }
    return "?";
}

struct ParamVector {
    Vector M, D, r, x;

    Index size() const { return M.size() + D.size() + r.size() + x.size(); }

    Vector flat() const {
        Vector v(size());
        v << M, D, r, x;
        return v;
    }

    static ParamVector from_flat(const Vector& v, Index n_gen, Index n_r, Index n_x) {
        if (v.size() != 2 * n_gen + n_r + n_x) throw InvalidInput("parameter vector has wrong length");
        ParamVector p;
        p.M = v.segment(0, n_gen);
        p.D = v.segment(n_gen, n_gen);
        p.r = v.segment(2 * n_gen, n_r);
        p.x = v.segment(2 * n_gen + n_r, n_x);
        return p;
    }
};

/// Where each class lives inside the flat vector.
struct ParamLayout {
    Index n_gen = 0, n_r = 0, n_x = 0;
    std::vector<std::string> names;

    explicit ParamLayout(const NetworkCase& c) : n_gen(c.n_gen()), n_r(c.n_r()), n_x(c.n_x()) {
        for (Index g = 0; g < n_gen; ++g) names.push_back("M" + std::to_string(g + 1));
        for (Index g = 0; g < n_gen; ++g) names.push_back("D" + std::to_string(g + 1));
        auto branch_tag = [&](Index l) {
            const auto& b = c.branches[static_cast<std::size_t>(l)];
            return std::to_string(b.from_bus + 1) + "-" + std::to_string(b.to_bus + 1);
        };
        for (Index l : c.estimable_r) names.push_back("r" + branch_tag(l));
        for (Index l : c.estimable_x) names.push_back("x" + branch_tag(l));
    }

    Index size() const { return 2 * n_gen + n_r + n_x; }

    Index offset(ParamClass c) const {
        switch (c) {
            case ParamClass::M: return 0;
            case ParamClass::D: return n_gen;
            case ParamClass::r: return 2 * n_gen;
            case ParamClass::x: return 2 * n_gen + n_r;
        }
        return 0;
    }

    Index count(ParamClass c) const {
        switch (c) {
            case ParamClass::M:
            case ParamClass::D: return n_gen;
            case ParamClass::r: return n_r;
            case ParamClass::x: return n_x;
        }
        return 0;
    }

    std::vector<Index> indices(ParamClass c) const {
        std::vector<Index> out;
        for (Index k = 0; k < count(c); ++k) out.push_back(offset(c) + k);
        return out;
    }

    ParamClass class_of(Index i) const {
        if (i < n_gen) return ParamClass::M;
        if (i < 2 * n_gen) return ParamClass::D;
        if (i < 2 * n_gen + n_r) return ParamClass::r;
        return ParamClass::x;
    }
};

inline ParamVector nominal_params(const NetworkCase& c) {
    ParamVector p;
    p.M.resize(c.n_gen());
    p.D.resize(c.n_gen());
    for (Index g = 0; g < c.n_gen(); ++g) {
        p.M[g] = c.generators[static_cast<std::size_t>(g)].M_nom;
        p.D[g] = c.generators[static_cast<std::size_t>(g)].D_nom;
    }
    p.r = nominal_r(c);
    p.x = nominal_x(c);
    return p;
}

struct PriorSpec {
    Vector mu_lambda;     // log theta_nom
    Vector sigma_lambda;  // per-parameter log-std
    Vector eta_min;
    Vector eta_max;
    Index n_gen = 0, n_r = 0, n_x = 0;

    Index size() const { return mu_lambda.size(); }

    bool in_box(const Vector& eta) const {
        for (Index i = 0; i < eta.size(); ++i) {
            if (!(eta[i] >= eta_min[i] && eta[i] <= eta_max[i])) return false;
        }
        return true;
    }
};

/// Per-class 95% multiplicative prior width w and box half-range c.
struct PriorWidths {
    std::array<double, 4> width{0.30, 0.60, 0.25, 0.25};
    std::array<double, 4> box{0.50, 0.90, 0.45, 0.45};
};

inline constexpr double kZ975 = 1.959963984540054;

/// sigma = ln(1+w)/z_0.975; box theta/theta_nom in [1/(1+c), 1+c].
inline PriorSpec default_priors(const NetworkCase& c, const PriorWidths& w = {}) {
    const ParamLayout layout(c);
    PriorSpec p;
    p.n_gen = layout.n_gen;
    p.n_r = layout.n_r;
    p.n_x = layout.n_x;
    p.mu_lambda = nominal_params(c).flat().array().log();
    const Index n = layout.size();
    p.sigma_lambda.resize(n);
    p.eta_min.resize(n);
    p.eta_max.resize(n);
    for (Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(layout.class_of(i));
        if (!(w.width[k] > 0.0) || !(w.box[k] > 0.0)) throw InvalidInput("prior widths must be positive");
        p.sigma_lambda[i] = std::log1p(w.width[k]) / kZ975;
        p.eta_max[i] = std::log1p(w.box[k]) / p.sigma_lambda[i];
        p.eta_min[i] = -p.eta_max[i];
    }
    return p;
}

inline ParamVector to_physical(const Vector& eta, const PriorSpec& prior) {
    if (eta.size() != prior.size()) throw InvalidInput("to_physical: dimension mismatch");
    const Vector theta = (prior.mu_lambda.array() + prior.sigma_lambda.array() * eta.array()).exp();
    return ParamVector::from_flat(theta, prior.n_gen, prior.n_r, prior.n_x);
}

inline Vector to_latent(const ParamVector& theta, const PriorSpec& prior) {
    const Vector t = theta.flat();
    if (t.size() != prior.size()) throw InvalidInput("to_latent: dimension mismatch");
    if ((t.array() <= 0.0).any()) throw InvalidInput("to_latent: nonpositive parameter");
    return ((t.array().log() - prior.mu_lambda.array()) / prior.sigma_lambda.array()).matrix();
}

/// -||eta||^2 / 2 inside the box, -inf outside.
inline double log_prior(const Vector& eta, const PriorSpec& prior) {
    if (!prior.in_box(eta)) return -kInf;
    return -0.5 * eta.squaredNorm();
}

}  // namespace daebayes
