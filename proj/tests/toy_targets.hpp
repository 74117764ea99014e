#pragma once

// Analytic targets with the interface run_chain expects.

#include "daebayes/sampler.hpp"

#include <optional>

namespace daebayes::toy {

/// Gaussian N(mu, Sigma) as the exact level; the coarse level is a Gaussian
/// with a shifted mean and inflated covariance. Points with eta[0] > wall
/// fail Stage 0; points outside |eta_i| <= box fail the box gate.
struct GaussianTarget {
    Vector mu;
    Matrix prec;         // Sigma^-1
    Vector coarse_shift;
    double coarse_inflate = 1.0;
    double box = 1e9;
    double wall = 1e9;
    mutable Index exact_calls = 0, coarse_calls = 0;

    Index dimension() const { return mu.size(); }
    bool in_box(const Vector& eta) const { return eta.cwiseAbs().maxCoeff() <= box; }
    std::optional<int> screen(const Vector& eta) const {
        if (eta[0] > wall) return std::nullopt;
        return 0;
    }
    double evaluate(const Vector& eta, int, Fidelity f) const {
        if (f == Fidelity::Exact) {
            ++exact_calls;
            const Vector r = eta - mu;
            return -0.5 * r.dot(prec * r);
        }
        ++coarse_calls;
        const Vector r = eta - mu - coarse_shift;
        return -0.5 * r.dot(prec * r) / coarse_inflate;
    }
};

inline GaussianTarget correlated_2d() {
    GaussianTarget t;
    t.mu = Eigen::Vector2d(0.5, -1.0);
    Matrix S(2, 2);
    S << 1.0, 0.6, 0.6, 2.0;
    t.prec = S.inverse();
    t.coarse_shift = Eigen::Vector2d(0.3, -0.2);
    t.coarse_inflate = 1.5;
    return t;
}

/// Batch-means standard error of the mean of a (possibly autocorrelated) series.
inline double batch_se(const Vector& x, Index n_batches = 100) {
    const Index m = x.size() / n_batches;
    Vector means(n_batches);
    for (Index b = 0; b < n_batches; ++b) means[b] = x.segment(b * m, m).mean();
    const double mu = means.mean();
    return std::sqrt((means.array() - mu).square().sum() / static_cast<double>(n_batches - 1) /
                     static_cast<double>(n_batches));
}

}  // namespace daebayes::toy
