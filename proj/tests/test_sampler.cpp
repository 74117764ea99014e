#include "daebayes/sampler.hpp"
#include "toy_targets.hpp"

#include <gtest/gtest.h>

using namespace daebayes;

namespace {

BlockPartition two_singletons() {
    BlockPartition p;
    p.blocks = {{0}, {1}};
    p.names = {"a", "b"};
    p.frozen = {false, false};
    return p;
}

SamplerConfig toy_config(Index burn, Index samp, Index thin = 1) {
    SamplerConfig c;
    c.n_burn = burn;
    c.n_samp = samp;
    c.n_thin = thin;
    c.audit_every = 1000;
    return c;
}

}  // namespace

TEST(DelayedAcceptance, ReproducesGaussianMomentsWithBiasedSurrogate) {
    const toy::GaussianTarget t = toy::correlated_2d();
    const auto blocks = full_block(two_singletons());
    const ChainResult r = run_chain(t, Vector::Zero(2), Matrix::Zero(2, 2), blocks, toy_config(2000, 100000), 17);
    const Matrix& X = r.samples;
    const Matrix S = t.prec.inverse();
    for (Index i = 0; i < 2; ++i) {
        const Vector xi = X.col(i);
        EXPECT_NEAR(xi.mean(), t.mu[i], 3.0 * toy::batch_se(xi)) << "mean " << i;
    }
    for (Index i = 0; i < 2; ++i)
        for (Index j = i; j < 2; ++j) {
            const Vector prod = (X.col(i).array() - t.mu[i]) * (X.col(j).array() - t.mu[j]);
            EXPECT_NEAR(prod.mean(), S(i, j), 3.0 * toy::batch_se(prod)) << "cov " << i << j;
        }
    EXPECT_TRUE(r.ledger.consistent());
    EXPECT_LT(r.ledger.exact_solves, r.ledger.iterations);
}

TEST(DelayedAcceptance, OneDimensionalDetailedBalanceSmoke) {
    toy::GaussianTarget t;
    t.mu = Vector::Constant(1, 0.0);
    t.prec = Matrix::Constant(1, 1, 1.0 / 4.0);
    t.coarse_shift = Vector::Zero(1);
    BlockPartition b;
    b.blocks = {{0}};
    b.names = {"x"};
    b.frozen = {false};
    const ChainResult r = run_chain(t, Vector::Zero(1), Matrix::Zero(1, 1), b, toy_config(0, 100000), 3);
    const Vector x = r.samples.col(0);
    const Vector sq = x.array().square();
    EXPECT_NEAR(sq.mean(), 4.0, 3.0 * toy::batch_se(sq));
    // With coarse == exact, Stage 2 never rejects.
    EXPECT_EQ(r.ledger.stage2_rejects, 0);
}

TEST(DaStep, StageAccountingAndSurrogateCorrection) {
    toy::GaussianTarget t = toy::correlated_2d();
    RunLedger led;
    ChainState s{Vector::Zero(2), t.evaluate(Vector::Zero(2), 0, Fidelity::Exact),
                 t.evaluate(Vector::Zero(2), 0, Fidelity::Coarse)};
    const Vector cand = Eigen::Vector2d(-1.5, 1.5);
    const double a1 = std::min(1.0, std::exp(t.evaluate(cand, 0, Fidelity::Coarse) - s.coarse));
    // u1 just above alpha1: Stage-1 reject, no exact solve.
    ChainState s1 = s;
    EXPECT_FALSE(da_step(t, s1, cand, KernelMode::DelayedAcceptance, std::min(a1 + 1e-9, 1.0 - 1e-12), 0.0, led));
    ASSERT_LT(a1, 1.0);
    EXPECT_EQ(led.exact_solves, 0);
    EXPECT_EQ(led.stage1_rejects, 1);
    // u1 = 0, u2 = 0: accepted, caches updated.
    ChainState s2 = s;
    EXPECT_TRUE(da_step(t, s2, cand, KernelMode::DelayedAcceptance, 0.0, 0.0, led));
    EXPECT_EQ(s2.eta, cand);
    EXPECT_DOUBLE_EQ(s2.exact, t.evaluate(cand, 0, Fidelity::Exact));
    EXPECT_DOUBLE_EQ(s2.coarse, t.evaluate(cand, 0, Fidelity::Coarse));
    // Box and Stage-0 gates precede any evaluation.
    t.box = 1.0;
    t.wall = 0.5;
    RunLedger g;
    ChainState s3 = s;
    EXPECT_FALSE(da_step(t, s3, Eigen::Vector2d(1.5, 0.0), KernelMode::DelayedAcceptance, 0.0, 0.0, g));
    EXPECT_FALSE(da_step(t, s3, Eigen::Vector2d(0.7, 0.0), KernelMode::DelayedAcceptance, 0.0, 0.0, g));
    EXPECT_EQ(g.box_rejects, 1);
    EXPECT_EQ(g.stage0_rejects, 1);
    EXPECT_EQ(g.coarse_solves + g.exact_solves, 0);
}

TEST(Ledger, ConservationWithBoxAndFeasibilityRejects) {
    toy::GaussianTarget t = toy::correlated_2d();
    t.box = 2.0;
    t.wall = 1.2;
    for (KernelMode mode : {KernelMode::DelayedAcceptance, KernelMode::ExactOnly}) {
        SamplerConfig c = toy_config(500, 3000);
        c.mode = mode;
        const ChainResult r = run_chain(t, Vector::Zero(2), Matrix::Zero(2, 2), two_singletons(), c, 5);
        const RunLedger& l = r.ledger;
        EXPECT_TRUE(l.consistent());
        EXPECT_GT(l.box_rejects, 0);
        EXPECT_GT(l.stage0_rejects, 0);
        EXPECT_EQ(l.iterations, 3500);
        EXPECT_EQ(l.total_proposals(), l.box_rejects + l.stage0_rejects + l.stage1_accepts + l.stage1_rejects);
        EXPECT_EQ(l.stage1_accepts, l.stage2_accepts + l.stage2_rejects);
        EXPECT_EQ(l.audit_mismatches, 0);
        EXPECT_EQ(l.audits, 3);
        if (mode == KernelMode::ExactOnly) {
            EXPECT_EQ(l.coarse_solves, 0);
            EXPECT_EQ(l.stage1_rejects, 0);
        }
        EXPECT_LE(r.samples.col(0).maxCoeff(), 1.2);
        EXPECT_LE(r.samples.cwiseAbs().maxCoeff(), 2.0);
    }
}

TEST(Chain, ReproducibleAndSeedSensitive) {
    const toy::GaussianTarget t = toy::correlated_2d();
    const auto c = toy_config(200, 500, 2);
    const ChainResult a = run_chain(t, Vector::Zero(2), Matrix::Zero(2, 2), two_singletons(), c, 9);
    const ChainResult b = run_chain(t, Vector::Zero(2), Matrix::Zero(2, 2), two_singletons(), c, 9);
    const ChainResult d = run_chain(t, Vector::Zero(2), Matrix::Zero(2, 2), two_singletons(), c, 10);
    const ChainResult e = run_chain(t, Vector::Zero(2), Matrix::Zero(2, 2), two_singletons(), c, 9, 1);
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_EQ(a.log_post, b.log_post);
    EXPECT_EQ(a.proposal.scale, b.proposal.scale);
    EXPECT_NE(a.samples, d.samples);
    EXPECT_NE(a.samples, e.samples);
    EXPECT_EQ(a.samples.rows(), 500);
    EXPECT_EQ(a.ledger.iterations, 200 + 500 * 2);
}

TEST(Chain, ThinningKeepsEveryNthIteration) {
    const toy::GaussianTarget t = toy::correlated_2d();
    SamplerConfig c = toy_config(10, 40, 1);
    const ChainResult full = run_chain(t, Vector::Zero(2), Matrix::Zero(2, 2), two_singletons(), c, 4);
    c.n_samp = 20;
    c.n_thin = 2;
    const ChainResult thin = run_chain(t, Vector::Zero(2), Matrix::Zero(2, 2), two_singletons(), c, 4);
    for (Index k = 0; k < 20; ++k) EXPECT_EQ(thin.samples.row(k), full.samples.row(2 * k + 1));
}

TEST(Chain, FrozenBlocksStayPutAndAreNotProposed) {
    const toy::GaussianTarget t = toy::correlated_2d();
    const BlockPartition b = freeze(two_singletons(), {"b"});
    const Vector eta0 = Eigen::Vector2d(0.0, 0.25);
    const ChainResult r = run_chain(t, eta0, Matrix::Zero(2, 2), b, toy_config(100, 300), 2);
    EXPECT_TRUE((r.samples.col(1).array() == 0.25).all());
    EXPECT_EQ(r.ledger.proposals[1], 0);
    EXPECT_EQ(r.ledger.proposals[0], 400);
    EXPECT_EQ(r.proposal.scale[1], 1.0);
    EXPECT_THROW(freeze(b, {"a"}).validate(2), InvalidInput);
    EXPECT_THROW(freeze(b, {"nope"}), InvalidInput);
}

TEST(Blocks, DefaultPartitionAndFullBlock) {
    const ParamLayout layout(builtin_case_ieee9());
    const BlockPartition p = default_blocks(layout);
    EXPECT_NO_THROW(p.validate(21));
    EXPECT_EQ(p.names, (std::vector<std::string>{"dyn", "res", "rea"}));
    EXPECT_EQ(p.blocks[0].size(), 6u);
    const BlockPartition f = full_block(freeze(p, {"res"}));
    ASSERT_EQ(f.size(), 2);
    EXPECT_EQ(f.blocks[0].size(), 15u);
    EXPECT_TRUE(f.frozen[1]);
    EXPECT_NO_THROW(f.validate(21));
    BlockPartition bad = p;
    bad.blocks[1].push_back(0);
    EXPECT_THROW(bad.validate(21), InvalidInput);
}

TEST(Proposal, InitialCovarianceAndEmpiricalSpread) {
    Matrix H0(3, 3);
    H0 << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
    BlockPartition b;
    b.blocks = {{0, 2}, {1}};
    b.names = {"p", "q"};
    b.frozen = {false, false};
    const ProposalState ps = init_proposal(b, H0);
    Matrix Hb(2, 2);
    Hb << 5, 0, 0, 3;
    EXPECT_LT((ps.base_cov[0] - Hb.inverse()).norm(), 1e-14);
    EXPECT_NEAR(ps.base_cov[1](0, 0), 0.25, 1e-15);

    Philox4x32 rng(1, streams::kTest);
    std::normal_distribution<double> n;
    const int N = 200000;
    Matrix acc = Matrix::Zero(2, 2);
    const Vector eta = Vector::Zero(3);
    for (int k = 0; k < N; ++k) {
        const Vector c = propose(eta, b, 0, ps, rng, n);
        EXPECT_EQ(c[1], 0.0);
        const Eigen::Vector2d d(c[0], c[2]);
        acc += d * d.transpose();
    }
    const Matrix expected = (2.38 * 2.38 / 2.0) * Hb.inverse();
    acc /= N;
    for (Index i = 0; i < 2; ++i) EXPECT_NEAR(acc(i, i), expected(i, i), 0.05 * expected(i, i));
    EXPECT_NEAR(acc(0, 1), 0.0, 0.05 * expected(0, 0));
}

TEST(Adapt, ScaleMovesTowardTargetAndFreezesAfterBurnIn) {
    BlockPartition b;
    b.blocks = {{0}};
    b.names = {"x"};
    b.frozen = {false};
    AdaptConfig cfg;
    ProposalState ps = init_proposal(b, Matrix::Zero(1, 1));
    std::deque<Vector> hist;
    ps.trials[0] = 50;
    ps.accepts[0] = 0;
    adapt(ps, b, hist, 50, 1000, cfg);
    EXPECT_NEAR(ps.scale[0], std::exp(-0.24), 1e-15);
    EXPECT_EQ(ps.epoch, 1);
    ps.trials[0] = 50;
    ps.accepts[0] = 50;
    adapt(ps, b, hist, 100, 1000, cfg);
    EXPECT_NEAR(ps.scale[0], std::exp(-0.24 + 0.76 / 1.1), 1e-14);
    const double s = ps.scale[0];
    ps.trials[0] = 50;
    adapt(ps, b, hist, 1050, 1000, cfg);  // past burn-in
    adapt(ps, b, hist, 120, 1000, cfg);   // not an epoch boundary
    EXPECT_EQ(ps.scale[0], s);
    EXPECT_EQ(ps.epoch, 2);
}

TEST(Adapt, CovarianceBlendIsCapped) {
    BlockPartition b;
    b.blocks = {{0, 1}};
    b.names = {"x"};
    b.frozen = {false};
    AdaptConfig cfg;
    ProposalState ps = init_proposal(b, Matrix::Zero(2, 2));
    std::deque<Vector> hist;
    Philox4x32 rng(8, streams::kTest);
    std::normal_distribution<double> n;
    for (int k = 0; k < 500; ++k) hist.push_back(Eigen::Vector2d(3.0 * n(rng), 0.1 * n(rng)));
    adapt(ps, b, hist, 50, 1000, cfg);
    Matrix X(500, 2);
    for (int k = 0; k < 500; ++k) X.row(k) = hist[static_cast<std::size_t>(k)].transpose();
    X.rowwise() -= X.colwise().mean();
    const Matrix emp = X.transpose() * X / 499.0;
    const Matrix expected = 0.7 * emp + 0.3 * Matrix::Identity(2, 2);
    EXPECT_LT((ps.chol[0] * ps.chol[0].transpose() - expected).norm(), 1e-10);
}

TEST(Cholesky, JitterAndFailure) {
    Matrix singular(2, 2);
    singular << 1, 1, 1, 1;
    EXPECT_TRUE(jittered_cholesky(singular).has_value());
    EXPECT_FALSE(jittered_cholesky(-Matrix::Identity(2, 2)).has_value());
}

TEST(Summary, ConstantSamplesGiveDegenerateIntervals) {
    const NetworkCase c = builtin_case_ieee9();
    const PriorSpec prior = default_priors(c);
    const ParamLayout layout(c);
    const Matrix X = Matrix::Zero(20, 21);
    const Summary s = summarize(X, prior, layout, to_physical(Vector::Zero(21), prior));
    for (const auto& p : s.params) {
        EXPECT_EQ(p.std, 0.0);
        EXPECT_DOUBLE_EQ(p.q025, p.mean);
        EXPECT_DOUBLE_EQ(p.q975, p.mean);
        EXPECT_NEAR(*p.rel_err, 0.0, 1e-15);
    }
    EXPECT_EQ(s.covered, 21);
    EXPECT_THROW(summarize(Matrix::Zero(5, 21), prior, layout), InvalidInput);
}

TEST(Summary, RollupMatchesBruteForce) {
    const NetworkCase c = builtin_case_ieee9();
    const PriorSpec prior = default_priors(c);
    const ParamLayout layout(c);
    Philox4x32 rng(12, streams::kTest);
    std::normal_distribution<double> n;
    Matrix X(200, 21);
    for (Index i = 0; i < X.size(); ++i) X(i) = 0.3 + 0.5 * n(rng);
    const ParamVector truth = nominal_params(c);
    std::vector<bool> active(21, true);
    active[7] = false;
    const Summary s = summarize(X, prior, layout, truth, active);
    const Vector t = truth.flat();
    for (ParamClass cls : kParamClasses) {
        double sum = 0.0, mx = 0.0;
        int cnt = 0;
        for (Index i = 0; i < 21; ++i) {
            if (layout.class_of(i) != cls || !active[static_cast<std::size_t>(i)]) continue;
            double mean = 0.0;
            for (Index k = 0; k < 200; ++k) mean += to_physical(X.row(k).transpose(), prior).flat()[i];
            mean /= 200.0;
            const double e = std::abs(mean - t[i]) / t[i];
            sum += e;
            mx = std::max(mx, e);
            ++cnt;
        }
        EXPECT_EQ(s.of(cls).count, cnt);
        EXPECT_NEAR(s.of(cls).mean_err, sum / cnt, 1e-12);
        EXPECT_NEAR(s.of(cls).max_err, mx, 1e-12);
    }
    EXPECT_EQ(s.with_truth, 20);
    std::vector<double> v{1.0, 2.0, 3.0, 4.0};
    EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(quantile_sorted(v, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(quantile_sorted(v, 1.0), 4.0);
}

TEST(StagewiseInit, RecoversNoiselessTruth) {
    const NetworkCase c = builtin_case_ieee9();
    const TruthSpec truth = draw_truth(c, 1, {}, table_generator_truth_ieee9());
    SynthesisConfig sc;
    sc.noise.snr_db = kInf;
    const PriorSpec prior = default_priors(c);
    const PhysicsPosterior post(c, prior, synthesize(c, truth, default_experiments_ieee9(), sc),
                                default_channels_ieee9());
    const InitResult r = stagewise_init(post);
    const Vector eta_true = to_latent(truth.theta_true, prior);
    EXPECT_LT((r.eta0 - eta_true).cwiseAbs().maxCoeff(), 0.1);
    EXPECT_LT((r.H0 - r.H0.transpose()).cwiseAbs().maxCoeff(), 1e-8 * r.H0.cwiseAbs().maxCoeff());
    const Eigen::SelfAdjointEigenSolver<Matrix> es(r.H0);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-8 * es.eigenvalues().maxCoeff());
    EXPECT_GT(r.forward_solves, 0);
}
