#include <gtest/gtest.h>

#include <numeric>

#include "homopursuit/errors.hpp"
#include "homopursuit/linalg.hpp"
#include "homopursuit/optim.hpp"
#include "support.hpp"

using namespace homopursuit;
using hp_test::gaussian;
using hp_test::max_abs;

namespace {

struct Problem {
    ParameterSet truth;
    Dataset data;
};

Problem noiseless(Index p1, Index p2, Index K1, Index K2, Index r, Index n, Index m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ParameterSet t = hp_test::random_params(p1, p2, K1, K2, r, n, rng);
    t.C = orthonormal_basis(t.C);
    t.R = orthonormal_basis(t.R);
    Dataset d = hp_test::linear_data(coefficient_tensor(t), m, rng);
    return {std::move(t), std::move(d)};
}

FitConfig config_for(const ParameterSet& t, int iters, double tol = 0.0) {
    FitConfig cfg;
    cfg.ranks = Ranks{t.r(), t.K1(), t.K2()};
    cfg.max_iters = iters;
    cfg.tol = tol;
    return cfg;
}

HeteroFit hetero_from(const ParameterSet& t) {
    HeteroFit h;
    for (Index i = 0; i < t.n(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        h.C.push_back(t.C * t.L1[k]);
        h.R.push_back(t.R * t.L2[k]);
    }
    return balance(h);
}

double tensor_gap(const Tensor3& a, const Tensor3& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s = std::max(s, std::abs(a.data()[k] - b.data()[k]));
    return s;
}

}  // namespace

TEST(HardThreshold, KeepsLargestRowsTiesToLowerIndex) {
    Matrix m(5, 2);
    m << 1, 0,
         0, 3,
         3, 0,
         0, 1,
         2, 0;
    auto [out, kept] = hard_threshold_rows(m, 3);
    EXPECT_EQ(kept, (IndexSet{1, 2, 4}));
    EXPECT_EQ(out.row(0).squaredNorm(), 0.0);
    EXPECT_EQ(out.row(2), m.row(2));

    // rows 0, 3 tie at norm 1: the lower index wins
    auto [out4, kept4] = hard_threshold_rows(m, 4);
    EXPECT_EQ(kept4, (IndexSet{0, 1, 2, 4}));

    Matrix ties = Matrix::Ones(4, 1);
    EXPECT_EQ(hard_threshold_rows(ties, 2).second, (IndexSet{0, 1}));
    EXPECT_THROW(hard_threshold_rows(m, 0), ArgumentError);
    EXPECT_THROW(hard_threshold_rows(m, 6), ArgumentError);
}

TEST(ScaledHardThreshold, FullSupportIsIdentity) {
    std::mt19937_64 rng(1);
    const Matrix c = gaussian(4, 2, rng);
    const Matrix g = gaussian(5, 2, rng);
    auto [out, kept] = scaled_hard_threshold(c, g.transpose() * g, 4);
    EXPECT_EQ(out, c);
    EXPECT_EQ(kept, (IndexSet{0, 1, 2, 3}));
}

TEST(ScaledHardThreshold, SelectsByGramWeightedNorm) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix c = gaussian(8, 3, rng);
        const Matrix h = gaussian(6, 3, rng);
        const Matrix gram = h.transpose() * h;
        auto [out, kept] = scaled_hard_threshold(c, gram, 3, 0.0);
        // oracle: the weighted row norms are diag(C G C^T)
        const Vector w = (c * gram * c.transpose()).diagonal();
        std::vector<Index> order(8);
        std::iota(order.begin(), order.end(), Index{0});
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return w(a) > w(b); });
        IndexSet expect(order.begin(), order.begin() + 3);
        std::sort(expect.begin(), expect.end());
        EXPECT_EQ(kept, expect);
        for (Index row = 0; row < 8; ++row) {
            const bool in = std::binary_search(kept.begin(), kept.end(), row);
            if (in) {
                EXPECT_LT((out.row(row) - c.row(row)).cwiseAbs().maxCoeff(), 1e-10);
            } else {
                EXPECT_EQ(out.row(row).cwiseAbs().maxCoeff(), 0.0);
            }
        }
    }
}

TEST(FitConfig, ValidateRejectsBadSettings) {
    FitConfig cfg;
    cfg.ranks = Ranks{2, 3, 3};
    EXPECT_NO_THROW(cfg.validate(5, 5));
    cfg.eta = -1.0;
    EXPECT_THROW(cfg.validate(5, 5), ArgumentError);
    cfg.eta = 0.1;
    cfg.ranks = Ranks{4, 3, 3};
    EXPECT_THROW(cfg.validate(5, 5), ArgumentError);
    cfg.ranks = Ranks{1, 6, 3};
    EXPECT_THROW(cfg.validate(5, 5), ArgumentError);
    cfg.ranks = Ranks{1, 2, 2};
    cfg.sparsity = Sparsity{0, 2};
    EXPECT_THROW(cfg.validate(5, 5), ArgumentError);
    EXPECT_EQ(FitConfig::defaults(LinkKind::Logistic).eta, 0.5);
}

TEST(FitHomogeneous, TruthIsFixedPoint) {
    const Problem pb = noiseless(6, 5, 2, 2, 1, 3, 40, 3);
    const FitReport rep = fit_homogeneous(pb.data, pb.truth, config_for(pb.truth, 1));
    EXPECT_EQ(rep.iters, 1);
    EXPECT_LT(max_abs(rep.theta.C - pb.truth.C), 1e-12);
    EXPECT_LT(max_abs(rep.theta.R - pb.truth.R), 1e-12);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_LT(max_abs(rep.theta.L1[i] - pb.truth.L1[i]), 1e-12);
}

TEST(FitHomogeneousSparse, TruthIsFixedPoint) {
    Problem pb = noiseless(8, 8, 2, 2, 1, 3, 40, 4);
    // zero rows outside the first four
    pb.truth.C.bottomRows(4).setZero();
    pb.truth.R.bottomRows(4).setZero();
    std::mt19937_64 rng(40);
    pb.data = hp_test::linear_data(coefficient_tensor(pb.truth), 40, rng);
    FitConfig cfg = config_for(pb.truth, 1);
    cfg.sparsity = Sparsity{4, 4};
    const FitReport rep = fit_homogeneous_sparse(pb.data, pb.truth, cfg);
    EXPECT_LT(tensor_gap(coefficient_tensor(rep.theta), coefficient_tensor(pb.truth)), 1e-12);
    ASSERT_TRUE(rep.active_rows.has_value());
    EXPECT_EQ(rep.active_rows->S1, (IndexSet{0, 1, 2, 3}));
    EXPECT_EQ(rep.theta.C.bottomRows(4).cwiseAbs().maxCoeff(), 0.0);
}

TEST(FitHeterogeneous, TruthIsFixedPoint) {
    const Problem pb = noiseless(6, 5, 2, 2, 2, 2, 40, 5);
    const HeteroFit init = hetero_from(pb.truth);
    FitConfig cfg = config_for(pb.truth, 1);
    const HeteroFit a = fit_heterogeneous(pb.data, init, cfg);
    cfg.sparsity = Sparsity{6, 5};
    const HeteroFit b = fit_heterogeneous_sparse(pb.data, init, cfg);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_LT(max_abs(a.C[i] - init.C[i]), 1e-12);
        EXPECT_LT(max_abs(b.R[i] - init.R[i]), 1e-12);
    }
}

TEST(FitHeterogeneous, SingleIndividualRecovery) {
    // n = 1 is ordinary scaled-GD low-rank trace regression
    const Problem pb = noiseless(8, 8, 2, 2, 2, 1, 80, 6);
    FitConfig cfg = config_for(pb.truth, 600);
    cfg.eta = 0.5;
    const HeteroFit init = spectral_hetero_init(pb.data, 2, LinkKind::Linear);
    const HeteroFit fit = fit_heterogeneous(pb.data, init, cfg);
    const Matrix b = pb.truth.coefficient(0);
    EXPECT_LT((fit.coefficient(0) - b).norm() / b.norm(), 1e-6);
}

TEST(FitHeterogeneous, IndividualsAreIndependent) {
    const Problem pb = noiseless(5, 5, 2, 2, 1, 3, 30, 7);
    const FitConfig cfg = config_for(pb.truth, 20);
    const HeteroFit init = spectral_hetero_init(pb.data, 1, LinkKind::Linear);
    const HeteroFit fit = fit_heterogeneous(pb.data, init, cfg);
    const std::vector<Index> perm{2, 0, 1};
    HeteroFit pinit;
    for (Index i : perm) {
        pinit.C.push_back(init.C[static_cast<std::size_t>(i)]);
        pinit.R.push_back(init.R[static_cast<std::size_t>(i)]);
    }
    const HeteroFit pfit = fit_heterogeneous(pb.data.subset(perm), pinit, cfg);
    for (std::size_t k = 0; k < 3; ++k) {
        EXPECT_EQ(pfit.coefficient(static_cast<Index>(k)), fit.coefficient(perm[k]));
    }
}

TEST(FitHomogeneousSparse, FullSupportMatchesDenseTrajectory) {
    const Problem pb = noiseless(6, 5, 2, 2, 1, 3, 30, 8);
    std::mt19937_64 rng(80);
    ParameterSet init = pb.truth;
    init.C += gaussian(6, 2, rng, 0.1);
    init.R += gaussian(5, 2, rng, 0.1);
    for (int iters : {1, 5, 25}) {
        FitConfig cfg = config_for(pb.truth, iters);
        const FitReport dense = fit_homogeneous(pb.data, init, cfg);
        cfg.sparsity = Sparsity{6, 5};
        const FitReport sparse = fit_homogeneous_sparse(pb.data, init, cfg);
        EXPECT_LT(tensor_gap(coefficient_tensor(dense.theta), coefficient_tensor(sparse.theta)), 1e-10);
    }
}

TEST(FitHeterogeneousSparse, FullSupportMatchesDense) {
    const Problem pb = noiseless(6, 5, 2, 2, 1, 2, 30, 9);
    const HeteroFit init = spectral_hetero_init(pb.data, 1, LinkKind::Linear);
    FitConfig cfg = config_for(pb.truth, 15);
    const HeteroFit dense = fit_heterogeneous(pb.data, init, cfg);
    cfg.sparsity = Sparsity{6, 5};
    const HeteroFit sparse = fit_heterogeneous_sparse(pb.data, init, cfg);
    for (Index i = 0; i < 2; ++i) EXPECT_LT(max_abs(dense.coefficient(i) - sparse.coefficient(i)), 1e-10);
}

TEST(FitHeterogeneousSparse, ZeroRowsStayZero) {
    Problem pb = noiseless(8, 8, 2, 2, 1, 2, 60, 10);
    FitConfig cfg = config_for(pb.truth, 30);
    cfg.sparsity = Sparsity{3, 3};
    const HeteroFit init = spectral_hetero_init(pb.data, 1, LinkKind::Linear);
    const HeteroFit fit = fit_heterogeneous_sparse(pb.data, init, cfg);
    ASSERT_EQ(fit.active_rows.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        const IndexSet& s1 = fit.active_rows[i].S1;
        ASSERT_EQ(s1.size(), 3u);
        for (Index row = 0; row < 8; ++row) {
            if (!std::binary_search(s1.begin(), s1.end(), row)) EXPECT_EQ(fit.C[i].row(row).squaredNorm(), 0.0);
        }
    }
}

TEST(FitHomogeneous, NoiselessLocalRecovery) {
    for (std::uint64_t seed : {21, 22, 23}) {
        const Problem pb = noiseless(8, 8, 2, 2, 1, 6, 50, seed);
        std::mt19937_64 rng(seed + 100);
        ParameterSet init = pb.truth;
        init.C += gaussian(8, 2, rng, 1e-3);
        init.R += gaussian(8, 2, rng, 1e-3);
        for (auto& l : init.L1) l += gaussian(2, 1, rng, 1e-3);
        for (auto& l : init.L2) l += gaussian(2, 1, rng, 1e-3);
        const FitReport rep = fit_homogeneous(pb.data, init, config_for(pb.truth, 300));
        EXPECT_LT(tensor_gap(coefficient_tensor(rep.theta), coefficient_tensor(pb.truth)), 1e-6) << seed;
    }
}

TEST(FitHomogeneous, LossIsMonotoneNearTruth) {
    const Problem pb = noiseless(8, 8, 2, 2, 1, 4, 60, 11);
    std::mt19937_64 rng(110);
    ParameterSet init = pb.truth;
    init.C += gaussian(8, 2, rng, 0.05);
    init.R += gaussian(8, 2, rng, 0.05);
    for (auto& l : init.L1) l += gaussian(2, 1, rng, 0.05);
    const FitReport rep = fit_homogeneous(pb.data, init, config_for(pb.truth, 50));
    ASSERT_EQ(rep.loss_trace.size(), 51u);
    for (std::size_t t = 1; t < rep.loss_trace.size(); ++t) EXPECT_LE(rep.loss_trace[t], rep.loss_trace[t - 1]);
}

TEST(FitHomogeneous, StopsOnTolerance) {
    const Problem pb = noiseless(6, 6, 2, 2, 1, 3, 40, 12);
    std::mt19937_64 rng(120);
    ParameterSet init = pb.truth;
    init.C += gaussian(6, 2, rng, 0.01);
    const FitConfig cfg = config_for(pb.truth, 5000, 1e-6);
    const FitReport rep = fit_homogeneous(pb.data, init, cfg);
    EXPECT_TRUE(rep.converged);
    EXPECT_LT(rep.iters, 5000);
    EXPECT_EQ(rep.loss_trace.size(), static_cast<std::size_t>(rep.iters) + 1);
}

TEST(FitHomogeneous, DivergenceNamesEta) {
    std::mt19937_64 rng(13);
    const Problem pb = noiseless(6, 6, 2, 2, 1, 3, 20, 13);
    ParameterSet init = pb.truth;
    init.C += gaussian(6, 2, rng, 0.5);
    FitConfig cfg = config_for(pb.truth, 500);
    cfg.eta = 1e6;
    try {
        fit_homogeneous(pb.data, init, cfg);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("eta"), std::string::npos);
    }
}

TEST(FitHomogeneous, MismatchedRanksThrow) {
    const Problem pb = noiseless(6, 6, 2, 2, 1, 3, 20, 14);
    FitConfig cfg = config_for(pb.truth, 5);
    cfg.ranks.K1 = 3;
    EXPECT_THROW(fit_homogeneous(pb.data, pb.truth, cfg), ArgumentError);
    cfg = config_for(pb.truth, 5);
    EXPECT_THROW(fit_homogeneous_sparse(pb.data, pb.truth, cfg), ArgumentError);
}

TEST(Balance, CanonicalFactorsSameCoefficients) {
    std::mt19937_64 rng(15);
    HeteroFit h;
    h.C = {gaussian(5, 2, rng), gaussian(5, 2, rng)};
    h.R = {gaussian(4, 2, rng), gaussian(4, 2, rng)};
    const HeteroFit b = balance(h);
    for (Index i = 0; i < 2; ++i) {
        const auto k = static_cast<std::size_t>(i);
        EXPECT_LT(max_abs(b.coefficient(i) - h.coefficient(i)), 1e-12);
        EXPECT_LT(max_abs(b.C[k].transpose() * b.C[k] - b.R[k].transpose() * b.R[k]), 1e-10);
        const Matrix g = b.C[k].transpose() * b.C[k];
        EXPECT_NEAR(g(0, 1), 0.0, 1e-10);
    }
}

TEST(SpectralInit, ConsistentForLargeSamples) {
    // E[(y - g'(0)) X] = B for standard Gaussian designs and the linear link
    std::mt19937_64 rng(16);
    ParameterSet t = hp_test::random_params(4, 3, 1, 1, 1, 1, rng);
    const Dataset d = hp_test::linear_data(coefficient_tensor(t), 20000, rng);
    const HeteroFit init = spectral_hetero_init(d, 1, LinkKind::Linear);
    const Matrix b = t.coefficient(0);
    EXPECT_LT((init.coefficient(0) - b).norm() / b.norm(), 0.05);
}

TEST(SpectralInit, SparsityZeroesRowsAndColumns) {
    std::mt19937_64 rng(17);
    ParameterSet t = hp_test::random_params(6, 6, 1, 1, 1, 2, rng);
    const Dataset d = hp_test::linear_data(coefficient_tensor(t), 30, rng);
    const HeteroFit init = spectral_hetero_init(d, 1, LinkKind::Linear, Sparsity{2, 3});
    for (std::size_t i = 0; i < 2; ++i) {
        int nz_c = 0, nz_r = 0;
        for (Index row = 0; row < 6; ++row) {
            nz_c += init.C[i].row(row).squaredNorm() > 0.0 ? 1 : 0;
            nz_r += init.R[i].row(row).squaredNorm() > 0.0 ? 1 : 0;
        }
        EXPECT_LE(nz_c, 2);
        EXPECT_LE(nz_r, 3);
    }
}
