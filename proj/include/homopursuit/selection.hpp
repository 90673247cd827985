#pragma once

#include <vector>

#include "homopursuit/optim.hpp"

namespace homopursuit {

/// M_C = sum_i C_i C_i^T and M_R = sum_i R_i R_i^T with their spectra.
struct AggregateSubspace {
    Matrix M_C;
    Matrix M_R;
    Vector eigvals_C;  // nonincreasing
    Vector eigvals_R;
    Matrix eigvecs_C;  // columns paired with eigvals_C
    Matrix eigvecs_R;
};

struct RankChoice {
    Index r = 0;
    Index K1 = 0;
    Index K2 = 0;
    std::vector<double> ratios_r;   // entry k-1 is the ratio at index k
    std::vector<double> ratios_K1;
    std::vector<double> ratios_K2;
};

AggregateSubspace aggregate_subspaces(const HeteroFit& fits);

/// C0 = top-K1 eigenvectors of M_C, R0 = top-K2 eigenvectors of M_R,
/// L1_i = C0^T C_i, L2_i = R0^T R_i.
ParameterSet initialize_shared(const HeteroFit& fits, Index K1, Index K2);

/// (a_k + delta) / (a_{k+1} + delta) for k = 1..count over a nonincreasing
/// sequence `a` (must hold at least count + 1 entries).
std::vector<double> ridge_ratios(const Vector& a, Index count, double delta);

/// Smallest 1-based index attaining the maximum ratio.
Index argmax_ratio(const std::vector<double>& ratios);

/// Per-index sums over individuals of sigma_k(B_i), k = 1..rank.
Vector summed_singular_values(const HeteroFit& fits);

/// Ridge-type ratio estimate of r from fits computed at rank rbar.
Index select_rank_r(const HeteroFit& fits, double delta1, Index rbar, std::vector<double>* ratios = nullptr);

/// Same estimator applied to precomputed singular-value sums.
Index select_rank_r(const Vector& sigma_sums, double delta1, Index rbar, std::vector<double>* ratios = nullptr);

/// Ridge-type ratio estimate of K over consecutive eigenvalues,
/// searching k = 1..search_max.
Index select_subspace_rank(const Vector& eigvals, double delta2, Index search_max,
                           std::vector<double>* ratios = nullptr);

/// (K1, K2) from both spectra of an aggregate; search_max <= 0 selects
/// default_search_max(r, p) per mode.
std::pair<Index, Index> select_subspace_ranks(const AggregateSubspace& agg, Index r, double delta2,
                                              Index search_max);

/// Default search bound min(4 r, p - 1) for K.
Index default_search_max(Index r, Index p);

/// Ridge constants 0.1 * n * d * m^{-1/4} and 0.1 * n * d * m^{-1/2}, where d
/// is max(p1, p2) for dense fits or max(s1, s2) for sparse ones.
double default_delta1(Index n, double m, Index d);
double default_delta2(Index n, double m, Index d);

struct SelectionOptions {
    Index rbar = 5;
    std::optional<double> delta1;  // defaults from default_delta1
    std::optional<double> delta2;
    std::optional<Index> search_max;
    // Preconditioner damping (relative to trace / dim) for the fits at rbar.
    // Those fits are overparameterized, so their Gram matrices are close to
    // singular and the undamped scaled step is unstable.
    double overfit_ridge = 1e-2;
};

struct SelectionResult {
    RankChoice choice;
    HeteroFit fits_at_rbar;
    HeteroFit fits_at_r;
    AggregateSubspace aggregate;
};

/// Full data-driven pipeline: per-individual fits at rbar (sparse when
/// cfg.sparsity is set), choose r, refit at r, aggregate, choose K1, K2.
/// cfg.ranks is ignored; link, eta, iterations and sparsity are used.
SelectionResult select_ranks(const Dataset& data, const FitConfig& cfg, const SelectionOptions& opts = {});

/// Per-individual fit at rank r from the spectral starting point.
HeteroFit fit_individuals(const Dataset& data, const FitConfig& cfg, Index r);

}  // namespace homopursuit
