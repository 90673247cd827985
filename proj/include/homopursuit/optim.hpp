#pragma once

#include <optional>
#include <vector>

#include "homopursuit/model.hpp"

namespace homopursuit {

using IndexSet = std::vector<Index>;  // sorted ascending

struct Sparsity {
    Index s1 = 0;
    Index s2 = 0;
};

struct Ranks {
    Index r = 1;
    Index K1 = 1;
    Index K2 = 1;

    bool operator==(const Ranks&) const = default;
};

/// Settings shared by all four fitting routines.
///
/// `eta` is a per-sample step: the loss is a sum over samples, so each
/// block update divides eta by the number of samples feeding that block
/// (m_i for individual blocks, the mean m for the shared factors).  With
/// that normalization eta = 1 is roughly a Newton step for the linear link.
struct FitConfig {
    LinkKind link = LinkKind::Linear;
    double eta = 0.1;
    int max_iters = 300;
    double tol = 1e-10;  // stop when |f_t - f_{t-1}| <= tol * (1 + |f_{t-1}|); 0 disables
    Ranks ranks;
    std::optional<Sparsity> sparsity;
    double ridge_eps = 1e-10;  // guard for near-singular preconditioners only
    double damping = 0.0;      // relative ridge added to every preconditioner
    unsigned seed = 0;
    int threads = 1;

    static double default_eta(LinkKind link) { return link == LinkKind::Linear ? 0.1 : 0.5; }
    static FitConfig defaults(LinkKind link);

    /// Throws ArgumentError on inconsistent settings for the given covariate dims.
    void validate(Index p1, Index p2) const;
};

struct ActiveRows {
    IndexSet S1;
    IndexSet S2;
};

struct FitReport {
    ParameterSet theta;
    std::vector<double> loss_trace;  // loss at iterates 0..iters
    int iters = 0;
    bool converged = false;
    std::optional<ActiveRows> active_rows;
};

/// Per-individual factor pairs B_i = C_i R_i^T.
struct HeteroFit {
    std::vector<Matrix> C;  // p1 x r each
    std::vector<Matrix> R;  // p2 x r each
    std::vector<int> iters;
    std::vector<bool> converged;
    std::vector<ActiveRows> active_rows;  // filled by the sparse variant only

    Index n() const noexcept { return static_cast<Index>(C.size()); }
    Index rank() const noexcept { return C.empty() ? 0 : C.front().cols(); }
    Matrix coefficient(Index i) const;
    Tensor3 coefficient_tensor() const;
};

/// Keep the s rows of largest Euclidean norm (ties to the lower index) and
/// zero the rest.  Returns the thresholded matrix and the kept rows.
std::pair<Matrix, IndexSet> hard_threshold_rows(const Matrix& m, Index s);

/// HT(C G^{1/2}, s) G^{-1/2} for a Gram matrix G.  G is regularized by
/// ridge_eps * trace / dim before the square root.  With s == rows(C) the
/// input is returned untouched.
std::pair<Matrix, IndexSet> scaled_hard_threshold(const Matrix& c, const Matrix& gram, Index s,
                                                  double ridge_eps = 1e-10);

/// Scaled gradient descent on the shared-subspace model.
FitReport fit_homogeneous(const Dataset& data, const ParameterSet& init, const FitConfig& cfg);

/// Scaled gradient descent with scaled hard thresholding of C and R.
FitReport fit_homogeneous_sparse(const Dataset& data, const ParameterSet& init, const FitConfig& cfg);

/// Independent per-individual low-rank scaled gradient descent (cfg.ranks.r).
HeteroFit fit_heterogeneous(const Dataset& data, const HeteroFit& init, const FitConfig& cfg);

/// Per-individual scaled gradient descent with scaled hard thresholding.
HeteroFit fit_heterogeneous_sparse(const Dataset& data, const HeteroFit& init, const FitConfig& cfg);

/// Moment-based starting point for the per-individual fits: the rank-r
/// truncated SVD of sum_j (Y_ij - g'(0)) X_ij / (m_i g''(0)), split as
/// C_i = U S^{1/2}, R_i = V S^{1/2}.  With sparsity levels the moment
/// matrix keeps only its s1 largest rows and s2 largest columns first.
HeteroFit spectral_hetero_init(const Dataset& data, Index r, LinkKind link,
                               const std::optional<Sparsity>& sparsity = std::nullopt);

/// Re-express every B_i = C_i R_i^T in the balanced SVD form
/// C_i = U S^{1/2}, R_i = V S^{1/2} (same coefficients, canonical factors).
HeteroFit balance(const HeteroFit& fit);

}  // namespace homopursuit
