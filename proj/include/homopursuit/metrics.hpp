#pragma once

#include <utility>
#include <vector>

#include "homopursuit/model.hpp"

namespace homopursuit {

/**
 * Ground truth in its canonical representation: C*, R* are the leading
 * left singular vectors of the mode-1 / mode-2 unfoldings of B*, Sigma_C
 * and Sigma_R the matching singular values, and L1_i* = U_i Sigma_i^{1/2},
 * L2_i* = V_i Sigma_i^{1/2} from the SVD of the core slice
 * G_i* = C*^T B_i* R*.
 */
struct TrueParamPack {
    ParameterSet theta_star;
    Tensor3 B_star;
    Vector sigma_C;
    Vector sigma_R;
    std::vector<Vector> sigma_i;  // r singular values of each G_i*

    /// min(sigma_K1(Sigma_C), sigma_K2(Sigma_R)).
    double sigma_min() const;
};

/// Canonical pack from an arbitrary coefficient tensor with the given ranks.
TrueParamPack true_pack_from_tensor(const Tensor3& b_star, Index K1, Index K2, Index r);

/// Same canonical pack, computed from a factorization of B*.  Exact zero
/// rows of truth.C / truth.R stay exactly zero in C* / R*.
TrueParamPack true_pack_from_factors(const ParameterSet& truth);

struct AlignmentTransforms {
    Matrix Q1;
    Matrix Q2;
    std::vector<Matrix> P;
    double objective = 0.0;
    int sweeps = 0;
    bool converged = false;
};

AlignmentTransforms identity_transforms(Index K1, Index K2, Index r, Index n);

/// The squared gauge-aligned distance evaluated at fixed transforms:
///   ||(C Q1 - C*) S_C||^2 + ||(R Q2 - R*) S_R||^2
///   + sum_i ||(Q1^{-1} L1_i P_i - L1_i*) S_i^{1/2}||^2
///   + sum_i ||(Q2^{-1} L2_i P_i^{-T} - L2_i*) S_i^{1/2}||^2
double dist_objective(const ParameterSet& theta, const TrueParamPack& truth, const AlignmentTransforms& t);

/// Searches the transforms by block-alternating minimization and returns
/// them with the achieved objective.  Every evaluated point is feasible, so
/// the returned value upper-bounds the infimum over the general linear
/// groups.  Stops when a sweep improves by less than 1e-12 (relative) or
/// after max_sweeps; `converged` reports which.
AlignmentTransforms align_and_dist(const ParameterSet& theta, const TrueParamPack& truth, int max_sweeps = 200);

/// ||U U^T - V V^T||_F^2 after orthonormalizing both column spaces.
double proj_frob_error(const Matrix& u_hat, const Matrix& u_star);

struct TensorErrors {
    double total = 0.0;             // ||B_hat - B*||_F^2
    double per_individual_avg = 0.0;  // total / n
};

TensorErrors tensor_errors(const Tensor3& b_hat, const Tensor3& b_star);

}  // namespace homopursuit
