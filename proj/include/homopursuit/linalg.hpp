#pragma once

#include <utility>

#include "homopursuit/tensor.hpp"

namespace homopursuit {

struct SvdResult {
    Matrix U;  // rows x k, orthonormal columns
    Vector S;  // k values, nonincreasing
    Matrix V;  // cols x k, orthonormal columns
    Index k = 0;
};

/// Top-k singular triplets.  Each left singular vector is signed so that its
/// largest-magnitude entry (first one on ties) is positive; V follows.
SvdResult thin_svd(const Matrix& m, Index k);

/// All singular values, nonincreasing.
Vector singular_values(const Matrix& m);

struct SymEigen {
    Vector values;   // nonincreasing
    Matrix vectors;  // column j pairs with values(j)
};

/// Eigen-decomposition of the symmetric part of `a`, sorted largest first.
SymEigen sym_eigen_desc(const Matrix& a);

struct SpdRoots {
    Matrix sqrt;
    Matrix inv_sqrt;
};

/// A^{1/2} and A^{-1/2} of a symmetric positive definite matrix.  Throws
/// SingularityError when an eigenvalue falls below 1e-12 * trace(A) / dim.
SpdRoots spd_sqrt(const Matrix& a);

/// Inverse of a symmetric PSD preconditioner.  Returned unregularized when
/// its smallest eigenvalue is at least ridge_eps * trace / dim; otherwise
/// that ridge is added to the diagonal, and if the result is still
/// numerically singular the solve is retried once with a 1e-6 ridge.
/// `damping` * trace / dim is added unconditionally beforehand.
Matrix spd_inverse(const Matrix& a, double ridge_eps, double damping = 0.0);

/// Orthonormal basis (thin Householder Q) of the column space of `m`.
Matrix orthonormal_basis(const Matrix& m);

bool all_finite(const Matrix& m);

}  // namespace homopursuit
