#include "homopursuit/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "homopursuit/errors.hpp"

namespace homopursuit {

namespace {

constexpr double kSpdFloor = 1e-12;
constexpr double kRetryRidge = 1e-6;

double trace_scale(const Matrix& a) {
    const double tr = a.trace();
    return a.rows() > 0 ? tr / static_cast<double>(a.rows()) : 0.0;
}

}  // namespace

bool all_finite(const Matrix& m) {
    return m.allFinite();
}

SvdResult thin_svd(const Matrix& m, Index k) {
    const Index full = std::min(m.rows(), m.cols());
    if (k < 1 || k > full) {
        throw ArgumentError("thin_svd: k=" + std::to_string(k) + " outside [1, " + std::to_string(full) + "]");
    }
    if (!m.allFinite()) throw NumericError("thin_svd: non-finite input");

    Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    SvdResult out;
    out.k = k;
    out.U = svd.matrixU().leftCols(k);
    out.S = svd.singularValues().head(k);
    out.V = svd.matrixV().leftCols(k);
    for (Index j = 0; j < k; ++j) {
        Index arg = 0;
        double best = -1.0;
        for (Index i = 0; i < out.U.rows(); ++i) {
            const double a = std::abs(out.U(i, j));
            if (a > best) {
                best = a;
                arg = i;
            }
        }
        if (out.U(arg, j) < 0.0) {
            out.U.col(j) *= -1.0;
            out.V.col(j) *= -1.0;
        }
    }
    return out;
}

Vector singular_values(const Matrix& m) {
    if (!m.allFinite()) throw NumericError("singular_values: non-finite input");
    Eigen::BDCSVD<Matrix> svd(m);
    return svd.singularValues();
}

SymEigen sym_eigen_desc(const Matrix& a) {
    if (a.rows() != a.cols()) throw ArgumentError("sym_eigen_desc: matrix not square");
    if (!a.allFinite()) throw NumericError("sym_eigen_desc: non-finite input");
    const Matrix sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
    if (es.info() != Eigen::Success) throw NumericError("sym_eigen_desc: eigensolver failed");
    // Eigen returns ascending order.
    SymEigen out;
    out.values = es.eigenvalues().reverse();
    out.vectors = es.eigenvectors().rowwise().reverse();
    return out;
}

SpdRoots spd_sqrt(const Matrix& a) {
    if (a.rows() != a.cols() || a.rows() == 0) throw ArgumentError("spd_sqrt: matrix not square");
    if (!a.allFinite()) throw NumericError("spd_sqrt: non-finite input");
    const Matrix sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
    const double floor = kSpdFloor * trace_scale(sym);
    const Vector& lam = es.eigenvalues();
    if (!(floor > 0.0) || lam.minCoeff() < floor) {
        throw SingularityError("spd_sqrt: matrix is not numerically positive definite");
    }
    const Matrix& v = es.eigenvectors();
    SpdRoots out;
    out.sqrt = v * lam.cwiseSqrt().asDiagonal() * v.transpose();
    out.inv_sqrt = v * lam.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
    return out;
}

Matrix spd_inverse(const Matrix& a, double ridge_eps, double damping) {
    if (a.rows() != a.cols() || a.rows() == 0) throw ArgumentError("spd_inverse: matrix not square");
    if (!a.allFinite()) throw NumericError("spd_inverse: non-finite input");
    Matrix sym = 0.5 * (a + a.transpose());
    const double scale = trace_scale(sym);
    if (!(scale > 0.0)) throw SingularityError("spd_inverse: preconditioner has zero trace");
    if (damping > 0.0) sym.diagonal().array() += damping * scale;

    auto attempt = [&](double eps, Matrix& out) {
        Matrix reg = sym;
        if (eps > 0.0) reg.diagonal().array() += eps * scale;
        Eigen::SelfAdjointEigenSolver<Matrix> es(reg);
        if (es.info() != Eigen::Success) return false;
        const Vector& lam = es.eigenvalues();
        if (lam.minCoeff() < kSpdFloor * scale) return false;
        out = es.eigenvectors() * lam.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
        return true;
    };

    // The ridge touches only matrices conditioned worse than 1 / ridge_eps;
    // anything better is inverted as is, which keeps the step gauge equivariant.
    Matrix inv;
    Eigen::SelfAdjointEigenSolver<Matrix> plain(sym, Eigen::EigenvaluesOnly);
    if (plain.info() == Eigen::Success && plain.eigenvalues().minCoeff() >= ridge_eps * scale &&
        attempt(0.0, inv))
        return inv;
    if (attempt(ridge_eps, inv)) return inv;
    if (attempt(std::max(ridge_eps, kRetryRidge), inv)) return inv;
    throw SingularityError("spd_inverse: preconditioner singular after ridge regularization");
}

Matrix orthonormal_basis(const Matrix& m) {
    if (!m.allFinite()) throw NumericError("orthonormal_basis: non-finite input");
    const Index k = std::min(m.rows(), m.cols());
    Eigen::HouseholderQR<Matrix> qr(m);
    return qr.householderQ() * Matrix::Identity(m.rows(), k);
}

}  // namespace homopursuit
