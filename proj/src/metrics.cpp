#include "homopursuit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/QR>
#include <unsupported/Eigen/MatrixFunctions>

#include "homopursuit/errors.hpp"
#include "homopursuit/linalg.hpp"

namespace homopursuit {

double TrueParamPack::sigma_min() const {
    return std::min(sigma_C(sigma_C.size() - 1), sigma_R(sigma_R.size() - 1));
}

namespace {

// Sign each column of `u` so its largest-magnitude entry is positive, flipping
// the paired column of `w` too.
void fix_signs(Matrix& u, Matrix& w) {
    for (Index j = 0; j < u.cols(); ++j) {
        Index best = 0;
        for (Index i = 1; i < u.rows(); ++i) {
            if (std::abs(u(i, j)) > std::abs(u(best, j))) best = i;
        }
        if (u(best, j) < 0.0) {
            u.col(j) *= -1.0;
            w.col(j) *= -1.0;
        }
    }
}

void fill_loadings(TrueParamPack& pack, const std::vector<Matrix>& cores, Index r) {
    pack.theta_star.L1.clear();
    pack.theta_star.L2.clear();
    pack.sigma_i.clear();
    for (const Matrix& g : cores) {
        const Index k = std::min<Index>(r, std::min(g.rows(), g.cols()));
        const SvdResult s = thin_svd(g, k);
        const Vector root = s.S.array().sqrt();
        pack.theta_star.L1.push_back(s.U * root.asDiagonal());
        pack.theta_star.L2.push_back(s.V * root.asDiagonal());
        pack.sigma_i.push_back(s.S);
    }
}

}  // namespace

TrueParamPack true_pack_from_tensor(const Tensor3& b_star, Index K1, Index K2, Index r) {
    const Index p1 = b_star.dim(1), p2 = b_star.dim(2), n = b_star.dim(3);
    if (K1 < 1 || K1 > p1 || K2 < 1 || K2 > p2 || r < 1 || r > std::min(K1, K2)) {
        throw ArgumentError("true_pack_from_tensor: ranks out of range");
    }
    TrueParamPack pack;
    pack.B_star = b_star;
    const SvdResult s1 = thin_svd(matricize(b_star, 1), K1);
    const SvdResult s2 = thin_svd(matricize(b_star, 2), K2);
    pack.theta_star.C = s1.U;
    pack.theta_star.R = s2.U;
    pack.sigma_C = s1.S;
    pack.sigma_R = s2.S;
    std::vector<Matrix> cores;
    cores.reserve(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) cores.push_back(s1.U.transpose() * b_star.slice(i) * s2.U);
    fill_loadings(pack, cores, r);
    return pack;
}

TrueParamPack true_pack_from_factors(const ParameterSet& truth) {
    truth.validate();
    const Index K1 = truth.K1(), K2 = truth.K2(), n = truth.n();
    // C = Qc Tc, R = Qr Tr, so B_i = Qc (Tc G_i Tr^T) Qr^T with a small core.
    Eigen::HouseholderQR<Matrix> qc(truth.C), qr(truth.R);
    const Matrix Qc = qc.householderQ() * Matrix::Identity(truth.p1(), K1);
    const Matrix Qr = qr.householderQ() * Matrix::Identity(truth.p2(), K2);
    const Matrix Tc = qc.matrixQR().topRows(K1).triangularView<Eigen::Upper>();
    const Matrix Tr = qr.matrixQR().topRows(K2).triangularView<Eigen::Upper>();

    Matrix wide1(K1, K2 * n), wide2(K2, K1 * n);
    std::vector<Matrix> small(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        small[k] = Tc * truth.L1[k] * truth.L2[k].transpose() * Tr.transpose();
        wide1.middleCols(i * K2, K2) = small[k];
        wide2.middleCols(i * K1, K1) = small[k].transpose();
    }
    Eigen::JacobiSVD<Matrix> sv1(wide1, Eigen::ComputeFullU), sv2(wide2, Eigen::ComputeFullU);
    Matrix w1 = sv1.matrixU(), w2 = sv2.matrixU();

    TrueParamPack pack;
    pack.theta_star.C = Qc * w1;
    pack.theta_star.R = Qr * w2;
    fix_signs(pack.theta_star.C, w1);
    fix_signs(pack.theta_star.R, w2);
    pack.sigma_C = sv1.singularValues();
    pack.sigma_R = sv2.singularValues();
    pack.B_star = coefficient_tensor(truth);

    std::vector<Matrix> cores;
    cores.reserve(small.size());
    for (const Matrix& g : small) cores.push_back(w1.transpose() * g * w2);
    fill_loadings(pack, cores, truth.r());
    return pack;
}

AlignmentTransforms identity_transforms(Index K1, Index K2, Index r, Index n) {
    AlignmentTransforms t;
    t.Q1 = Matrix::Identity(K1, K1);
    t.Q2 = Matrix::Identity(K2, K2);
    t.P.assign(static_cast<std::size_t>(n), Matrix::Identity(r, r));
    return t;
}

namespace {

Matrix checked_inverse(const Matrix& q, const char* what) {
    Eigen::FullPivLU<Matrix> lu(q);
    if (!lu.isInvertible() || lu.rcond() < 1e-14) {
        throw SingularityError(std::string("alignment transform ") + what + " is singular");
    }
    return lu.inverse();
}

void check_shapes(const ParameterSet& theta, const TrueParamPack& truth) {
    theta.validate();
    const ParameterSet& s = truth.theta_star;
    if (theta.p1() != s.p1() || theta.p2() != s.p2() || theta.K1() != s.K1() || theta.K2() != s.K2() ||
        theta.r() != s.r() || theta.n() != s.n()) {
        throw ArgumentError("dist: estimate and truth differ in shape");
    }
}

Vector root_sigma(const TrueParamPack& truth, std::size_t i) {
    return truth.sigma_i[i].array().sqrt();
}

// Per-individual loading terms for fixed inverse transforms.
double individual_terms(const ParameterSet& theta, const TrueParamPack& truth, const Matrix& q1inv,
                        const Matrix& q2inv, const Matrix& p, const Matrix& pinvt, std::size_t i) {
    const Vector w = root_sigma(truth, i);
    const Matrix a = (q1inv * theta.L1[i] * p - truth.theta_star.L1[i]) * w.asDiagonal();
    const Matrix b = (q2inv * theta.L2[i] * pinvt - truth.theta_star.L2[i]) * w.asDiagonal();
    return a.squaredNorm() + b.squaredNorm();
}

double shared_c_term(const ParameterSet& theta, const TrueParamPack& truth, const Matrix& q1) {
    return ((theta.C * q1 - truth.theta_star.C) * truth.sigma_C.asDiagonal()).squaredNorm();
}

double shared_r_term(const ParameterSet& theta, const TrueParamPack& truth, const Matrix& q2) {
    return ((theta.R * q2 - truth.theta_star.R) * truth.sigma_R.asDiagonal()).squaredNorm();
}

// a (a^{-1} b)^{1/2}: the midpoint between two candidate transforms, when
// a real principal root exists.
std::optional<Matrix> blend(const Matrix& a, const Matrix& b) {
    Eigen::FullPivLU<Matrix> lu(a);
    if (!lu.isInvertible()) return std::nullopt;
    const Matrix m = lu.solve(b);
    const Eigen::EigenSolver<Matrix> es(m, false);
    for (Index k = 0; k < es.eigenvalues().size(); ++k) {
        const auto ev = es.eigenvalues()(k);
        if (std::abs(ev.imag()) < 1e-12 * std::abs(ev) && ev.real() <= 0.0) return std::nullopt;
    }
    const Matrix root = m.sqrt();
    if (!all_finite(root) || (root * root - m).norm() > 1e-8 * (1.0 + m.norm())) return std::nullopt;
    return Matrix(a * root);
}

bool usable(const Matrix& q) {
    if (!all_finite(q)) return false;
    Eigen::FullPivLU<Matrix> lu(q);
    return lu.isInvertible() && lu.rcond() >= 1e-14;
}

struct Workspace {
    const ParameterSet& theta;
    const TrueParamPack& truth;
    AlignmentTransforms t;
    Matrix q1inv, q2inv;
    std::vector<Matrix> pinvt;

    double total() const {
        double s = shared_c_term(theta, truth, t.Q1) + shared_r_term(theta, truth, t.Q2);
        for (std::size_t i = 0; i < t.P.size(); ++i) s += individual_terms(theta, truth, q1inv, q2inv, t.P[i], pinvt[i], i);
        return s;
    }

    double loadings_sum(const Matrix& q1inv_c, const Matrix& q2inv_c) const {
        double s = 0.0;
        for (std::size_t i = 0; i < t.P.size(); ++i) s += individual_terms(theta, truth, q1inv_c, q2inv_c, t.P[i], pinvt[i], i);
        return s;
    }

    // Q1 block: minimizer of the C term, of the L1 terms, and their blend.
    void update_q1() {
        const ParameterSet& s = truth.theta_star;
        std::vector<Matrix> cands;
        cands.push_back(theta.C.colPivHouseholderQr().solve(s.C));
        const Index k1 = theta.K1();
        Matrix num = Matrix::Zero(k1, k1), den = Matrix::Zero(k1, k1);
        for (std::size_t i = 0; i < t.P.size(); ++i) {
            const Vector w2 = truth.sigma_i[i];  // squared weights S_i
            const Matrix a = theta.L1[i] * t.P[i];
            num += s.L1[i] * w2.asDiagonal() * a.transpose();
            den += a * w2.asDiagonal() * a.transpose();
        }
        Eigen::FullPivLU<Matrix> lu(den.transpose());
        if (lu.isInvertible()) {
            const Matrix winv = lu.solve(num.transpose()).transpose();  // Q1^{-1}
            if (usable(winv)) cands.push_back(checked_inverse(winv, "Q1"));
        }
        if (cands.size() == 2) {
            if (auto b = blend(cands[0], cands[1])) cands.push_back(*b);
        }
        double best = shared_c_term(theta, truth, t.Q1) + loadings_sum(q1inv, q2inv);
        for (const Matrix& q : cands) {
            if (!usable(q)) continue;
            const Matrix qi = checked_inverse(q, "Q1");
            const double v = shared_c_term(theta, truth, q) + loadings_sum(qi, q2inv);
            if (v < best) {
                best = v;
                t.Q1 = q;
                q1inv = qi;
            }
        }
    }

    void update_q2() {
        const ParameterSet& s = truth.theta_star;
        std::vector<Matrix> cands;
        cands.push_back(theta.R.colPivHouseholderQr().solve(s.R));
        const Index k2 = theta.K2();
        Matrix num = Matrix::Zero(k2, k2), den = Matrix::Zero(k2, k2);
        for (std::size_t i = 0; i < t.P.size(); ++i) {
            const Vector w2 = truth.sigma_i[i];
            const Matrix a = theta.L2[i] * pinvt[i];
            num += s.L2[i] * w2.asDiagonal() * a.transpose();
            den += a * w2.asDiagonal() * a.transpose();
        }
        Eigen::FullPivLU<Matrix> lu(den.transpose());
        if (lu.isInvertible()) {
            const Matrix winv = lu.solve(num.transpose()).transpose();
            if (usable(winv)) cands.push_back(checked_inverse(winv, "Q2"));
        }
        if (cands.size() == 2) {
            if (auto b = blend(cands[0], cands[1])) cands.push_back(*b);
        }
        double best = shared_r_term(theta, truth, t.Q2) + loadings_sum(q1inv, q2inv);
        for (const Matrix& q : cands) {
            if (!usable(q)) continue;
            const Matrix qi = checked_inverse(q, "Q2");
            const double v = shared_r_term(theta, truth, q) + loadings_sum(q1inv, qi);
            if (v < best) {
                best = v;
                t.Q2 = q;
                q2inv = qi;
            }
        }
    }

    void update_p(std::size_t i) {
        const ParameterSet& s = truth.theta_star;
        std::vector<Matrix> cands;
        const Matrix a = q1inv * theta.L1[i];
        const Matrix b = q2inv * theta.L2[i];
        cands.push_back(a.colPivHouseholderQr().solve(s.L1[i]));
        const Matrix x = b.colPivHouseholderQr().solve(s.L2[i]);  // P^{-T}
        if (usable(x)) cands.push_back(checked_inverse(x, "P").transpose());
        if (cands.size() == 2) {
            if (auto m = blend(cands[0], cands[1])) cands.push_back(*m);
        }
        double best = individual_terms(theta, truth, q1inv, q2inv, t.P[i], pinvt[i], i);
        for (const Matrix& p : cands) {
            if (!usable(p)) continue;
            const Matrix pit = checked_inverse(p, "P").transpose();
            const double v = individual_terms(theta, truth, q1inv, q2inv, p, pit, i);
            if (v < best) {
                best = v;
                t.P[i] = p;
                pinvt[i] = pit;
            }
        }
    }
};

}  // namespace

double dist_objective(const ParameterSet& theta, const TrueParamPack& truth, const AlignmentTransforms& t) {
    check_shapes(theta, truth);
    if (t.Q1.rows() != theta.K1() || t.Q1.cols() != theta.K1() || t.Q2.rows() != theta.K2() ||
        t.Q2.cols() != theta.K2() || t.P.size() != static_cast<std::size_t>(theta.n())) {
        throw ArgumentError("dist_objective: transform shapes do not match");
    }
    const Matrix q1inv = checked_inverse(t.Q1, "Q1");
    const Matrix q2inv = checked_inverse(t.Q2, "Q2");
    double s = shared_c_term(theta, truth, t.Q1) + shared_r_term(theta, truth, t.Q2);
    for (std::size_t i = 0; i < t.P.size(); ++i) {
        if (t.P[i].rows() != theta.r() || t.P[i].cols() != theta.r()) {
            throw ArgumentError("dist_objective: P_i must be r x r");
        }
        s += individual_terms(theta, truth, q1inv, q2inv, t.P[i], checked_inverse(t.P[i], "P").transpose(), i);
    }
    return s;
}

AlignmentTransforms align_and_dist(const ParameterSet& theta, const TrueParamPack& truth, int max_sweeps) {
    check_shapes(theta, truth);
    if (max_sweeps < 1) throw ArgumentError("align_and_dist: max_sweeps must be positive");
    Workspace ws{theta, truth, identity_transforms(theta.K1(), theta.K2(), theta.r(), theta.n()), {}, {}, {}};
    ws.q1inv = ws.t.Q1;
    ws.q2inv = ws.t.Q2;
    ws.pinvt = ws.t.P;

    double prev = ws.total();
    for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
        ws.update_q1();
        ws.update_q2();
        for (std::size_t i = 0; i < ws.t.P.size(); ++i) ws.update_p(i);
        const double cur = ws.total();
        ws.t.sweeps = sweep;
        ws.t.objective = cur;
        if (prev - cur <= 1e-12 * std::max(1.0, prev)) {
            ws.t.converged = true;
            break;
        }
        prev = cur;
    }
    if (ws.t.sweeps == 0) ws.t.objective = prev;
    return ws.t;
}

double proj_frob_error(const Matrix& u_hat, const Matrix& u_star) {
    if (u_hat.rows() != u_star.rows()) throw ArgumentError("proj_frob_error: row dims differ");
    const Matrix a = orthonormal_basis(u_hat);
    const Matrix b = orthonormal_basis(u_star);
    const double cross = (a.transpose() * b).squaredNorm();
    return std::max(0.0, static_cast<double>(a.cols() + b.cols()) - 2.0 * cross);
}

TensorErrors tensor_errors(const Tensor3& b_hat, const Tensor3& b_star) {
    if (b_hat.dims() != b_star.dims()) throw ArgumentError("tensor_errors: tensors differ in shape");
    TensorErrors e;
    double s = 0.0;
    for (std::size_t k = 0; k < b_hat.size(); ++k) {
        const double d = b_hat.data()[k] - b_star.data()[k];
        s += d * d;
    }
    e.total = s;
    e.per_individual_avg = s / static_cast<double>(b_hat.dim(3));
    return e;
}

}  // namespace homopursuit
