#include "homopursuit/model.hpp"

#include <cmath>
#include <string>

#include "homopursuit/errors.hpp"
#include "homopursuit/parallel.hpp"

namespace homopursuit {

std::string_view to_string(LinkKind kind) {
    return kind == LinkKind::Linear ? "linear" : "logistic";
}

LinkKind parse_link(std::string_view name) {
    if (name == "linear") return LinkKind::Linear;
    if (name == "logistic") return LinkKind::Logistic;
    throw ArgumentError("unknown link '" + std::string(name) + "' (expected linear or logistic)");
}

double Link::g(double t) const {
    if (kind == LinkKind::Linear) return 0.5 * t * t;
    // log(1 + e^t) without overflow
    return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

double Link::g_prime(double t) const {
    if (kind == LinkKind::Linear) return t;
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

double Link::g_second(double t) const {
    if (kind == LinkKind::Linear) return 1.0;
    const double p = g_prime(t);
    return p * (1.0 - p);
}

Dataset::Dataset(Index p1, Index p2, std::vector<Individual> individuals)
    : p1_(p1), p2_(p2), individuals_(std::move(individuals)) {
    if (p1_ < 1 || p2_ < 1) throw ArgumentError("dataset: covariate dims must be positive");
    for (std::size_t i = 0; i < individuals_.size(); ++i) {
        const auto& ind = individuals_[i];
        if (ind.design.cols() != p1_ * p2_) {
            throw ArgumentError("dataset: individual " + std::to_string(i) + " has covariates of the wrong size");
        }
        if (ind.design.rows() != ind.y.size()) {
            throw ArgumentError("dataset: individual " + std::to_string(i) + " has mismatched X / y counts");
        }
        if (ind.samples() < 1) {
            throw ArgumentError("dataset: individual " + std::to_string(i) + " has no samples");
        }
    }
}

Dataset Dataset::from_matrices(const std::vector<std::vector<Matrix>>& xs,
                               const std::vector<std::vector<double>>& ys) {
    if (xs.size() != ys.size() || xs.empty() || xs.front().empty()) {
        throw ArgumentError("dataset: need matching, non-empty covariate and response lists");
    }
    const Index p1 = xs.front().front().rows();
    const Index p2 = xs.front().front().cols();
    std::vector<Individual> inds(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i].size() != ys[i].size()) throw ArgumentError("dataset: mismatched X / y counts");
        auto& ind = inds[i];
        ind.design.resize(static_cast<Index>(xs[i].size()), p1 * p2);
        ind.y.resize(static_cast<Index>(ys[i].size()));
        for (std::size_t j = 0; j < xs[i].size(); ++j) {
            const Matrix& x = xs[i][j];
            if (x.rows() != p1 || x.cols() != p2) throw ArgumentError("dataset: covariates differ in shape");
            ind.design.row(static_cast<Index>(j)) = Eigen::Map<const Vector>(x.data(), p1 * p2).transpose();
            ind.y(static_cast<Index>(j)) = ys[i][j];
        }
    }
    return Dataset(p1, p2, std::move(inds));
}

Index Dataset::total_samples() const {
    Index total = 0;
    for (const auto& ind : individuals_) total += ind.samples();
    return total;
}

Matrix Dataset::covariate(Index i, Index j) const {
    const auto& ind = individual(i);
    if (j < 0 || j >= ind.samples()) throw ArgumentError("dataset: sample index out of range");
    const Vector row = ind.design.row(j).transpose();
    return Eigen::Map<const Matrix>(row.data(), p1_, p2_);
}

Dataset Dataset::subset(const std::vector<Index>& which) const {
    std::vector<Individual> inds;
    inds.reserve(which.size());
    for (Index i : which) inds.push_back(individual(i));
    return Dataset(p1_, p2_, std::move(inds));
}

void ParameterSet::validate() const {
    if (L1.size() != L2.size()) throw ArgumentError("parameter set: L1 and L2 counts differ");
    if (L1.empty()) throw ArgumentError("parameter set: no individuals");
    const Index rank = r();
    for (std::size_t i = 0; i < L1.size(); ++i) {
        if (L1[i].rows() != K1() || L2[i].rows() != K2() || L1[i].cols() != rank || L2[i].cols() != rank) {
            throw ArgumentError("parameter set: loading shapes inconsistent at individual " + std::to_string(i));
        }
    }
}

Matrix ParameterSet::coefficient(Index i) const {
    const auto k = static_cast<std::size_t>(i);
    return C * (L1.at(k) * L2.at(k).transpose()) * R.transpose();
}

Tensor3 coefficient_tensor(const ParameterSet& theta) {
    theta.validate();
    Tensor3 out(theta.p1(), theta.p2(), theta.n());
    for (Index i = 0; i < theta.n(); ++i) out.slice(i) = theta.coefficient(i);
    return out;
}

namespace {

Vector linear_predictor(const Matrix& b, const Individual& obs) {
    return obs.design * Eigen::Map<const Vector>(b.data(), b.size());
}

}  // namespace

double individual_loss(const Matrix& b, const Individual& obs, const Link& link) {
    if (b.size() != obs.design.cols()) throw ArgumentError("individual_loss: coefficient shape mismatch");
    const Vector eta = linear_predictor(b, obs);
    double s = 0.0;
    for (Index j = 0; j < eta.size(); ++j) s += link.g(eta(j)) - obs.y(j) * eta(j);
    if (!std::isfinite(s)) throw NumericError("loss is not finite");
    return s;
}

double loss_at(const ParameterSet& theta, const Dataset& data, const Link& link) {
    check_compatible(theta, data);
    double s = 0.0;
    for (Index i = 0; i < data.n(); ++i) s += individual_loss(theta.coefficient(i), data.individual(i), link);
    return s;
}

double loss_at(const Tensor3& coefficients, const Dataset& data, const Link& link) {
    if (coefficients.dim(1) != data.p1() || coefficients.dim(2) != data.p2() || coefficients.dim(3) != data.n()) {
        throw ArgumentError("loss_at: coefficient tensor does not match dataset");
    }
    double s = 0.0;
    for (Index i = 0; i < data.n(); ++i) {
        s += individual_loss(Matrix(coefficients.slice(i)), data.individual(i), link);
    }
    return s;
}

Matrix slice_gradient(const Matrix& b, const Matrix& x, double y, const Link& link) {
    if (b.rows() != x.rows() || b.cols() != x.cols()) throw ArgumentError("slice_gradient: shape mismatch");
    return (link.g_prime(frob_inner(x, b)) - y) * x;
}

Matrix individual_gradient(const Matrix& b, const Individual& obs, const Link& link) {
    if (b.size() != obs.design.cols()) throw ArgumentError("individual_gradient: coefficient shape mismatch");
    Vector resid = linear_predictor(b, obs);
    for (Index j = 0; j < resid.size(); ++j) resid(j) = link.g_prime(resid(j)) - obs.y(j);
    const Vector g = obs.design.transpose() * resid;
    return Eigen::Map<const Matrix>(g.data(), b.rows(), b.cols());
}

IndividualEval evaluate_individual(const Matrix& b, const Individual& obs, const Link& link) {
    if (b.size() != obs.design.cols()) throw ArgumentError("evaluate_individual: coefficient shape mismatch");
    Vector resid = linear_predictor(b, obs);
    IndividualEval out;
    for (Index j = 0; j < resid.size(); ++j) {
        const double t = resid(j);
        out.loss += link.g(t) - obs.y(j) * t;
        resid(j) = link.g_prime(t) - obs.y(j);
    }
    if (!std::isfinite(out.loss)) throw NumericError("loss is not finite");
    const Vector g = obs.design.transpose() * resid;
    out.gradient = Eigen::Map<const Matrix>(g.data(), b.rows(), b.cols());
    return out;
}

void check_compatible(const ParameterSet& theta, const Dataset& data) {
    theta.validate();
    if (theta.p1() != data.p1() || theta.p2() != data.p2() || theta.n() != data.n()) {
        throw ArgumentError("parameter set dims (" + std::to_string(theta.p1()) + "x" + std::to_string(theta.p2()) +
                            ", n=" + std::to_string(theta.n()) + ") do not match dataset (" +
                            std::to_string(data.p1()) + "x" + std::to_string(data.p2()) +
                            ", n=" + std::to_string(data.n()) + ")");
    }
}

GradientBundle partial_gradients(const ParameterSet& theta, const Dataset& data, const Link& link, int threads) {
    check_compatible(theta, data);
    const auto n = static_cast<std::size_t>(theta.n());

    GradientBundle out;
    out.gram_c = theta.C.transpose() * theta.C;
    out.gram_r = theta.R.transpose() * theta.R;
    out.g1.resize(n);
    out.g2.resize(n);
    out.gram_ri.resize(n);
    out.gram_ci.resize(n);

    // Per-individual pieces: contributions to gC, gR and to the composite Grams.
    std::vector<Matrix> part_c(n), part_r(n), part_gc(n), part_gr(n);
    std::vector<double> part_loss(n);
    parallel_for(n, threads, [&](std::size_t i) {
        const Matrix& l1 = theta.L1[i];
        const Matrix& l2 = theta.L2[i];
        const Matrix core = l1 * l2.transpose();  // G_i
        const Matrix b = theta.C * core * theta.R.transpose();
        IndividualEval eval = evaluate_individual(b, data.individual(static_cast<Index>(i)), link);
        part_loss[i] = eval.loss;
        const Matrix& grad = eval.gradient;

        const Matrix rl2 = theta.R * l2;   // p2 x r
        const Matrix cl1 = theta.C * l1;   // p1 x r
        const Matrix grad_rl2 = grad * rl2;               // p1 x r
        const Matrix gradt_cl1 = grad.transpose() * cl1;  // p2 x r

        part_c[i] = grad_rl2 * l1.transpose();
        part_r[i] = gradt_cl1 * l2.transpose();
        out.g1[i] = theta.C.transpose() * grad_rl2;
        out.g2[i] = theta.R.transpose() * gradt_cl1;

        out.gram_ri[i] = l2.transpose() * out.gram_r * l2;
        out.gram_ci[i] = l1.transpose() * out.gram_c * l1;
        part_gc[i] = l1 * out.gram_ri[i] * l1.transpose();
        part_gr[i] = l2 * out.gram_ci[i] * l2.transpose();
    });

    out.gC = Matrix::Zero(theta.p1(), theta.K1());
    out.gR = Matrix::Zero(theta.p2(), theta.K2());
    out.gram_ctilde = Matrix::Zero(theta.K1(), theta.K1());
    out.gram_rtilde = Matrix::Zero(theta.K2(), theta.K2());
    for (std::size_t i = 0; i < n; ++i) {
        out.gC += part_c[i];
        out.gR += part_r[i];
        out.gram_ctilde += part_gc[i];
        out.gram_rtilde += part_gr[i];
        out.loss += part_loss[i];
    }
    return out;
}

}  // namespace homopursuit
