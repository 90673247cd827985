#include "homopursuit/selection.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "homopursuit/errors.hpp"
#include "homopursuit/linalg.hpp"

namespace homopursuit {

AggregateSubspace aggregate_subspaces(const HeteroFit& fits) {
    if (fits.n() < 1) throw ArgumentError("aggregate_subspaces: no fits");
    const Index p1 = fits.C.front().rows();
    const Index p2 = fits.R.front().rows();
    AggregateSubspace agg;
    agg.M_C = Matrix::Zero(p1, p1);
    agg.M_R = Matrix::Zero(p2, p2);
    for (Index i = 0; i < fits.n(); ++i) {
        const Matrix& c = fits.C[static_cast<std::size_t>(i)];
        const Matrix& r = fits.R[static_cast<std::size_t>(i)];
        if (c.rows() != p1 || r.rows() != p2) throw ArgumentError("aggregate_subspaces: factor dims differ");
        agg.M_C.noalias() += c * c.transpose();
        agg.M_R.noalias() += r * r.transpose();
    }
    // Exact symmetry; the rank-r updates are symmetric only up to roundoff.
    agg.M_C = 0.5 * (agg.M_C + agg.M_C.transpose()).eval();
    agg.M_R = 0.5 * (agg.M_R + agg.M_R.transpose()).eval();
    const SymEigen ec = sym_eigen_desc(agg.M_C);
    const SymEigen er = sym_eigen_desc(agg.M_R);
    agg.eigvals_C = ec.values;
    agg.eigvecs_C = ec.vectors;
    agg.eigvals_R = er.values;
    agg.eigvecs_R = er.vectors;
    return agg;
}

ParameterSet initialize_shared(const HeteroFit& fits, Index K1, Index K2) {
    if (fits.n() < 1) throw ArgumentError("initialize_shared: no fits");
    const Index p1 = fits.C.front().rows();
    const Index p2 = fits.R.front().rows();
    if (K1 < 1 || K1 > p1 || K2 < 1 || K2 > p2) {
        throw ArgumentError("initialize_shared: K1/K2 must lie in [1, p]");
    }
    const AggregateSubspace agg = aggregate_subspaces(fits);
    ParameterSet theta;
    theta.C = agg.eigvecs_C.leftCols(K1);
    theta.R = agg.eigvecs_R.leftCols(K2);
    for (Index i = 0; i < fits.n(); ++i) {
        theta.L1.push_back(theta.C.transpose() * fits.C[static_cast<std::size_t>(i)]);
        theta.L2.push_back(theta.R.transpose() * fits.R[static_cast<std::size_t>(i)]);
    }
    return theta;
}

std::vector<double> ridge_ratios(const Vector& a, Index count, double delta) {
    if (count < 1 || count + 1 > a.size()) throw ArgumentError("ridge_ratios: sequence too short");
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(count));
    for (Index k = 0; k < count; ++k) {
        const double num = std::max(a(k), 0.0) + delta;
        const double den = std::max(a(k + 1), 0.0) + delta;
        out.push_back(num / den);
    }
    return out;
}

Index argmax_ratio(const std::vector<double>& ratios) {
    if (ratios.empty()) throw ArgumentError("argmax_ratio: empty");
    std::size_t best = 0;
    for (std::size_t k = 1; k < ratios.size(); ++k) {
        if (ratios[k] > ratios[best]) best = k;
    }
    return static_cast<Index>(best) + 1;
}

Vector summed_singular_values(const HeteroFit& fits) {
    if (fits.n() < 1) throw ArgumentError("summed_singular_values: no fits");
    const Index rank = fits.rank();
    Vector sums = Vector::Zero(rank);
    for (Index i = 0; i < fits.n(); ++i) {
        // sigma(C R^T) from QR factors: C = Qc Tc, R = Qr Tr -> sigma(Tc Tr^T)
        const Matrix& c = fits.C[static_cast<std::size_t>(i)];
        const Matrix& r = fits.R[static_cast<std::size_t>(i)];
        Eigen::HouseholderQR<Matrix> qc(c), qr(r);
        const Matrix tc = qc.matrixQR().topRows(rank).triangularView<Eigen::Upper>();
        const Matrix tr = qr.matrixQR().topRows(rank).triangularView<Eigen::Upper>();
        sums += singular_values(tc * tr.transpose());
    }
    return sums;
}

Index select_rank_r(const Vector& sigma_sums, double delta1, Index rbar, std::vector<double>* ratios) {
    if (rbar < 2) throw ArgumentError("select_rank_r: rbar must be at least 2");
    if (!(delta1 > 0.0)) throw ArgumentError("select_rank_r: delta1 must be positive");
    if (sigma_sums.size() < rbar) throw ArgumentError("select_rank_r: need rbar singular-value sums");
    std::vector<double> rs = ridge_ratios(sigma_sums, rbar - 1, delta1);
    const Index best = argmax_ratio(rs);
    if (ratios) *ratios = std::move(rs);
    return best;
}

Index select_rank_r(const HeteroFit& fits, double delta1, Index rbar, std::vector<double>* ratios) {
    if (fits.rank() != rbar) throw ArgumentError("select_rank_r: fits were not computed at rank rbar");
    return select_rank_r(summed_singular_values(fits), delta1, rbar, ratios);
}

Index select_subspace_rank(const Vector& eigvals, double delta2, Index search_max, std::vector<double>* ratios) {
    if (!(delta2 > 0.0)) throw ArgumentError("select_subspace_rank: delta2 must be positive");
    if (search_max < 1 || search_max + 1 > eigvals.size()) {
        throw ArgumentError("select_subspace_rank: search_max=" + std::to_string(search_max) +
                            " outside [1, " + std::to_string(eigvals.size() - 1) + "]");
    }
    std::vector<double> rs = ridge_ratios(eigvals, search_max, delta2);
    const Index best = argmax_ratio(rs);
    if (ratios) *ratios = std::move(rs);
    return best;
}

std::pair<Index, Index> select_subspace_ranks(const AggregateSubspace& agg, Index r, double delta2,
                                              Index search_max) {
    const Index max1 = search_max > 0 ? search_max : default_search_max(r, agg.M_C.rows());
    const Index max2 = search_max > 0 ? search_max : default_search_max(r, agg.M_R.rows());
    return {select_subspace_rank(agg.eigvals_C, delta2, max1), select_subspace_rank(agg.eigvals_R, delta2, max2)};
}

Index default_search_max(Index r, Index p) {
    return std::max<Index>(1, std::min<Index>(4 * r, p - 1));
}

double default_delta1(Index n, double m, Index d) {
    return 0.1 * static_cast<double>(n) * static_cast<double>(d) * std::pow(m, -0.25);
}

double default_delta2(Index n, double m, Index d) {
    return 0.1 * static_cast<double>(n) * static_cast<double>(d) * std::pow(m, -0.5);
}

HeteroFit fit_individuals(const Dataset& data, const FitConfig& cfg, Index r) {
    FitConfig local = cfg;
    local.ranks = Ranks{r, r, r};
    const HeteroFit init = spectral_hetero_init(data, r, cfg.link, cfg.sparsity);
    return cfg.sparsity ? fit_heterogeneous_sparse(data, init, local) : fit_heterogeneous(data, init, local);
}

SelectionResult select_ranks(const Dataset& data, const FitConfig& cfg, const SelectionOptions& opts) {
    if (opts.rbar < 2 || opts.rbar > std::min(data.p1(), data.p2())) {
        throw ArgumentError("select_ranks: rbar must lie in [2, min(p1, p2)]");
    }
    const double m = static_cast<double>(data.total_samples()) / static_cast<double>(data.n());
    const Index d = cfg.sparsity ? std::max(cfg.sparsity->s1, cfg.sparsity->s2) : std::max(data.p1(), data.p2());
    const double delta1 = opts.delta1.value_or(default_delta1(data.n(), m, d));
    const double delta2 = opts.delta2.value_or(default_delta2(data.n(), m, d));

    if (!(opts.overfit_ridge >= 0.0)) throw ArgumentError("select_ranks: overfit_ridge must be nonnegative");
    SelectionResult res;
    FitConfig overfit = cfg;
    overfit.damping = std::max(cfg.damping, opts.overfit_ridge);
    res.fits_at_rbar = fit_individuals(data, overfit, opts.rbar);
    res.choice.r = select_rank_r(res.fits_at_rbar, delta1, opts.rbar, &res.choice.ratios_r);

    res.fits_at_r = balance(fit_individuals(data, cfg, res.choice.r));
    res.aggregate = aggregate_subspaces(res.fits_at_r);
    const Index max1 = opts.search_max.value_or(default_search_max(res.choice.r, data.p1()));
    const Index max2 = opts.search_max.value_or(default_search_max(res.choice.r, data.p2()));
    res.choice.K1 = select_subspace_rank(res.aggregate.eigvals_C, delta2, max1, &res.choice.ratios_K1);
    res.choice.K2 = select_subspace_rank(res.aggregate.eigvals_R, delta2, max2, &res.choice.ratios_K2);
    // A shared subspace thinner than the individual rank cannot carry the fits.
    res.choice.K1 = std::max(res.choice.K1, res.choice.r);
    res.choice.K2 = std::max(res.choice.K2, res.choice.r);
    return res;
}

}  // namespace homopursuit
