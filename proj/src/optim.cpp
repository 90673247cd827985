#include "homopursuit/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <tuple>

#include "homopursuit/errors.hpp"
#include "homopursuit/linalg.hpp"
#include "homopursuit/parallel.hpp"

namespace homopursuit {

FitConfig FitConfig::defaults(LinkKind link) {
    FitConfig cfg;
    cfg.link = link;
    cfg.eta = default_eta(link);
    return cfg;
}

void FitConfig::validate(Index p1, Index p2) const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw ArgumentError("fit config: eta must be positive");
    if (max_iters < 0) throw ArgumentError("fit config: max_iters must be nonnegative");
    if (!(tol >= 0.0)) throw ArgumentError("fit config: tol must be nonnegative");
    if (!(ridge_eps >= 0.0)) throw ArgumentError("fit config: ridge_eps must be nonnegative");
    if (!(damping >= 0.0)) throw ArgumentError("fit config: damping must be nonnegative");
    if (ranks.r < 1 || ranks.K1 < 1 || ranks.K2 < 1) throw ArgumentError("fit config: ranks must be positive");
    if (ranks.r > std::min(ranks.K1, ranks.K2)) throw ArgumentError("fit config: r must not exceed min(K1, K2)");
    if (ranks.K1 > p1 || ranks.K2 > p2) throw ArgumentError("fit config: K1/K2 exceed covariate dims");
    if (sparsity) {
        if (sparsity->s1 < 1 || sparsity->s1 > p1 || sparsity->s2 < 1 || sparsity->s2 > p2) {
            throw ArgumentError("fit config: sparsity levels must lie in [1, p]");
        }
    }
}

Matrix HeteroFit::coefficient(Index i) const {
    const auto k = static_cast<std::size_t>(i);
    return C.at(k) * R.at(k).transpose();
}

Tensor3 HeteroFit::coefficient_tensor() const {
    std::vector<Matrix> slices;
    slices.reserve(C.size());
    for (Index i = 0; i < n(); ++i) slices.push_back(coefficient(i));
    return stack_slices(slices);
}

std::pair<Matrix, IndexSet> hard_threshold_rows(const Matrix& m, Index s) {
    if (s < 1 || s > m.rows()) {
        throw ArgumentError("hard_threshold_rows: s=" + std::to_string(s) + " outside [1, " +
                            std::to_string(m.rows()) + "]");
    }
    const Vector norms = m.rowwise().squaredNorm();
    std::vector<Index> order(static_cast<std::size_t>(m.rows()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return norms(a) > norms(b); });

    IndexSet kept(order.begin(), order.begin() + s);
    std::sort(kept.begin(), kept.end());
    Matrix out = Matrix::Zero(m.rows(), m.cols());
    for (Index row : kept) out.row(row) = m.row(row);
    return {std::move(out), std::move(kept)};
}

std::pair<Matrix, IndexSet> scaled_hard_threshold(const Matrix& c, const Matrix& gram, Index s, double ridge_eps) {
    if (gram.rows() != c.cols() || gram.cols() != c.cols()) {
        throw ArgumentError("scaled_hard_threshold: Gram matrix must be K x K");
    }
    if (s < 1 || s > c.rows()) throw ArgumentError("scaled_hard_threshold: s out of range");
    if (s == c.rows()) {
        IndexSet all(static_cast<std::size_t>(c.rows()));
        std::iota(all.begin(), all.end(), Index{0});
        return {c, std::move(all)};
    }
    const double scale = gram.trace() / static_cast<double>(gram.rows());
    auto roots_with = [&](double eps) {
        Matrix reg = gram;
        if (eps > 0.0 && scale > 0.0) reg.diagonal().array() += eps * scale;
        return spd_sqrt(reg);
    };
    SpdRoots roots;
    try {
        roots = roots_with(ridge_eps);
    } catch (const SingularityError&) {
        roots = roots_with(std::max(ridge_eps, 1e-6));
    }
    auto [kept_matrix, kept] = hard_threshold_rows(c * roots.sqrt, s);
    Matrix out = kept_matrix * roots.inv_sqrt;
    return {std::move(out), std::move(kept)};
}

namespace {

Matrix precond_inverse(const Matrix& gram, const FitConfig& cfg) {
    return spd_inverse(gram, cfg.ridge_eps, cfg.damping);
}

double ht_ridge(const FitConfig& cfg) { return std::max(cfg.ridge_eps, cfg.damping); }

bool stop_now(double prev, double cur, double tol) {
    return tol > 0.0 && std::abs(cur - prev) <= tol * (1.0 + std::abs(prev));
}

[[noreturn]] void diverged(double eta, int iter) {
    std::ostringstream msg;
    msg << "loss became non-finite at iteration " << iter << " with eta=" << eta << "; try a smaller eta";
    throw DivergenceError(msg.str());
}

double mean_samples(const Dataset& data) {
    return static_cast<double>(data.total_samples()) / static_cast<double>(data.n());
}

struct SharedStep {
    ParameterSet next;
    double loss_before = 0.0;
};

// One simultaneous scaled-gradient update of all four blocks from `theta`.
SharedStep scaled_step(const ParameterSet& theta, const Dataset& data, const FitConfig& cfg) {
    const Link link{cfg.link};
    GradientBundle gb = partial_gradients(theta, data, link, cfg.threads);
    const double shared_step = cfg.eta / mean_samples(data);

    SharedStep out;
    out.loss_before = gb.loss;
    ParameterSet& next = out.next;
    next.C = theta.C - shared_step * gb.gC * precond_inverse(gb.gram_ctilde, cfg);
    next.R = theta.R - shared_step * gb.gR * precond_inverse(gb.gram_rtilde, cfg);

    const Matrix inv_cc = precond_inverse(gb.gram_c, cfg);
    const Matrix inv_rr = precond_inverse(gb.gram_r, cfg);
    const auto n = static_cast<std::size_t>(theta.n());
    next.L1.resize(n);
    next.L2.resize(n);
    parallel_for(n, cfg.threads, [&](std::size_t i) {
        const double step = cfg.eta / static_cast<double>(data.samples(static_cast<Index>(i)));
        next.L1[i] = theta.L1[i] - step * inv_cc * gb.g1[i] * precond_inverse(gb.gram_ri[i], cfg);
        next.L2[i] = theta.L2[i] - step * inv_rr * gb.g2[i] * precond_inverse(gb.gram_ci[i], cfg);
    });
    return out;
}

void check_init(const Dataset& data, const ParameterSet& init, const FitConfig& cfg) {
    cfg.validate(data.p1(), data.p2());
    check_compatible(init, data);
    if (init.K1() != cfg.ranks.K1 || init.K2() != cfg.ranks.K2 || init.r() != cfg.ranks.r) {
        throw ArgumentError("initial parameters do not match the configured ranks");
    }
}

FitReport run_homogeneous(const Dataset& data, const ParameterSet& init, const FitConfig& cfg, bool sparse) {
    check_init(data, init, cfg);
    const Link link{cfg.link};
    FitReport rep;
    rep.theta = init;
    if (sparse) {
        rep.active_rows = ActiveRows{};
        rep.active_rows->S1.resize(static_cast<std::size_t>(data.p1()));
        rep.active_rows->S2.resize(static_cast<std::size_t>(data.p2()));
        std::iota(rep.active_rows->S1.begin(), rep.active_rows->S1.end(), Index{0});
        std::iota(rep.active_rows->S2.begin(), rep.active_rows->S2.end(), Index{0});
    }

    bool stopped = false;
    for (int t = 0; t < cfg.max_iters; ++t) {
        SharedStep step;
        try {
            step = scaled_step(rep.theta, data, cfg);
        } catch (const SingularityError&) {
            throw;
        } catch (const NumericError&) {
            diverged(cfg.eta, t);
        }
        rep.loss_trace.push_back(step.loss_before);
        if (t > 0 && stop_now(rep.loss_trace[rep.loss_trace.size() - 2], step.loss_before, cfg.tol)) {
            stopped = true;
            break;
        }
        ParameterSet& half = step.next;
        if (sparse) {
            // Composite Grams at the half-step iterate.
            Matrix gram_ct = Matrix::Zero(half.K1(), half.K1());
            Matrix gram_rt = Matrix::Zero(half.K2(), half.K2());
            const Matrix rr = half.R.transpose() * half.R;
            const Matrix cc = half.C.transpose() * half.C;
            for (Index i = 0; i < half.n(); ++i) {
                const Matrix& l1 = half.L1[static_cast<std::size_t>(i)];
                const Matrix& l2 = half.L2[static_cast<std::size_t>(i)];
                gram_ct += l1 * (l2.transpose() * rr * l2) * l1.transpose();
                gram_rt += l2 * (l1.transpose() * cc * l1) * l2.transpose();
            }
            auto [c_new, s1] = scaled_hard_threshold(half.C, gram_ct, cfg.sparsity->s1, ht_ridge(cfg));
            auto [r_new, s2] = scaled_hard_threshold(half.R, gram_rt, cfg.sparsity->s2, ht_ridge(cfg));
            half.C = std::move(c_new);
            half.R = std::move(r_new);
            rep.active_rows->S1 = std::move(s1);
            rep.active_rows->S2 = std::move(s2);
        }
        rep.theta = std::move(half);
        ++rep.iters;
    }
    if (!stopped) {
        double loss = 0.0;
        try {
            loss = loss_at(rep.theta, data, link);
        } catch (const NumericError&) {
            diverged(cfg.eta, rep.iters);
        }
        rep.loss_trace.push_back(loss);
    }
    rep.converged = stopped || (rep.loss_trace.size() >= 2 &&
                                stop_now(rep.loss_trace[rep.loss_trace.size() - 2], rep.loss_trace.back(), cfg.tol));
    return rep;
}

struct IndividualResult {
    Matrix C;
    Matrix R;
    int iters = 0;
    bool converged = false;
    ActiveRows rows;
};

IndividualResult run_individual(const Individual& obs, Index p1, Index p2, Matrix c, Matrix r,
                                const FitConfig& cfg, bool sparse) {
    const Link link{cfg.link};
    const double step = cfg.eta / static_cast<double>(obs.samples());
    IndividualResult out;
    if (sparse) {
        out.rows.S1.resize(static_cast<std::size_t>(p1));
        out.rows.S2.resize(static_cast<std::size_t>(p2));
        std::iota(out.rows.S1.begin(), out.rows.S1.end(), Index{0});
        std::iota(out.rows.S2.begin(), out.rows.S2.end(), Index{0});
    }
    double prev = 0.0;
    for (int t = 0; t < cfg.max_iters; ++t) {
        const Matrix b = c * r.transpose();
        IndividualEval eval;
        try {
            eval = evaluate_individual(b, obs, link);
        } catch (const NumericError&) {
            diverged(cfg.eta, t);
        }
        if (t > 0 && stop_now(prev, eval.loss, cfg.tol)) {
            out.converged = true;
            break;
        }
        prev = eval.loss;
        const Matrix gram_r = r.transpose() * r;
        const Matrix gram_c = c.transpose() * c;
        Matrix c_half = c - step * (eval.gradient * r) * precond_inverse(gram_r, cfg);
        Matrix r_half = r - step * (eval.gradient.transpose() * c) * precond_inverse(gram_c, cfg);
        if (sparse) {
            const Matrix gram_r_half = r_half.transpose() * r_half;
            const Matrix gram_c_half = c_half.transpose() * c_half;
            auto [c_new, s1] = scaled_hard_threshold(c_half, gram_r_half, cfg.sparsity->s1, ht_ridge(cfg));
            auto [r_new, s2] = scaled_hard_threshold(r_half, gram_c_half, cfg.sparsity->s2, ht_ridge(cfg));
            c_half = std::move(c_new);
            r_half = std::move(r_new);
            out.rows.S1 = std::move(s1);
            out.rows.S2 = std::move(s2);
        }
        c = std::move(c_half);
        r = std::move(r_half);
        ++out.iters;
        if (!c.allFinite() || !r.allFinite()) diverged(cfg.eta, t + 1);
    }
    out.C = std::move(c);
    out.R = std::move(r);
    return out;
}

HeteroFit run_heterogeneous(const Dataset& data, const HeteroFit& init, const FitConfig& cfg, bool sparse) {
    if (sparse && !cfg.sparsity) throw ArgumentError("sparse heterogeneous fit requires sparsity levels");
    if (init.n() != data.n()) throw ArgumentError("heterogeneous init has the wrong number of individuals");
    const Index r = cfg.ranks.r;
    if (r < 1 || r > std::min(data.p1(), data.p2())) throw ArgumentError("heterogeneous rank out of range");
    if (sparse && (cfg.sparsity->s1 < 1 || cfg.sparsity->s1 > data.p1() || cfg.sparsity->s2 < 1 ||
                   cfg.sparsity->s2 > data.p2())) {
        throw ArgumentError("sparsity levels must lie in [1, p]");
    }
    for (Index i = 0; i < init.n(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (init.C[k].rows() != data.p1() || init.R[k].rows() != data.p2() || init.C[k].cols() != r ||
            init.R[k].cols() != r) {
            throw ArgumentError("heterogeneous init factors have the wrong shape at individual " + std::to_string(i));
        }
    }
    const auto n = static_cast<std::size_t>(data.n());
    std::vector<IndividualResult> results(n);
    parallel_for(n, cfg.threads, [&](std::size_t i) {
        results[i] = run_individual(data.individual(static_cast<Index>(i)), data.p1(), data.p2(), init.C[i],
                                    init.R[i], cfg, sparse);
    });
    HeteroFit out;
    for (auto& res : results) {
        out.C.push_back(std::move(res.C));
        out.R.push_back(std::move(res.R));
        out.iters.push_back(res.iters);
        out.converged.push_back(res.converged);
        if (sparse) out.active_rows.push_back(std::move(res.rows));
    }
    return out;
}

}  // namespace

FitReport fit_homogeneous(const Dataset& data, const ParameterSet& init, const FitConfig& cfg) {
    if (cfg.sparsity) throw ArgumentError("fit_homogeneous: sparsity configured; use fit_homogeneous_sparse");
    return run_homogeneous(data, init, cfg, false);
}

FitReport fit_homogeneous_sparse(const Dataset& data, const ParameterSet& init, const FitConfig& cfg) {
    if (!cfg.sparsity) throw ArgumentError("fit_homogeneous_sparse: sparsity levels (s1, s2) required");
    return run_homogeneous(data, init, cfg, true);
}

HeteroFit fit_heterogeneous(const Dataset& data, const HeteroFit& init, const FitConfig& cfg) {
    return run_heterogeneous(data, init, cfg, false);
}

HeteroFit fit_heterogeneous_sparse(const Dataset& data, const HeteroFit& init, const FitConfig& cfg) {
    return run_heterogeneous(data, init, cfg, true);
}

namespace {

Matrix keep_rows(const Matrix& m, const IndexSet& rows) {
    Matrix out = Matrix::Zero(m.rows(), m.cols());
    for (Index row : rows) out.row(row) = m.row(row);
    return out;
}

}  // namespace

HeteroFit spectral_hetero_init(const Dataset& data, Index r, LinkKind link_kind,
                               const std::optional<Sparsity>& sparsity) {
    const Link link{link_kind};
    if (r < 1 || r > std::min(data.p1(), data.p2())) throw ArgumentError("spectral init: rank out of range");
    const double offset = link.g_prime(0.0);
    const double curvature = link.g_second(0.0);
    HeteroFit out;
    for (const auto& obs : data.individuals()) {
        const Vector centered = obs.y.array() - offset;
        const Vector moment = obs.design.transpose() * centered / (static_cast<double>(obs.samples()) * curvature);
        Matrix b0 = Eigen::Map<const Matrix>(moment.data(), data.p1(), data.p2());
        IndexSet rows, cols;
        if (sparsity) {
            std::tie(b0, rows) = hard_threshold_rows(b0, sparsity->s1);
            Matrix bt;
            std::tie(bt, cols) = hard_threshold_rows(b0.transpose(), sparsity->s2);
            b0 = bt.transpose();
        }
        const SvdResult svd = thin_svd(b0, r);
        const Vector root = svd.S.cwiseSqrt();
        Matrix c = svd.U * root.asDiagonal();
        Matrix rr = svd.V * root.asDiagonal();
        if (sparsity) {
            // the SVD leaves round-off in rows that are exactly zero in b0
            c = keep_rows(c, rows);
            rr = keep_rows(rr, cols);
        }
        out.C.push_back(std::move(c));
        out.R.push_back(std::move(rr));
    }
    return out;
}

HeteroFit balance(const HeteroFit& fit) {
    HeteroFit out = fit;
    for (Index i = 0; i < fit.n(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        const SvdResult svd = thin_svd(fit.coefficient(i), fit.rank());
        const Vector root = svd.S.cwiseSqrt();
        out.C[k] = svd.U * root.asDiagonal();
        out.R[k] = svd.V * root.asDiagonal();
    }
    return out;
}

}  // namespace homopursuit
