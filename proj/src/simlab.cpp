#include "homopursuit/simlab.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include <Eigen/QR>

#include "homopursuit/errors.hpp"
#include "homopursuit/parallel.hpp"
#include "homopursuit/selection.hpp"

namespace homopursuit {

std::string_view to_string(SparseSetting s) {
    return s == SparseSetting::Dense ? "dense" : "first_five_rows";
}

SparseSetting parse_setting(std::string_view name) {
    if (name == "dense") return SparseSetting::Dense;
    if (name == "first_five_rows") return SparseSetting::FirstFiveRows;
    throw ArgumentError("unknown setting '" + std::string(name) + "' (expected dense or first_five_rows)");
}

void SimConfig::validate() const {
    if (p1 < 1 || p2 < 1 || n < 1 || m < 1) throw ArgumentError("sim config: p1, p2, n, m must be positive");
    if (ranks.r < 1 || ranks.r > std::min(ranks.K1, ranks.K2)) {
        throw ArgumentError("sim config: need 1 <= r <= min(K1, K2)");
    }
    if (ranks.K1 > p1 || ranks.K2 > p2) throw ArgumentError("sim config: K1/K2 exceed covariate dims");
    if (static_cast<Index>(core_scale.size()) != ranks.r) {
        throw ArgumentError("sim config: core_scale needs exactly r entries");
    }
    for (double v : core_scale) {
        if (!(v > 0.0)) throw ArgumentError("sim config: core_scale entries must be positive");
    }
    if (!(noise_sd >= 0.0)) throw ArgumentError("sim config: noise_sd must be nonnegative");
    if (reps < 1) throw ArgumentError("sim config: reps must be at least 1");
    if (setting == SparseSetting::FirstFiveRows) {
        if (support < std::max(ranks.K1, ranks.K2) || support > std::min(p1, p2)) {
            throw ArgumentError("sim config: support must lie in [max(K1, K2), min(p1, p2)]");
        }
    }
    if (rbar < 2 || rbar > std::min(p1, p2)) throw ArgumentError("sim config: rbar must lie in [2, min(p1, p2)]");
    if (eta && !(*eta > 0.0)) throw ArgumentError("sim config: eta must be positive");
    if (max_iters < 0 || !(tol >= 0.0)) throw ArgumentError("sim config: bad iteration settings");
}

FitConfig SimConfig::fit_config() const {
    FitConfig cfg = FitConfig::defaults(model);
    if (eta) cfg.eta = *eta;
    cfg.max_iters = max_iters;
    cfg.tol = tol;
    cfg.ranks = ranks;
    if (setting == SparseSetting::FirstFiveRows) cfg.sparsity = Sparsity{support, support};
    cfg.threads = 1;
    return cfg;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t sub_seed(std::uint64_t master, std::uint64_t index) {
    return splitmix64(splitmix64(master) + index * 0x9E3779B97F4A7C15ULL);
}

namespace {

Matrix gaussian(Index rows, Index cols, Rng& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
    }
    return m;
}

Matrix orthonormal_q(const Matrix& a) {
    Eigen::HouseholderQR<Matrix> qr(a);
    return qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
}

Matrix shared_factor(Index p, Index k, const SimConfig& cfg, Rng& rng) {
    if (cfg.setting == SparseSetting::Dense) return orthonormal_q(gaussian(p, k, rng));
    if (cfg.support < k) throw ArgumentError("gen_true_params: support smaller than K");
    Matrix out = Matrix::Zero(p, k);
    out.topRows(cfg.support) = orthonormal_q(gaussian(cfg.support, k, rng));
    return out;
}

}  // namespace

TrueParamPack gen_true_params(const SimConfig& cfg, Rng& rng) {
    cfg.validate();
    const Index r = cfg.ranks.r;
    ParameterSet truth;
    truth.C = shared_factor(cfg.p1, cfg.ranks.K1, cfg, rng);
    truth.R = shared_factor(cfg.p2, cfg.ranks.K2, cfg, rng);
    Vector root(r);
    for (Index k = 0; k < r; ++k) root(k) = std::sqrt(cfg.core_scale[static_cast<std::size_t>(k)]);
    for (Index i = 0; i < cfg.n; ++i) {
        const Matrix u = orthonormal_q(gaussian(cfg.ranks.K1, r, rng));
        const Matrix v = orthonormal_q(gaussian(cfg.ranks.K2, r, rng));
        truth.L1.push_back(u * root.asDiagonal());
        truth.L2.push_back(v * root.asDiagonal());
    }
    return true_pack_from_factors(truth);
}

DatasetBundle gen_dataset(const TrueParamPack& truth, const SimConfig& cfg, Rng& rng) {
    const Tensor3& b = truth.B_star;
    if (b.dim(1) != cfg.p1 || b.dim(2) != cfg.p2 || b.dim(3) != cfg.n) {
        throw ArgumentError("gen_dataset: truth does not match config dims");
    }
    const Link link{cfg.model};
    const Index q = cfg.p1 * cfg.p2;
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<Individual> inds(static_cast<std::size_t>(cfg.n));
    for (Index i = 0; i < cfg.n; ++i) {
        auto& ind = inds[static_cast<std::size_t>(i)];
        ind.design.resize(cfg.m, q);
        ind.y.resize(cfg.m);
        const Eigen::Map<const Vector> vec_b(b.slice(i).data(), q);
        for (Index j = 0; j < cfg.m; ++j) {
            for (Index k = 0; k < q; ++k) ind.design(j, k) = nd(rng);
            const double eta = ind.design.row(j).dot(vec_b);
            if (cfg.model == LinkKind::Linear) {
                ind.y(j) = eta + cfg.noise_sd * nd(rng);
            } else {
                ind.y(j) = unif(rng) < link.g_prime(eta) ? 1.0 : 0.0;
            }
        }
    }
    return {Dataset(cfg.p1, cfg.p2, std::move(inds)), truth};
}

namespace {

using Clock = std::chrono::steady_clock;

template <typename Body>
RepOutcome guarded(const SimConfig& cfg, int index, Body&& body) {
    RepOutcome out;
    out.index = index;
    out.seed = sub_seed(cfg.seed, static_cast<std::uint64_t>(index));
    const auto start = Clock::now();
    try {
        Rng rng(out.seed);
        const TrueParamPack truth = gen_true_params(cfg, rng);
        const DatasetBundle bundle = gen_dataset(truth, cfg, rng);
        body(bundle, out);
        out.ok = true;
    } catch (const std::exception& e) {
        out.ok = false;
        out.error = e.what();
    }
    out.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return out;
}

SelectionResult select_for(const SimConfig& cfg, const Dataset& data) {
    SelectionOptions opts;
    opts.rbar = cfg.rbar;
    return select_ranks(data, cfg.fit_config(), opts);
}

}  // namespace

RepOutcome run_rank_replication(const SimConfig& cfg, int index) {
    return guarded(cfg, index, [&](const DatasetBundle& bundle, RepOutcome& out) {
        const SelectionResult sel = select_for(cfg, bundle.data);
        out.selected = Ranks{sel.choice.r, sel.choice.K1, sel.choice.K2};
        out.correct = out.selected == cfg.ranks;
        int iters = 0;
        for (int it : sel.fits_at_r.iters) iters = std::max(iters, it);
        out.iters = iters;
    });
}

RepOutcome run_rate_replication(const SimConfig& cfg, int index) {
    return guarded(cfg, index, [&](const DatasetBundle& bundle, RepOutcome& out) {
        FitConfig fc = cfg.fit_config();
        HeteroFit pre;
        if (cfg.oracle_ranks) {
            out.selected = cfg.ranks;
            pre = balance(fit_individuals(bundle.data, fc, cfg.ranks.r));
        } else {
            SelectionResult sel = select_for(cfg, bundle.data);
            out.selected = Ranks{sel.choice.r, sel.choice.K1, sel.choice.K2};
            pre = std::move(sel.fits_at_r);
        }
        out.correct = out.selected == cfg.ranks;
        fc.ranks = out.selected;
        const ParameterSet init = initialize_shared(pre, out.selected.K1, out.selected.K2);
        const FitReport fit = fc.sparsity ? fit_homogeneous_sparse(bundle.data, init, fc)
                                          : fit_homogeneous(bundle.data, init, fc);
        out.iters = fit.iters;
        out.err_B = tensor_errors(coefficient_tensor(fit.theta), bundle.truth.B_star).per_individual_avg;
        out.err_C = proj_frob_error(fit.theta.C, bundle.truth.theta_star.C);
        out.err_R = proj_frob_error(fit.theta.R, bundle.truth.theta_star.R);
    });
}

CellSummary summarize(const SimConfig& cfg, const std::vector<RepOutcome>& reps) {
    CellSummary s;
    s.n = cfg.n;
    s.m = cfg.m;
    s.setting = cfg.setting;
    s.reps = static_cast<int>(reps.size());
    int ok = 0, correct = 0;
    double sb = 0.0, sc = 0.0, sr = 0.0, si = 0.0;
    for (const RepOutcome& o : reps) {
        if (!o.ok) {
            ++s.failures;
            continue;
        }
        ++ok;
        if (o.correct) ++correct;
        // Exact recovery gives zero error; cap -log at the double floor.
        const auto nl = [](double e) { return -std::log(std::max(e, 1e-300)); };
        sb += nl(o.err_B);
        sc += nl(o.err_C);
        sr += nl(o.err_R);
        si += o.iters;
    }
    s.prop_correct = reps.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(reps.size());
    if (ok > 0) {
        s.neglog_err_B = sb / ok;
        s.neglog_err_C = sc / ok;
        s.neglog_err_R = sr / ok;
        s.mean_iters = si / ok;
    }
    return s;
}

namespace {

ExperimentCell run_cell(const SimConfig& cfg, RepOutcome (*rep)(const SimConfig&, int)) {
    cfg.validate();
    ExperimentCell cell;
    cell.config = cfg;
    cell.reps.resize(static_cast<std::size_t>(cfg.reps));
    parallel_for(cell.reps.size(), cfg.threads,
                 [&](std::size_t k) { cell.reps[k] = rep(cfg, static_cast<int>(k)); });
    cell.summary = summarize(cfg, cell.reps);
    return cell;
}

}  // namespace

ExperimentCell run_rank_experiment(const SimConfig& cfg) {
    return run_cell(cfg, &run_rank_replication);
}

double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ArgumentError("ls_slope: need at least two paired points");
    const double k = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= k;
    my /= k;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    if (sxx == 0.0) throw ArgumentError("ls_slope: x values are all equal");
    return sxy / sxx;
}

ExperimentRecord run_rate_experiment(const SimConfig& base, RateAxis axis, const std::vector<Index>& values) {
    if (values.size() < 2) throw ArgumentError("rate experiment: need at least two grid values");
    ExperimentRecord rec;
    rec.kind = "rate";
    std::vector<double> lx, yb, yc, yr;
    for (Index v : values) {
        SimConfig cfg = base;
        (axis == RateAxis::N ? cfg.n : cfg.m) = v;
        rec.cells.push_back(run_cell(cfg, &run_rate_replication));
        const CellSummary& s = rec.cells.back().summary;
        lx.push_back(std::log(static_cast<double>(v)));
        yb.push_back(s.neglog_err_B);
        yc.push_back(s.neglog_err_C);
        yr.push_back(s.neglog_err_R);
    }
    rec.slopes = RateSlopes{axis == RateAxis::N ? "n" : "m", ls_slope(lx, yb), ls_slope(lx, yc), ls_slope(lx, yr)};
    return rec;
}

}  // namespace homopursuit
