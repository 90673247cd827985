#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "homopursuit/metrics.hpp"
#include "homopursuit/optim.hpp"

namespace homopursuit {

enum class SparseSetting { Dense, FirstFiveRows };

std::string_view to_string(SparseSetting s);
SparseSetting parse_setting(std::string_view name);

using Rng = std::mt19937_64;

/// Synthetic-experiment settings.  Defaults: 20 x 20 covariates, K1 = K2 = 4,
/// r = 2, core singular values (5, 5), unit noise.
struct SimConfig {
    Index p1 = 20;
    Index p2 = 20;
    Index n = 16;
    Index m = 128;
    Ranks ranks{2, 4, 4};
    LinkKind model = LinkKind::Linear;
    double noise_sd = 1.0;
    std::vector<double> core_scale{5.0, 5.0};
    SparseSetting setting = SparseSetting::Dense;
    int reps = 100;
    std::uint64_t seed = 0;

    // Fitting knobs used by the experiment harnesses.
    Index rbar = 5;
    Index support = 5;  // nonzero rows of C*, R* under FirstFiveRows; also s1 = s2
    std::optional<double> eta;
    // Small-m fits need several hundred scaled steps; the tolerance stop
    // ends most runs well before the cap.
    int max_iters = 2000;
    double tol = 1e-10;
    int threads = 1;  // replications run in parallel; fits inside are serial
    // Rate experiments: skip rank selection and fit at the true ranks.
    bool oracle_ranks = false;

    void validate() const;
    FitConfig fit_config() const;
};

/// splitmix64 finalizer.
std::uint64_t splitmix64(std::uint64_t x);

/// Per-replication seed: output `index` of the splitmix64 stream started at
/// splitmix64(master), i.e. splitmix64(splitmix64(master) + index * gamma).
std::uint64_t sub_seed(std::uint64_t master, std::uint64_t index);

/// Orthonormal C*, R* (from QR of Gaussian draws, confined to the first
/// `support` rows under FirstFiveRows), per-individual orthonormal U_i, V_i,
/// and B_i* = C* U_i Sigma V_i^T R*^T, returned in canonical form.
TrueParamPack gen_true_params(const SimConfig& cfg, Rng& rng);

struct DatasetBundle {
    Dataset data;
    TrueParamPack truth;
};

/// Gaussian covariates and linear (Gaussian noise) or Bernoulli responses.
DatasetBundle gen_dataset(const TrueParamPack& truth, const SimConfig& cfg, Rng& rng);

struct RepOutcome {
    int index = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    Ranks selected;
    bool correct = false;
    double err_B = 0.0;  // ||B_hat - B*||_F^2 / n
    double err_C = 0.0;  // projector distance of C_hat
    double err_R = 0.0;
    int iters = 0;
    double seconds = 0.0;
};

struct CellSummary {
    Index n = 0;
    Index m = 0;
    SparseSetting setting = SparseSetting::Dense;
    int reps = 0;
    int failures = 0;
    double prop_correct = 0.0;
    // Means of -log(error) over successful replications (rate experiments).
    double neglog_err_B = 0.0;
    double neglog_err_C = 0.0;
    double neglog_err_R = 0.0;
    double mean_iters = 0.0;
};

struct ExperimentCell {
    SimConfig config;
    CellSummary summary;
    std::vector<RepOutcome> reps;
};

struct RateSlopes {
    std::string axis;  // "n" or "m"
    double slope_B = 0.0;
    double slope_C = 0.0;
    double slope_R = 0.0;
};

struct ExperimentRecord {
    std::string kind;  // "rank" or "rate"
    std::vector<ExperimentCell> cells;
    std::optional<RateSlopes> slopes;
};

/// One replication of the rank-selection experiment.  Fit errors are
/// recorded in the outcome rather than thrown.
RepOutcome run_rank_replication(const SimConfig& cfg, int index);

/// Selection (or the true ranks when cfg.oracle_ranks), then the
/// shared-subspace fit initialized from aggregated individual fits; reports
/// the per-individual tensor error and subspace errors.
RepOutcome run_rate_replication(const SimConfig& cfg, int index);

/// cfg.reps replications, merged in index order.
ExperimentCell run_rank_experiment(const SimConfig& cfg);

enum class RateAxis { N, M };

/// One cell per grid value (varying n or m, everything else from `base`),
/// plus least-squares slopes of each mean -log error against log(value).
ExperimentRecord run_rate_experiment(const SimConfig& base, RateAxis axis, const std::vector<Index>& values);

CellSummary summarize(const SimConfig& cfg, const std::vector<RepOutcome>& reps);

/// Ordinary least-squares slope of y on x.
double ls_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace homopursuit
