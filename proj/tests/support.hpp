#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "homopursuit/metrics.hpp"
#include "homopursuit/model.hpp"

namespace hp_test {

using homopursuit::Index;
using homopursuit::Matrix;
using homopursuit::Vector;

inline Matrix gaussian(Index rows, Index cols, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> z(0.0, sd);
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i) m(i, j) = z(rng);
    return m;
}

/// Random invertible k x k matrix with condition number at most `kappa`
/// (orthogonal * diag(singular values in [1, kappa]) * orthogonal).
inline Matrix well_conditioned(Index k, std::mt19937_64& rng, double kappa = 10.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Matrix q1 = gaussian(k, k, rng).householderQr().householderQ();
    const Matrix q2 = gaussian(k, k, rng).householderQr().householderQ();
    Vector s(k);
    for (Index i = 0; i < k; ++i) s(i) = 1.0 + (kappa - 1.0) * u(rng);
    if (k > 1) {
        s(0) = 1.0;
        s(k - 1) = kappa;
    }
    return q1 * s.asDiagonal() * q2.transpose();
}

inline homopursuit::ParameterSet random_params(Index p1, Index p2, Index K1, Index K2, Index r, Index n,
                                               std::mt19937_64& rng) {
    homopursuit::ParameterSet t;
    t.C = gaussian(p1, K1, rng);
    t.R = gaussian(p2, K2, rng);
    for (Index i = 0; i < n; ++i) {
        t.L1.push_back(gaussian(K1, r, rng));
        t.L2.push_back(gaussian(K2, r, rng));
    }
    return t;
}

struct Gauge {
    Matrix Q1;
    Matrix Q2;
    std::vector<Matrix> P;
};

inline Gauge random_gauge(Index K1, Index K2, Index r, Index n, std::mt19937_64& rng, double kappa = 10.0) {
    Gauge g{well_conditioned(K1, rng, kappa), well_conditioned(K2, rng, kappa), {}};
    for (Index i = 0; i < n; ++i) g.P.push_back(well_conditioned(r, rng, kappa));
    return g;
}

/// (C Q1, R Q2, Q1^{-1} L1_i P_i, Q2^{-1} L2_i P_i^{-T}); leaves every B_i unchanged.
inline homopursuit::ParameterSet apply_gauge(const homopursuit::ParameterSet& t, const Gauge& g) {
    homopursuit::ParameterSet out;
    out.C = t.C * g.Q1;
    out.R = t.R * g.Q2;
    const Matrix q1i = g.Q1.inverse();
    const Matrix q2i = g.Q2.inverse();
    for (Index i = 0; i < t.n(); ++i) {
        const Matrix& p = g.P[static_cast<std::size_t>(i)];
        out.L1.push_back(q1i * t.L1[static_cast<std::size_t>(i)] * p);
        out.L2.push_back(q2i * t.L2[static_cast<std::size_t>(i)] * p.inverse().transpose());
    }
    return out;
}

/// Gaussian-design dataset with responses from B_i (plus optional noise).
inline homopursuit::Dataset linear_data(const homopursuit::Tensor3& b, Index m, std::mt19937_64& rng,
                                        double noise = 0.0) {
    const Index p1 = b.dim(1), p2 = b.dim(2);
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<homopursuit::Individual> ind;
    for (Index i = 0; i < b.dim(3); ++i) {
        homopursuit::Individual obs;
        obs.design = gaussian(m, p1 * p2, rng);
        const Eigen::Map<const Vector> vb(b.slice(i).data(), p1 * p2);
        obs.y = obs.design * vb;
        for (Index j = 0; j < m; ++j) obs.y(j) += noise * z(rng);
        ind.push_back(std::move(obs));
    }
    return homopursuit::Dataset(p1, p2, std::move(ind));
}

inline double rel_diff(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline double max_abs(const Matrix& m) {
    return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("homopursuit_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace hp_test
