#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "homopursuit/tensor.hpp"

namespace homopursuit {

enum class LinkKind { Linear, Logistic };

std::string_view to_string(LinkKind kind);
LinkKind parse_link(std::string_view name);

/// Cumulant function g and its derivatives for the GLM loss
/// g(<X,B>) - Y <X,B>.
struct Link {
    LinkKind kind = LinkKind::Linear;

    double g(double t) const;
    double g_prime(double t) const;
    double g_second(double t) const;
};

/// Observations of one individual.  Row j of `design` is vec(X_ij) in
/// column-major order (entry (a, b) of X_ij sits at column a + p1 * b), so
/// <X_ij, B> = design.row(j) . vec(B).
struct Individual {
    Matrix design;
    Vector y;

    Index samples() const noexcept { return design.rows(); }
};

class Dataset {
public:
    Dataset() = default;
    Dataset(Index p1, Index p2, std::vector<Individual> individuals);

    /// Build from explicit covariate matrices; xs[i][j] is p1 x p2.
    static Dataset from_matrices(const std::vector<std::vector<Matrix>>& xs,
                                 const std::vector<std::vector<double>>& ys);

    Index p1() const noexcept { return p1_; }
    Index p2() const noexcept { return p2_; }
    Index n() const noexcept { return static_cast<Index>(individuals_.size()); }
    Index samples(Index i) const { return individuals_.at(static_cast<std::size_t>(i)).samples(); }
    Index total_samples() const;

    const Individual& individual(Index i) const { return individuals_.at(static_cast<std::size_t>(i)); }
    const std::vector<Individual>& individuals() const noexcept { return individuals_; }

    Matrix covariate(Index i, Index j) const;

    /// Dataset restricted to the given individuals, in the given order.
    Dataset subset(const std::vector<Index>& which) const;

private:
    Index p1_ = 0;
    Index p2_ = 0;
    std::vector<Individual> individuals_;
};

/// Shared factors C (p1 x K1), R (p2 x K2) and per-individual loadings
/// L1[i] (K1 x r), L2[i] (K2 x r).  B_i = C L1_i L2_i^T R^T.
struct ParameterSet {
    Matrix C;
    Matrix R;
    std::vector<Matrix> L1;
    std::vector<Matrix> L2;

    Index p1() const noexcept { return C.rows(); }
    Index p2() const noexcept { return R.rows(); }
    Index K1() const noexcept { return C.cols(); }
    Index K2() const noexcept { return R.cols(); }
    Index n() const noexcept { return static_cast<Index>(L1.size()); }
    Index r() const noexcept { return L1.empty() ? 0 : L1.front().cols(); }

    /// Throws ArgumentError if shapes are inconsistent.
    void validate() const;

    Matrix coefficient(Index i) const;
};

struct GradientBundle {
    Matrix gC;
    Matrix gR;
    std::vector<Matrix> g1;
    std::vector<Matrix> g2;
    Matrix gram_ctilde;  // sum_i L1_i L2_i^T R^T R L2_i L1_i^T
    Matrix gram_rtilde;  // sum_i L2_i L1_i^T C^T C L1_i L2_i^T
    Matrix gram_c;       // C^T C
    Matrix gram_r;       // R^T R
    std::vector<Matrix> gram_ri;  // L2_i^T R^T R L2_i
    std::vector<Matrix> gram_ci;  // L1_i^T C^T C L1_i
    double loss = 0.0;            // loss_at at the same iterate
};

struct IndividualEval {
    Matrix gradient;  // sum_j (g'(<X_ij, B>) - Y_ij) X_ij
    double loss = 0.0;
};

/// Loss and gradient of one individual's term in a single pass over the data.
IndividualEval evaluate_individual(const Matrix& b, const Individual& obs, const Link& link);

Tensor3 coefficient_tensor(const ParameterSet& theta);

/// Sum over j of g(<X_ij, B>) - Y_ij <X_ij, B> for one individual.
double individual_loss(const Matrix& b, const Individual& obs, const Link& link);

/// Empirical loss summed over all individuals and samples.
double loss_at(const ParameterSet& theta, const Dataset& data, const Link& link);

/// Loss of an arbitrary coefficient stack (slice i is B_i).
double loss_at(const Tensor3& coefficients, const Dataset& data, const Link& link);

/// (g'(<X, B>) - Y) X
Matrix slice_gradient(const Matrix& b, const Matrix& x, double y, const Link& link);

/// sum_j (g'(<X_ij, B>) - Y_ij) X_ij, the gradient of individual_loss in B.
Matrix individual_gradient(const Matrix& b, const Individual& obs, const Link& link);

/// Block partial gradients of loss_at and the Gram matrices used as
/// preconditioners.  Per-individual work may run on `threads` workers; the
/// shared-factor sums are always reduced in individual order.
GradientBundle partial_gradients(const ParameterSet& theta, const Dataset& data, const Link& link,
                                 int threads = 1);

void check_compatible(const ParameterSet& theta, const Dataset& data);

}  // namespace homopursuit
