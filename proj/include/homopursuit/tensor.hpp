#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace homopursuit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/**
 * Dense order-3 tensor of shape (p1, p2, p3).
 *
 * Storage is first-index-fastest: entry (i1, i2, i3) (0-based) lives at
 * offset i1 + p1 * (i2 + p2 * i3).  Frontal slice k is therefore a
 * contiguous column-major p1 x p2 block, and the mode-1 matricization is
 * the raw buffer reinterpreted as a p1 x (p2 p3) column-major matrix.
 */
class Tensor3 {
public:
    using Dims = std::array<Index, 3>;

    Tensor3() = default;
    Tensor3(Index p1, Index p2, Index p3);
    Tensor3(Dims dims, std::vector<double> data);

    const Dims& dims() const noexcept { return dims_; }
    Index dim(int mode) const;  // mode in {1,2,3}
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(Index i1, Index i2, Index i3) { return data_[offset(i1, i2, i3)]; }
    double operator()(Index i1, Index i2, Index i3) const { return data_[offset(i1, i2, i3)]; }

    std::size_t offset(Index i1, Index i2, Index i3) const noexcept {
        return static_cast<std::size_t>(i1 + dims_[0] * (i2 + dims_[1] * i3));
    }

    const std::vector<double>& data() const noexcept { return data_; }
    std::vector<double>& data() noexcept { return data_; }

    /// Frontal slice k as a p1 x p2 view.
    Eigen::Map<const Matrix> slice(Index k) const;
    Eigen::Map<Matrix> slice(Index k);

    double squared_norm() const;

    bool operator==(const Tensor3& other) const = default;

private:
    Dims dims_{0, 0, 0};
    std::vector<double> data_;
};

/// Mode-k unfolding (k in {1,2,3}); columns follow lexicographic fiber order
/// with the lowest remaining mode varying fastest.
Matrix matricize(const Tensor3& t, int mode);

/// Inverse of matricize.
Tensor3 fold(const Matrix& m, int mode, const Tensor3::Dims& dims);

/// t x_k m, i.e. matricize(result, k) == m * matricize(t, k).
Tensor3 mode_product(const Tensor3& t, const Matrix& m, int mode);

/// G x_1 C x_2 R; slice i of the result is C * G_i * R^T.
Tensor3 tucker_compose(const Tensor3& core, const Matrix& c, const Matrix& r);

/// Stack a list of equally sized matrices as frontal slices.
Tensor3 stack_slices(const std::vector<Matrix>& slices);

double frob_inner(const Matrix& a, const Matrix& b);
double frob_inner(const Tensor3& a, const Tensor3& b);

}  // namespace homopursuit
