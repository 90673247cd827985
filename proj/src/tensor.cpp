#include "homopursuit/tensor.hpp"

#include <string>

#include "homopursuit/errors.hpp"

namespace homopursuit {

namespace {

void check_mode(int mode) {
    if (mode < 1 || mode > 3) {
        throw ArgumentError("tensor mode must be 1, 2 or 3 (got " + std::to_string(mode) + ")");
    }
}

// Strides of the two remaining modes in the mode-k column index.
struct Unfolding {
    int other_lo;  // 0-based mode that varies fastest along columns
    int other_hi;
};

Unfolding unfolding(int mode) {
    switch (mode) {
        case 1: return {1, 2};
        case 2: return {0, 2};
        default: return {0, 1};
    }
}

}  // namespace

Tensor3::Tensor3(Index p1, Index p2, Index p3)
    : dims_{p1, p2, p3} {
    if (p1 < 0 || p2 < 0 || p3 < 0) throw ArgumentError("negative tensor dimension");
    data_.assign(static_cast<std::size_t>(p1 * p2 * p3), 0.0);
}

Tensor3::Tensor3(Dims dims, std::vector<double> data)
    : dims_(dims), data_(std::move(data)) {
    if (dims_[0] < 0 || dims_[1] < 0 || dims_[2] < 0) throw ArgumentError("negative tensor dimension");
    if (data_.size() != static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2])) {
        throw ArgumentError("tensor data length does not match p1*p2*p3");
    }
}

Index Tensor3::dim(int mode) const {
    check_mode(mode);
    return dims_[mode - 1];
}

Eigen::Map<const Matrix> Tensor3::slice(Index k) const {
    if (k < 0 || k >= dims_[2]) throw ArgumentError("slice index out of range");
    return {data_.data() + k * dims_[0] * dims_[1], dims_[0], dims_[1]};
}

Eigen::Map<Matrix> Tensor3::slice(Index k) {
    if (k < 0 || k >= dims_[2]) throw ArgumentError("slice index out of range");
    return {data_.data() + k * dims_[0] * dims_[1], dims_[0], dims_[1]};
}

double Tensor3::squared_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return s;
}

Matrix matricize(const Tensor3& t, int mode) {
    check_mode(mode);
    const auto& d = t.dims();
    const int k = mode - 1;
    const auto [lo, hi] = unfolding(mode);
    Matrix out(d[k], d[lo] * d[hi]);
    std::array<Index, 3> idx{};
    for (idx[2] = 0; idx[2] < d[2]; ++idx[2]) {
        for (idx[1] = 0; idx[1] < d[1]; ++idx[1]) {
            for (idx[0] = 0; idx[0] < d[0]; ++idx[0]) {
                out(idx[k], idx[lo] + d[lo] * idx[hi]) = t(idx[0], idx[1], idx[2]);
            }
        }
    }
    return out;
}

Tensor3 fold(const Matrix& m, int mode, const Tensor3::Dims& dims) {
    check_mode(mode);
    const int k = mode - 1;
    const auto [lo, hi] = unfolding(mode);
    if (m.rows() != dims[k] || m.cols() != dims[lo] * dims[hi]) {
        throw ArgumentError("fold: matrix shape inconsistent with target dims");
    }
    Tensor3 t(dims[0], dims[1], dims[2]);
    std::array<Index, 3> idx{};
    for (idx[2] = 0; idx[2] < dims[2]; ++idx[2]) {
        for (idx[1] = 0; idx[1] < dims[1]; ++idx[1]) {
            for (idx[0] = 0; idx[0] < dims[0]; ++idx[0]) {
                t(idx[0], idx[1], idx[2]) = m(idx[k], idx[lo] + dims[lo] * idx[hi]);
            }
        }
    }
    return t;
}

Tensor3 mode_product(const Tensor3& t, const Matrix& m, int mode) {
    check_mode(mode);
    if (m.cols() != t.dim(mode)) {
        throw ArgumentError("mode_product: matrix columns must equal tensor dim " + std::to_string(mode));
    }
    auto dims = t.dims();
    dims[mode - 1] = m.rows();
    return fold(m * matricize(t, mode), mode, dims);
}

Tensor3 tucker_compose(const Tensor3& core, const Matrix& c, const Matrix& r) {
    if (c.cols() != core.dim(1) || r.cols() != core.dim(2)) {
        throw ArgumentError("tucker_compose: factor ranks do not match core dims");
    }
    Tensor3 out(c.rows(), r.rows(), core.dim(3));
    for (Index i = 0; i < core.dim(3); ++i) {
        out.slice(i) = c * core.slice(i) * r.transpose();
    }
    return out;
}

Tensor3 stack_slices(const std::vector<Matrix>& slices) {
    if (slices.empty()) return {};
    const Index p1 = slices.front().rows();
    const Index p2 = slices.front().cols();
    Tensor3 out(p1, p2, static_cast<Index>(slices.size()));
    for (std::size_t i = 0; i < slices.size(); ++i) {
        if (slices[i].rows() != p1 || slices[i].cols() != p2) {
            throw ArgumentError("stack_slices: slices differ in shape");
        }
        out.slice(static_cast<Index>(i)) = slices[i];
    }
    return out;
}

double frob_inner(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ArgumentError("frob_inner: shape mismatch");
    }
    return a.cwiseProduct(b).sum();
}

double frob_inner(const Tensor3& a, const Tensor3& b) {
    if (a.dims() != b.dims()) throw ArgumentError("frob_inner: tensor shape mismatch");
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a.data()[k] * b.data()[k];
    return s;
}

}  // namespace homopursuit
