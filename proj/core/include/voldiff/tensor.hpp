#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "voldiff/errors.hpp"

namespace voldiff {

/// Dense n-d array. Scalar type is a template parameter: float carries the
/// training path, double exists for finite-difference gradient checks where
/// 32-bit roundoff would drown the signal.
template <class S>
struct TensorT {
    std::vector<int64_t> shape;
    std::vector<S> data;
    std::vector<S> grad;  // empty until ensure_grad()

    TensorT() = default;
    explicit TensorT(std::vector<int64_t> sh, S fill = S(0)) : shape(std::move(sh)) {
        data.assign(static_cast<size_t>(numel_of(shape)), fill);
    }

    static int64_t numel_of(const std::vector<int64_t>& sh) {
        int64_t n = 1;
        for (int64_t e : sh) {
            if (e < 1) throw ShapeError("Tensor: non-positive extent");
            n *= e;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t dim(size_t i) const { return shape.at(i); }
    size_t ndim() const { return shape.size(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), S(0));
    }
};

using TensorF = TensorT<float>;
using TensorD = TensorT<double>;

template <class S>
bool same_shape(const TensorT<S>& a, const TensorT<S>& b) {
    return a.shape == b.shape;
}

}  // namespace voldiff
