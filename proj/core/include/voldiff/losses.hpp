#pragma once

#include <cmath>

#include "voldiff/tensor.hpp"

namespace voldiff {

/// Probability clamp for BCE. With float tensors 1-1e-7 still rounds to a
/// value strictly below 1, so log(1-p) stays finite.
inline constexpr double kBceEps = 1e-7;

/// Mean binary cross-entropy. Predictions are clamped to [1e-7, 1-1e-7];
/// outside that band the implemented function is flat, so its gradient is 0
/// there (finite differences agree, since both sides clamp).
template <class S>
S bce(const TensorT<S>& pred, const TensorT<S>& target, TensorT<S>* d_pred = nullptr) {
    if (!same_shape(pred, target)) throw ShapeError("bce: shape mismatch");
    const auto lo = static_cast<S>(kBceEps), hi = static_cast<S>(1.0 - kBceEps);
    const double inv_n = 1.0 / static_cast<double>(pred.numel());
    if (d_pred) *d_pred = TensorT<S>(pred.shape);
    double loss = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const S p = std::clamp(pred.data[i], lo, hi);
        const S t = target.data[i];
        loss -= t * std::log(static_cast<double>(p)) + (S(1) - t) * std::log(1.0 - static_cast<double>(p));
        if (d_pred && pred.data[i] > lo && pred.data[i] < hi)
            d_pred->data[i] = static_cast<S>(static_cast<double>(p - t) /
                                             (static_cast<double>(p) * (1.0 - static_cast<double>(p))) * inv_n);
    }
    return static_cast<S>(loss * inv_n);
}

/// Soft Dice loss 1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s).
/// For p,t in [0,1] the value lies in [0,1]; the smoothing s keeps the
/// empty-empty case at 0 loss.
template <class S>
S dice_loss(const TensorT<S>& pred, const TensorT<S>& target, S smooth = S(1),
            TensorT<S>* d_pred = nullptr) {
    if (!same_shape(pred, target)) throw ShapeError("dice_loss: shape mismatch");
    double inter = 0.0, psum = 0.0, tsum = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        inter += static_cast<double>(pred.data[i]) * static_cast<double>(target.data[i]);
        psum += pred.data[i];
        tsum += target.data[i];
    }
    const double num = 2.0 * inter + static_cast<double>(smooth);
    const double den = psum + tsum + static_cast<double>(smooth);
    if (d_pred) {
        *d_pred = TensorT<S>(pred.shape);
        // d/dp_i of (1 - num/den) = (num - 2*t_i*den) / den^2
        for (size_t i = 0; i < pred.data.size(); ++i)
            d_pred->data[i] =
                static_cast<S>((num - 2.0 * static_cast<double>(target.data[i]) * den) / (den * den));
    }
    return static_cast<S>(1.0 - num / den);
}

template <class S>
S mse(const TensorT<S>& pred, const TensorT<S>& target, TensorT<S>* d_pred = nullptr) {
    if (!same_shape(pred, target)) throw ShapeError("mse: shape mismatch");
    const double inv_n = 1.0 / static_cast<double>(pred.numel());
    if (d_pred) *d_pred = TensorT<S>(pred.shape);
    double loss = 0.0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const double diff = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
        loss += diff * diff;
        if (d_pred) d_pred->data[i] = static_cast<S>(2.0 * diff * inv_n);
    }
    return static_cast<S>(loss * inv_n);
}

}  // namespace voldiff
