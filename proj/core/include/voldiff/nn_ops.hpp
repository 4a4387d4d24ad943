#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "voldiff/tensor.hpp"

// Differentiable kernels for the 3D nets. Every forward has an explicit,
// hand-derived backward next to it; there is no autodiff graph. Inner loops
// are written as contiguous row operations (AXPY / dot over the fastest axis)
// so the compiler can vectorize them.

namespace voldiff {

struct Dims5 {
    int64_t n, c, d, h, w;
};

template <class S>
inline Dims5 dims5(const TensorT<S>& t, const char* who) {
    if (t.ndim() != 5) throw ShapeError(std::string(who) + ": expected a 5-d [N,C,D,H,W] tensor");
    return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), t.dim(4)};
}

namespace detail {

// dst[0..n) += a * src[0..n)
template <class S>
inline void axpy(int64_t n, S a, const S* src, S* dst) {
    for (int64_t i = 0; i < n; ++i) dst[i] += a * src[i];
}

template <class S>
inline S dot(int64_t n, const S* a, const S* b) {
    S acc = S(0);
    for (int64_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

// Copies one [C,D,H,W] block of `t` (sample n) into a zero-padded [C,D+2p,H+2p,W+2p] buffer.
template <class S>
inline void fill_padded(const TensorT<S>& t, int64_t n, int64_t pad, std::vector<S>& out) {
    const auto [N, C, D, H, W] = dims5(t, "fill_padded");
    const int64_t Dp = D + 2 * pad, Hp = H + 2 * pad, Wp = W + 2 * pad;
    out.assign(static_cast<size_t>(C * Dp * Hp * Wp), S(0));
    for (int64_t c = 0; c < C; ++c)
        for (int64_t z = 0; z < D; ++z)
            for (int64_t y = 0; y < H; ++y) {
                const S* src = t.data.data() + (((n * C + c) * D + z) * H + y) * W;
                S* dst = out.data() + ((c * Dp + z + pad) * Hp + y + pad) * Wp + pad;
                std::copy_n(src, W, dst);
            }
}

}  // namespace detail

/// 3D cross-correlation. input [N,Ci,D,H,W], weight [Co,Ci,kd,kh,kw],
/// bias [Co] or empty, symmetric zero padding, output dims floor((X+2p-k)/s)+1.
template <class S>
TensorT<S> conv3d(const TensorT<S>& input, const TensorT<S>& weight, const TensorT<S>& bias,
                  int64_t stride = 1, int64_t padding = 0) {
    const auto in = dims5(input, "conv3d");
    const auto wd = dims5(weight, "conv3d weight");
    if (wd.c != in.c) throw ShapeError("conv3d: weight Cin != input C");
    if (!bias.data.empty() && bias.numel() != wd.n) throw ShapeError("conv3d: bias size != Cout");
    if (stride < 1 || padding < 0) throw ShapeError("conv3d: bad stride/padding");
    const int64_t Do = (in.d + 2 * padding - wd.d) / stride + 1;
    const int64_t Ho = (in.h + 2 * padding - wd.h) / stride + 1;
    const int64_t Wo = (in.w + 2 * padding - wd.w) / stride + 1;
    if (Do < 1 || Ho < 1 || Wo < 1) throw ShapeError("conv3d: kernel larger than padded input");

    TensorT<S> out({in.n, wd.n, Do, Ho, Wo});
    const int64_t Hp = in.h + 2 * padding, Wp = in.w + 2 * padding;
    std::vector<S> padded;
    std::vector<S> acc(static_cast<size_t>(Wo));
    for (int64_t n = 0; n < in.n; ++n) {
        detail::fill_padded(input, n, padding, padded);
        for (int64_t co = 0; co < wd.n; ++co) {
            const S bias_v = bias.data.empty() ? S(0) : bias.data[static_cast<size_t>(co)];
            for (int64_t zo = 0; zo < Do; ++zo)
                for (int64_t yo = 0; yo < Ho; ++yo) {
                    std::fill(acc.begin(), acc.end(), bias_v);
                    for (int64_t ci = 0; ci < in.c; ++ci)
                        for (int64_t kz = 0; kz < wd.d; ++kz)
                            for (int64_t ky = 0; ky < wd.h; ++ky) {
                                const S* prow = padded.data() +
                                                ((ci * (in.d + 2 * padding) + zo * stride + kz) * Hp +
                                                 yo * stride + ky) * Wp;
                                const S* wrow = weight.data.data() +
                                                (((co * in.c + ci) * wd.d + kz) * wd.h + ky) * wd.w;
                                for (int64_t kx = 0; kx < wd.w; ++kx) {
                                    const S wv = wrow[kx];
                                    if (stride == 1) {
                                        detail::axpy(Wo, wv, prow + kx, acc.data());
                                    } else {
                                        for (int64_t x = 0; x < Wo; ++x) acc[static_cast<size_t>(x)] += wv * prow[x * stride + kx];
                                    }
                                }
                            }
                    std::copy(acc.begin(), acc.end(),
                              out.data.data() + (((n * wd.n + co) * Do + zo) * Ho + yo) * Wo);
                }
        }
    }
    return out;
}

/// Gradients of conv3d. Any of d_input/d_weight/d_bias may be null to skip.
template <class S>
void conv3d_backward(const TensorT<S>& input, const TensorT<S>& weight, const TensorT<S>& grad_out,
                     int64_t stride, int64_t padding,
                     TensorT<S>* d_input, TensorT<S>* d_weight, TensorT<S>* d_bias) {
    const auto in = dims5(input, "conv3d_backward");
    const auto wd = dims5(weight, "conv3d_backward weight");
    const auto go = dims5(grad_out, "conv3d_backward grad");
    if (go.n != in.n || go.c != wd.n ||
        go.d != (in.d + 2 * padding - wd.d) / stride + 1 ||
        go.h != (in.h + 2 * padding - wd.h) / stride + 1 ||
        go.w != (in.w + 2 * padding - wd.w) / stride + 1)
        throw ShapeError("conv3d_backward: grad shape mismatch");

    if (d_weight) *d_weight = TensorT<S>(weight.shape);
    if (d_bias) *d_bias = TensorT<S>({wd.n});
    if (d_input) *d_input = TensorT<S>(input.shape);

    const int64_t Dp = in.d + 2 * padding, Hp = in.h + 2 * padding, Wp = in.w + 2 * padding;
    std::vector<S> padded, dpadded;
    for (int64_t n = 0; n < in.n; ++n) {
        if (d_weight) detail::fill_padded(input, n, padding, padded);
        if (d_input) dpadded.assign(static_cast<size_t>(in.c * Dp * Hp * Wp), S(0));
        for (int64_t co = 0; co < wd.n; ++co)
            for (int64_t zo = 0; zo < go.d; ++zo)
                for (int64_t yo = 0; yo < go.h; ++yo) {
                    const S* grow = grad_out.data.data() + (((n * go.c + co) * go.d + zo) * go.h + yo) * go.w;
                    if (d_bias) {
                        S s = S(0);
                        for (int64_t x = 0; x < go.w; ++x) s += grow[x];
                        d_bias->data[static_cast<size_t>(co)] += s;
                    }
                    for (int64_t ci = 0; ci < in.c; ++ci)
                        for (int64_t kz = 0; kz < wd.d; ++kz)
                            for (int64_t ky = 0; ky < wd.h; ++ky) {
                                const int64_t poff = ((ci * Dp + zo * stride + kz) * Hp + yo * stride + ky) * Wp;
                                const int64_t woff = ((co * in.c + ci) * wd.d + kz) * wd.h + ky;
                                for (int64_t kx = 0; kx < wd.w; ++kx) {
                                    if (stride == 1) {
                                        if (d_weight)
                                            d_weight->data[static_cast<size_t>(woff * wd.w + kx)] +=
                                                detail::dot(go.w, grow, padded.data() + poff + kx);
                                        if (d_input)
                                            detail::axpy(go.w, weight.data[static_cast<size_t>(woff * wd.w + kx)],
                                                         grow, dpadded.data() + poff + kx);
                                    } else {
                                        const S wv = weight.data[static_cast<size_t>(woff * wd.w + kx)];
                                        S acc = S(0);
                                        for (int64_t x = 0; x < go.w; ++x) {
                                            const int64_t px = poff + x * stride + kx;
                                            if (d_weight) acc += grow[x] * padded[static_cast<size_t>(px)];
                                            if (d_input) dpadded[static_cast<size_t>(px)] += wv * grow[x];
                                        }
                                        if (d_weight) d_weight->data[static_cast<size_t>(woff * wd.w + kx)] += acc;
                                    }
                                }
                            }
                }
        if (d_input) {
            for (int64_t c = 0; c < in.c; ++c)
                for (int64_t z = 0; z < in.d; ++z)
                    for (int64_t y = 0; y < in.h; ++y) {
                        const S* src = dpadded.data() + ((c * Dp + z + padding) * Hp + y + padding) * Wp + padding;
                        S* dst = d_input->data.data() + (((n * in.c + c) * in.d + z) * in.h + y) * in.w;
                        std::copy_n(src, in.w, dst);
                    }
        }
    }
}

/// Transposed 3D convolution (adjoint of the strided conv with the same
/// weight). input [N,Ci,D,H,W], weight [Ci,Co,kd,kh,kw], output dims (X-1)*s + k.
template <class S>
TensorT<S> conv_transpose3d(const TensorT<S>& input, const TensorT<S>& weight, const TensorT<S>& bias,
                            int64_t stride = 2) {
    const auto in = dims5(input, "conv_transpose3d");
    const auto wd = dims5(weight, "conv_transpose3d weight");
    if (wd.n != in.c) throw ShapeError("conv_transpose3d: weight Cin != input C");
    if (!bias.data.empty() && bias.numel() != wd.c) throw ShapeError("conv_transpose3d: bias size != Cout");
    if (stride < 1) throw ShapeError("conv_transpose3d: bad stride");
    const int64_t Do = (in.d - 1) * stride + wd.d;
    const int64_t Ho = (in.h - 1) * stride + wd.h;
    const int64_t Wo = (in.w - 1) * stride + wd.w;

    TensorT<S> out({in.n, wd.c, Do, Ho, Wo});
    for (int64_t n = 0; n < in.n; ++n) {
        if (!bias.data.empty())
            for (int64_t co = 0; co < wd.c; ++co)
                std::fill_n(out.data.data() + ((n * wd.c + co) * Do) * Ho * Wo, Do * Ho * Wo,
                            bias.data[static_cast<size_t>(co)]);
        for (int64_t ci = 0; ci < in.c; ++ci)
            for (int64_t z = 0; z < in.d; ++z)
                for (int64_t y = 0; y < in.h; ++y) {
                    const S* irow = input.data.data() + (((n * in.c + ci) * in.d + z) * in.h + y) * in.w;
                    for (int64_t co = 0; co < wd.c; ++co)
                        for (int64_t kz = 0; kz < wd.d; ++kz)
                            for (int64_t ky = 0; ky < wd.h; ++ky) {
                                S* orow = out.data.data() +
                                          (((n * wd.c + co) * Do + z * stride + kz) * Ho + y * stride + ky) * Wo;
                                const S* wrow = weight.data.data() +
                                                (((ci * wd.c + co) * wd.d + kz) * wd.h + ky) * wd.w;
                                for (int64_t kx = 0; kx < wd.w; ++kx) {
                                    const S wv = wrow[kx];
                                    for (int64_t x = 0; x < in.w; ++x) orow[x * stride + kx] += wv * irow[x];
                                }
                            }
                }
    }
    return out;
}

template <class S>
void conv_transpose3d_backward(const TensorT<S>& input, const TensorT<S>& weight,
                               const TensorT<S>& grad_out, int64_t stride,
                               TensorT<S>* d_input, TensorT<S>* d_weight, TensorT<S>* d_bias) {
    const auto in = dims5(input, "conv_transpose3d_backward");
    const auto wd = dims5(weight, "conv_transpose3d_backward weight");
    const auto go = dims5(grad_out, "conv_transpose3d_backward grad");
    if (go.n != in.n || go.c != wd.c || go.d != (in.d - 1) * stride + wd.d ||
        go.h != (in.h - 1) * stride + wd.h || go.w != (in.w - 1) * stride + wd.w)
        throw ShapeError("conv_transpose3d_backward: grad shape mismatch");

    if (d_weight) *d_weight = TensorT<S>(weight.shape);
    if (d_bias) *d_bias = TensorT<S>({wd.c});
    if (d_input) *d_input = TensorT<S>(input.shape);

    if (d_bias)
        for (int64_t n = 0; n < go.n; ++n)
            for (int64_t co = 0; co < go.c; ++co) {
                const S* base = grad_out.data.data() + ((n * go.c + co) * go.d) * go.h * go.w;
                S s = S(0);
                for (int64_t i = 0; i < go.d * go.h * go.w; ++i) s += base[i];
                d_bias->data[static_cast<size_t>(co)] += s;
            }

    for (int64_t n = 0; n < in.n; ++n)
        for (int64_t ci = 0; ci < in.c; ++ci)
            for (int64_t z = 0; z < in.d; ++z)
                for (int64_t y = 0; y < in.h; ++y) {
                    const S* irow = input.data.data() + (((n * in.c + ci) * in.d + z) * in.h + y) * in.w;
                    S* dirow = d_input ? d_input->data.data() + (((n * in.c + ci) * in.d + z) * in.h + y) * in.w
                                       : nullptr;
                    for (int64_t co = 0; co < wd.c; ++co)
                        for (int64_t kz = 0; kz < wd.d; ++kz)
                            for (int64_t ky = 0; ky < wd.h; ++ky) {
                                const S* grow = grad_out.data.data() +
                                                (((n * go.c + co) * go.d + z * stride + kz) * go.h +
                                                 y * stride + ky) * go.w;
                                const int64_t woff = (((ci * wd.c + co) * wd.d + kz) * wd.h + ky) * wd.w;
                                for (int64_t kx = 0; kx < wd.w; ++kx) {
                                    const S wv = weight.data[static_cast<size_t>(woff + kx)];
                                    S wacc = S(0);
                                    for (int64_t x = 0; x < in.w; ++x) {
                                        const S g = grow[x * stride + kx];
                                        if (d_input) dirow[x] += wv * g;
                                        wacc += irow[x] * g;
                                    }
                                    if (d_weight) d_weight->data[static_cast<size_t>(woff + kx)] += wacc;
                                }
                            }
                }
}

template <class S>
struct MaxPoolResult {
    TensorT<S> out;
    std::vector<int64_t> argmax;  // flat index into the input, aligned with out.data
};

/// Max pooling. Requires (dim - window) divisible by stride (the U-Net pads
/// inputs up front instead of handling ragged windows). First max in z,y,x
/// scan order wins ties, and backward routes gradient only there.
template <class S>
MaxPoolResult<S> maxpool3d(const TensorT<S>& input, int64_t window = 2, int64_t stride = 2) {
    const auto in = dims5(input, "maxpool3d");
    if (window < 1 || stride < 1) throw ShapeError("maxpool3d: bad window/stride");
    if (in.d < window || in.h < window || in.w < window ||
        (in.d - window) % stride || (in.h - window) % stride || (in.w - window) % stride)
        throw ShapeError("maxpool3d: dims not compatible with window/stride");
    const int64_t Do = (in.d - window) / stride + 1;
    const int64_t Ho = (in.h - window) / stride + 1;
    const int64_t Wo = (in.w - window) / stride + 1;

    MaxPoolResult<S> r;
    r.out = TensorT<S>({in.n, in.c, Do, Ho, Wo});
    r.argmax.resize(r.out.data.size());
    size_t o = 0;
    for (int64_t n = 0; n < in.n; ++n)
        for (int64_t c = 0; c < in.c; ++c)
            for (int64_t zo = 0; zo < Do; ++zo)
                for (int64_t yo = 0; yo < Ho; ++yo)
                    for (int64_t xo = 0; xo < Wo; ++xo, ++o) {
                        S best = S(0);
                        int64_t best_i = -1;
                        for (int64_t kz = 0; kz < window; ++kz)
                            for (int64_t ky = 0; ky < window; ++ky)
                                for (int64_t kx = 0; kx < window; ++kx) {
                                    const int64_t i = (((n * in.c + c) * in.d + zo * stride + kz) * in.h +
                                                       yo * stride + ky) * in.w + xo * stride + kx;
                                    const S v = input.data[static_cast<size_t>(i)];
                                    if (best_i < 0 || v > best) {
                                        best = v;
                                        best_i = i;
                                    }
                                }
                        r.out.data[o] = best;
                        r.argmax[o] = best_i;
                    }
    return r;
}

template <class S>
TensorT<S> maxpool3d_backward(const std::vector<int64_t>& argmax, const TensorT<S>& grad_out,
                              const std::vector<int64_t>& input_shape) {
    if (argmax.size() != grad_out.data.size()) throw ShapeError("maxpool3d_backward: argmax/grad mismatch");
    TensorT<S> d_input(input_shape);
    for (size_t o = 0; o < argmax.size(); ++o)
        d_input.data[static_cast<size_t>(argmax[o])] += grad_out.data[o];
    return d_input;
}

template <class S>
TensorT<S> relu(const TensorT<S>& x) {
    TensorT<S> y = x;
    for (S& v : y.data) v = v > S(0) ? v : S(0);
    return y;
}

template <class S>
TensorT<S> relu_backward(const TensorT<S>& x, const TensorT<S>& grad_out) {
    if (!same_shape(x, grad_out)) throw ShapeError("relu_backward: shape mismatch");
    TensorT<S> d = grad_out;
    for (size_t i = 0; i < d.data.size(); ++i)
        if (x.data[i] <= S(0)) d.data[i] = S(0);
    return d;
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& x) {
    TensorT<S> y = x;
    for (S& v : y.data) v = S(1) / (S(1) + std::exp(-v));
    return y;
}

/// Takes the forward *output* y, not the input.
template <class S>
TensorT<S> sigmoid_backward(const TensorT<S>& y, const TensorT<S>& grad_out) {
    if (!same_shape(y, grad_out)) throw ShapeError("sigmoid_backward: shape mismatch");
    TensorT<S> d = grad_out;
    for (size_t i = 0; i < d.data.size(); ++i) d.data[i] *= y.data[i] * (S(1) - y.data[i]);
    return d;
}

/// Softmax over the channel axis (dim 1) of an [N,C,...] tensor, max-shifted
/// for stability. Per-voxel channel sums come out as 1 within roundoff.
template <class S>
TensorT<S> softmax_channel(const TensorT<S>& x) {
    if (x.ndim() < 2) throw ShapeError("softmax_channel: need at least [N,C]");
    const int64_t N = x.dim(0), C = x.dim(1);
    int64_t spatial = 1;
    for (size_t i = 2; i < x.ndim(); ++i) spatial *= x.dim(i);
    TensorT<S> y = x;
    for (int64_t n = 0; n < N; ++n)
        for (int64_t s = 0; s < spatial; ++s) {
            const int64_t base = n * C * spatial + s;
            S mx = x.data[static_cast<size_t>(base)];
            for (int64_t c = 1; c < C; ++c) mx = std::max(mx, x.data[static_cast<size_t>(base + c * spatial)]);
            S sum = S(0);
            for (int64_t c = 0; c < C; ++c) {
                S e = std::exp(x.data[static_cast<size_t>(base + c * spatial)] - mx);
                y.data[static_cast<size_t>(base + c * spatial)] = e;
                sum += e;
            }
            for (int64_t c = 0; c < C; ++c) y.data[static_cast<size_t>(base + c * spatial)] /= sum;
        }
    return y;
}

/// Takes the forward output y: dx_c = y_c * (g_c - sum_k g_k y_k).
template <class S>
TensorT<S> softmax_channel_backward(const TensorT<S>& y, const TensorT<S>& grad_out) {
    if (!same_shape(y, grad_out)) throw ShapeError("softmax_channel_backward: shape mismatch");
    const int64_t N = y.dim(0), C = y.dim(1);
    int64_t spatial = 1;
    for (size_t i = 2; i < y.ndim(); ++i) spatial *= y.dim(i);
    TensorT<S> d = grad_out;
    for (int64_t n = 0; n < N; ++n)
        for (int64_t s = 0; s < spatial; ++s) {
            const int64_t base = n * C * spatial + s;
            S inner = S(0);
            for (int64_t c = 0; c < C; ++c)
                inner += grad_out.data[static_cast<size_t>(base + c * spatial)] *
                         y.data[static_cast<size_t>(base + c * spatial)];
            for (int64_t c = 0; c < C; ++c) {
                const size_t i = static_cast<size_t>(base + c * spatial);
                d.data[i] = y.data[i] * (grad_out.data[i] - inner);
            }
        }
    return d;
}

template <class S>
TensorT<S> concat_channels(const TensorT<S>& a, const TensorT<S>& b) {
    const auto da = dims5(a, "concat_channels");
    const auto db = dims5(b, "concat_channels");
    if (da.n != db.n || da.d != db.d || da.h != db.h || da.w != db.w)
        throw ShapeError("concat_channels: non-channel dims differ");
    TensorT<S> out({da.n, da.c + db.c, da.d, da.h, da.w});
    const int64_t vox = da.d * da.h * da.w;
    for (int64_t n = 0; n < da.n; ++n) {
        std::copy_n(a.data.data() + n * da.c * vox, da.c * vox,
                    out.data.data() + n * (da.c + db.c) * vox);
        std::copy_n(b.data.data() + n * db.c * vox, db.c * vox,
                    out.data.data() + n * (da.c + db.c) * vox + da.c * vox);
    }
    return out;
}

/// Splits the upstream gradient of concat_channels back into the two inputs.
template <class S>
std::pair<TensorT<S>, TensorT<S>> concat_channels_backward(const TensorT<S>& grad_out, int64_t ca) {
    const auto g = dims5(grad_out, "concat_channels_backward");
    if (ca < 1 || ca >= g.c) throw ShapeError("concat_channels_backward: bad split point");
    TensorT<S> da({g.n, ca, g.d, g.h, g.w});
    TensorT<S> db({g.n, g.c - ca, g.d, g.h, g.w});
    const int64_t vox = g.d * g.h * g.w;
    for (int64_t n = 0; n < g.n; ++n) {
        std::copy_n(grad_out.data.data() + n * g.c * vox, ca * vox, da.data.data() + n * ca * vox);
        std::copy_n(grad_out.data.data() + n * g.c * vox + ca * vox, (g.c - ca) * vox,
                    db.data.data() + n * (g.c - ca) * vox);
    }
    return {std::move(da), std::move(db)};
}

/// Channel slice [c0, c1) of a 5-d tensor.
template <class S>
TensorT<S> slice_channels(const TensorT<S>& t, int64_t c0, int64_t c1) {
    const auto d = dims5(t, "slice_channels");
    if (c0 < 0 || c1 <= c0 || c1 > d.c) throw ShapeError("slice_channels: bad range");
    TensorT<S> out({d.n, c1 - c0, d.d, d.h, d.w});
    const int64_t vox = d.d * d.h * d.w;
    for (int64_t n = 0; n < d.n; ++n)
        std::copy_n(t.data.data() + (n * d.c + c0) * vox, (c1 - c0) * vox,
                    out.data.data() + n * (c1 - c0) * vox);
    return out;
}

/// Embeds a channel-slice gradient back into a zero tensor of the full shape.
template <class S>
TensorT<S> slice_channels_backward(const TensorT<S>& grad_slice, int64_t full_channels, int64_t c0) {
    const auto d = dims5(grad_slice, "slice_channels_backward");
    if (c0 < 0 || c0 + d.c > full_channels) throw ShapeError("slice_channels_backward: bad range");
    TensorT<S> out({d.n, full_channels, d.d, d.h, d.w});
    const int64_t vox = d.d * d.h * d.w;
    for (int64_t n = 0; n < d.n; ++n)
        std::copy_n(grad_slice.data.data() + n * d.c * vox, d.c * vox,
                    out.data.data() + (n * full_channels + c0) * vox);
    return out;
}

}  // namespace voldiff
