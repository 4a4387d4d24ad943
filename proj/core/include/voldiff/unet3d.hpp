#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "voldiff/nn_ops.hpp"
#include "voldiff/optim.hpp"
#include "voldiff/volume.hpp"

namespace voldiff {

/// Topology: `levels` resolutions; width doubles per level from base_channels.
/// Encoder blocks are two 3x3x3 convs + ReLU with 2x2x2 max pooling between
/// levels; the decoder mirrors them with stride-2 2x2x2 transposed convs and
/// skip concatenation; a 1x1x1 conv produces logits. The same net doubles as
/// the diffusion denoiser when use_time_embedding is on: the timestep enters
/// as a sinusoidal vector, passes two affine+ReLU stages, and is projected to
/// a per-channel bias added after each block's first conv.
struct UNet3DConfig {
    int64_t in_channels = 4;
    int64_t out_channels = 2;
    int64_t base_channels = 8;
    int64_t levels = 3;
    bool use_time_embedding = false;
    int64_t time_embed_dim = 32;

    void validate() const {
        if (in_channels < 1 || out_channels < 1 || base_channels < 1 || levels < 1)
            throw ConfigError("UNet3DConfig: channels and levels must be >= 1");
        if (use_time_embedding && (time_embed_dim < 2 || time_embed_dim % 2))
            throw ConfigError("UNet3DConfig: time_embed_dim must be even and >= 2");
    }
    int64_t width(int64_t level) const { return base_channels << level; }
    int64_t pad_multiple() const { return int64_t(1) << (levels - 1); }
};

namespace unet_detail {

template <class S>
void sin_embedding(int64_t t, int64_t dim, std::vector<S>& out) {
    const int64_t half = dim / 2;
    out.resize(static_cast<size_t>(dim));
    for (int64_t k = 0; k < half; ++k) {
        const double f = half > 1 ? std::exp(-std::log(10000.0) * static_cast<double>(k) /
                                             static_cast<double>(half - 1))
                                  : 1.0;
        out[static_cast<size_t>(k)] = static_cast<S>(std::sin(static_cast<double>(t) * f));
        out[static_cast<size_t>(half + k)] = static_cast<S>(std::cos(static_cast<double>(t) * f));
    }
}

// y = W x + b with W stored row-major [out, in]
template <class S>
void linear(const TensorT<S>& w, const TensorT<S>& b, const std::vector<S>& x, std::vector<S>& y) {
    const int64_t out = w.dim(0), in = w.dim(1);
    y.assign(static_cast<size_t>(out), S(0));
    for (int64_t o = 0; o < out; ++o) {
        S acc = b.data[static_cast<size_t>(o)];
        const S* row = w.data.data() + o * in;
        for (int64_t i = 0; i < in; ++i) acc += row[i] * x[static_cast<size_t>(i)];
        y[static_cast<size_t>(o)] = acc;
    }
}

template <class S>
void linear_backward(TensorT<S>& w, TensorT<S>& b, const std::vector<S>& x,
                     const std::vector<S>& dy, std::vector<S>& dx) {
    const int64_t out = w.dim(0), in = w.dim(1);
    dx.assign(static_cast<size_t>(in), S(0));
    for (int64_t o = 0; o < out; ++o) {
        const S g = dy[static_cast<size_t>(o)];
        b.grad[static_cast<size_t>(o)] += g;
        S* wrow = w.grad.data() + o * in;
        const S* vrow = w.data.data() + o * in;
        for (int64_t i = 0; i < in; ++i) {
            wrow[i] += g * x[static_cast<size_t>(i)];
            dx[static_cast<size_t>(i)] += vrow[i] * g;
        }
    }
}

// adds v[c] to every voxel of channel c
template <class S>
void add_channel_bias(TensorT<S>& t, const std::vector<S>& v) {
    const auto d = dims5(t, "add_channel_bias");
    const int64_t vox = d.d * d.h * d.w;
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t c = 0; c < d.c; ++c) {
            S* p = t.data.data() + (n * d.c + c) * vox;
            const S b = v[static_cast<size_t>(c)];
            for (int64_t i = 0; i < vox; ++i) p[i] += b;
        }
}

template <class S>
void sum_per_channel(const TensorT<S>& g, std::vector<S>& out) {
    const auto d = dims5(g, "sum_per_channel");
    const int64_t vox = d.d * d.h * d.w;
    out.assign(static_cast<size_t>(d.c), S(0));
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t c = 0; c < d.c; ++c) {
            const S* p = g.data.data() + (n * d.c + c) * vox;
            S acc = S(0);
            for (int64_t i = 0; i < vox; ++i) acc += p[i];
            out[static_cast<size_t>(c)] += acc;
        }
}

// zero-pads the far end of each spatial axis up to a multiple of m
template <class S>
TensorT<S> pad_to_multiple(const TensorT<S>& t, int64_t m) {
    const auto d = dims5(t, "pad_to_multiple");
    const auto up = [m](int64_t x) { return (x + m - 1) / m * m; };
    const int64_t D = up(d.d), H = up(d.h), W = up(d.w);
    if (D == d.d && H == d.h && W == d.w) return t;
    TensorT<S> out({d.n, d.c, D, H, W});
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t c = 0; c < d.c; ++c)
            for (int64_t z = 0; z < d.d; ++z)
                for (int64_t y = 0; y < d.h; ++y)
                    std::copy_n(t.data.data() + (((n * d.c + c) * d.d + z) * d.h + y) * d.w, d.w,
                                out.data.data() + (((n * d.c + c) * D + z) * H + y) * W);
    return out;
}

template <class S>
TensorT<S> crop_spatial(const TensorT<S>& t, int64_t D, int64_t H, int64_t W) {
    const auto d = dims5(t, "crop_spatial");
    if (D == d.d && H == d.h && W == d.w) return t;
    TensorT<S> out({d.n, d.c, D, H, W});
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t c = 0; c < d.c; ++c)
            for (int64_t z = 0; z < D; ++z)
                for (int64_t y = 0; y < H; ++y)
                    std::copy_n(t.data.data() + (((n * d.c + c) * d.d + z) * d.h + y) * d.w, W,
                                out.data.data() + (((n * d.c + c) * D + z) * H + y) * W);
    return out;
}

// inverse of crop_spatial for gradients: embed into a zero tensor of the padded dims
template <class S>
TensorT<S> embed_spatial(const TensorT<S>& t, int64_t D, int64_t H, int64_t W) {
    const auto d = dims5(t, "embed_spatial");
    if (D == d.d && H == d.h && W == d.w) return t;
    TensorT<S> out({d.n, d.c, D, H, W});
    for (int64_t n = 0; n < d.n; ++n)
        for (int64_t c = 0; c < d.c; ++c)
            for (int64_t z = 0; z < d.d; ++z)
                for (int64_t y = 0; y < d.h; ++y)
                    std::copy_n(t.data.data() + (((n * d.c + c) * d.d + z) * d.h + y) * d.w, d.w,
                                out.data.data() + (((n * d.c + c) * D + z) * H + y) * W);
    return out;
}

}  // namespace unet_detail

/// Builds the parameter set for a config. Deterministic for a fixed seed:
/// parameters are created and initialized in one fixed topological order.
/// Conv and projection weights get Kaiming fan-in init, biases start at zero.
template <class S>
ParamSetT<S> build_unet(const UNet3DConfig& cfg, uint64_t seed) {
    cfg.validate();
    ParamSetT<S> p;
    Rng rng(seed);
    auto conv = [&](const std::string& name, int64_t cout, int64_t cin, int64_t k) {
        kaiming_init(p.add(name + ".w", {cout, cin, k, k, k}), cin * k * k * k, rng);
        p.add(name + ".b", {cout});
    };
    auto convT = [&](const std::string& name, int64_t cin, int64_t cout, int64_t k) {
        kaiming_init(p.add(name + ".w", {cin, cout, k, k, k}), cin * k * k * k, rng);
        p.add(name + ".b", {cout});
    };
    auto fc = [&](const std::string& name, int64_t out, int64_t in) {
        kaiming_init(p.add(name + ".w", {out, in}), in, rng);
        p.add(name + ".b", {out});
    };

    if (cfg.use_time_embedding) {
        fc("temb.fc1", cfg.time_embed_dim, cfg.time_embed_dim);
        fc("temb.fc2", cfg.time_embed_dim, cfg.time_embed_dim);
    }
    for (int64_t i = 0; i < cfg.levels; ++i) {
        const int64_t cin = i == 0 ? cfg.in_channels : cfg.width(i - 1);
        conv("enc" + std::to_string(i) + ".conv1", cfg.width(i), cin, 3);
        conv("enc" + std::to_string(i) + ".conv2", cfg.width(i), cfg.width(i), 3);
        if (cfg.use_time_embedding) fc("enc" + std::to_string(i) + ".tproj", cfg.width(i), cfg.time_embed_dim);
    }
    for (int64_t i = cfg.levels - 2; i >= 0; --i) {
        convT("up" + std::to_string(i), cfg.width(i + 1), cfg.width(i), 2);
        conv("dec" + std::to_string(i) + ".conv1", cfg.width(i), 2 * cfg.width(i), 3);
        conv("dec" + std::to_string(i) + ".conv2", cfg.width(i), cfg.width(i), 3);
        if (cfg.use_time_embedding) fc("dec" + std::to_string(i) + ".tproj", cfg.width(i), cfg.time_embed_dim);
    }
    conv("head", cfg.out_channels, cfg.width(0), 1);
    return p;
}

/// Everything the backward pass needs to replay the forward exactly.
template <class S>
struct UNetTape {
    struct Block {
        TensorT<S> in, z1, a1, z2, a2;  // z* are pre-ReLU, a* post-ReLU
    };
    std::vector<Block> enc;                 // levels entries; enc[levels-1] is the bottom
    std::vector<MaxPoolResult<S>> pools;    // levels-1 entries
    std::vector<TensorT<S>> ups;            // indexed by level, only [0, levels-1) used
    std::vector<Block> dec;                 // indexed by level, only [0, levels-1) used
    std::vector<S> emb0, fc1_z, fc1_a, fc2_z, fc2_a;  // time-embedding intermediates
    int64_t t = -1;
    std::array<int64_t, 3> orig{}, padded{};
};

/// Forward pass. `t` must be >= 1 iff the config enables time embedding.
/// Input is zero-padded at the far end to multiples of 2^(levels-1) and the
/// logits are cropped back, so output spatial dims always equal input dims.
template <class S>
TensorT<S> unet_forward(const ParamSetT<S>& params, const UNet3DConfig& cfg, const TensorT<S>& input,
                        int64_t t = -1, UNetTape<S>* tape = nullptr) {
    using namespace unet_detail;
    cfg.validate();
    const auto in_dims = dims5(input, "unet_forward");
    if (in_dims.c != cfg.in_channels) throw ShapeError("unet_forward: input channels != config");
    if (cfg.use_time_embedding != (t >= 1))
        throw ConfigError("unet_forward: timestep required iff time embedding is configured");

    UNetTape<S> local;
    UNetTape<S>& tp = tape ? *tape : local;
    tp = UNetTape<S>{};
    tp.t = t;
    tp.orig = {in_dims.d, in_dims.h, in_dims.w};
    tp.enc.resize(static_cast<size_t>(cfg.levels));
    tp.pools.resize(static_cast<size_t>(cfg.levels > 1 ? cfg.levels - 1 : 0));
    tp.ups.resize(static_cast<size_t>(cfg.levels > 1 ? cfg.levels - 1 : 0));
    tp.dec.resize(static_cast<size_t>(cfg.levels > 1 ? cfg.levels - 1 : 0));

    if (cfg.use_time_embedding) {
        sin_embedding(t, cfg.time_embed_dim, tp.emb0);
        linear(params.at("temb.fc1.w"), params.at("temb.fc1.b"), tp.emb0, tp.fc1_z);
        tp.fc1_a = tp.fc1_z;
        for (S& v : tp.fc1_a) v = v > S(0) ? v : S(0);
        linear(params.at("temb.fc2.w"), params.at("temb.fc2.b"), tp.fc1_a, tp.fc2_z);
        tp.fc2_a = tp.fc2_z;
        for (S& v : tp.fc2_a) v = v > S(0) ? v : S(0);
    }

    auto run_block = [&](typename UNetTape<S>::Block& blk, const std::string& name, TensorT<S> in) {
        blk.in = std::move(in);
        blk.z1 = conv3d(blk.in, params.at(name + ".conv1.w"), params.at(name + ".conv1.b"), 1, 1);
        if (cfg.use_time_embedding) {
            std::vector<S> bias_vec;
            linear(params.at(name + ".tproj.w"), params.at(name + ".tproj.b"), tp.fc2_a, bias_vec);
            add_channel_bias(blk.z1, bias_vec);
        }
        blk.a1 = relu(blk.z1);
        blk.z2 = conv3d(blk.a1, params.at(name + ".conv2.w"), params.at(name + ".conv2.b"), 1, 1);
        blk.a2 = relu(blk.z2);
    };

    TensorT<S> x = pad_to_multiple(input, cfg.pad_multiple());
    tp.padded = {x.dim(2), x.dim(3), x.dim(4)};

    for (int64_t i = 0; i < cfg.levels; ++i) {
        run_block(tp.enc[static_cast<size_t>(i)], "enc" + std::to_string(i), std::move(x));
        if (i < cfg.levels - 1) {
            tp.pools[static_cast<size_t>(i)] = maxpool3d(tp.enc[static_cast<size_t>(i)].a2, 2, 2);
            x = tp.pools[static_cast<size_t>(i)].out;
        }
    }

    TensorT<S> cur = tp.enc[static_cast<size_t>(cfg.levels - 1)].a2;
    for (int64_t i = cfg.levels - 2; i >= 0; --i) {
        tp.ups[static_cast<size_t>(i)] = conv_transpose3d(
            cur, params.at("up" + std::to_string(i) + ".w"), params.at("up" + std::to_string(i) + ".b"), 2);
        TensorT<S> cat = concat_channels(tp.enc[static_cast<size_t>(i)].a2, tp.ups[static_cast<size_t>(i)]);
        run_block(tp.dec[static_cast<size_t>(i)], "dec" + std::to_string(i), std::move(cat));
        cur = tp.dec[static_cast<size_t>(i)].a2;
    }

    TensorT<S> logits = conv3d(cur, params.at("head.w"), params.at("head.b"), 1, 0);
    return crop_spatial(logits, tp.orig[0], tp.orig[1], tp.orig[2]);
}

/// Accumulates parameter gradients (params must carry grads, typically
/// zeroed first) and returns the gradient w.r.t. the original input.
template <class S>
TensorT<S> unet_backward(ParamSetT<S>& params, const UNet3DConfig& cfg, const UNetTape<S>& tape,
                         const TensorT<S>& d_logits_in) {
    using namespace unet_detail;
    std::vector<S> d_fc2_a(tape.fc2_a.size(), S(0));

    TensorT<S> d_logits = embed_spatial(d_logits_in, tape.padded[0], tape.padded[1], tape.padded[2]);

    auto block_backward = [&](const typename UNetTape<S>::Block& blk, const std::string& name,
                              const TensorT<S>& d_a2) -> TensorT<S> {
        TensorT<S> d_z2 = relu_backward(blk.z2, d_a2);
        TensorT<S> d_a1, d_w, d_b;
        conv3d_backward(blk.a1, params.at(name + ".conv2.w"), d_z2, 1, 1, &d_a1, &d_w, &d_b);
        detail::axpy<S>(d_w.numel(), S(1), d_w.data.data(), params.at(name + ".conv2.w").grad.data());
        detail::axpy<S>(d_b.numel(), S(1), d_b.data.data(), params.at(name + ".conv2.b").grad.data());
        TensorT<S> d_z1 = relu_backward(blk.z1, d_a1);
        if (cfg.use_time_embedding) {
            std::vector<S> d_bias, d_x;
            sum_per_channel(d_z1, d_bias);
            linear_backward(params.at(name + ".tproj.w"), params.at(name + ".tproj.b"), tape.fc2_a,
                            d_bias, d_x);
            for (size_t i = 0; i < d_fc2_a.size(); ++i) d_fc2_a[i] += d_x[i];
        }
        TensorT<S> d_in;
        conv3d_backward(blk.in, params.at(name + ".conv1.w"), d_z1, 1, 1, &d_in, &d_w, &d_b);
        detail::axpy<S>(d_w.numel(), S(1), d_w.data.data(), params.at(name + ".conv1.w").grad.data());
        detail::axpy<S>(d_b.numel(), S(1), d_b.data.data(), params.at(name + ".conv1.b").grad.data());
        return d_in;
    };

    // head
    const TensorT<S>& head_in =
        cfg.levels > 1 ? tape.dec[0].a2 : tape.enc[static_cast<size_t>(cfg.levels - 1)].a2;
    TensorT<S> d_cur, d_w, d_b;
    conv3d_backward(head_in, params.at("head.w"), d_logits, 1, 0, &d_cur, &d_w, &d_b);
    detail::axpy<S>(d_w.numel(), S(1), d_w.data.data(), params.at("head.w").grad.data());
    detail::axpy<S>(d_b.numel(), S(1), d_b.data.data(), params.at("head.b").grad.data());

    // decoder, walking down toward the bottom; d_cur is the grad of dec[i].a2
    std::vector<TensorT<S>> d_skip(static_cast<size_t>(cfg.levels));  // grads of enc[i].a2
    for (int64_t i = 0; i < cfg.levels - 1; ++i) {
        TensorT<S> d_cat = block_backward(tape.dec[static_cast<size_t>(i)], "dec" + std::to_string(i), d_cur);
        auto [d_skip_i, d_up] = concat_channels_backward(d_cat, cfg.width(i));
        d_skip[static_cast<size_t>(i)] = std::move(d_skip_i);
        const TensorT<S>& up_in =
            i == cfg.levels - 2 ? tape.enc[static_cast<size_t>(cfg.levels - 1)].a2
                                : tape.dec[static_cast<size_t>(i + 1)].a2;
        TensorT<S> d_up_in;
        conv_transpose3d_backward(up_in, params.at("up" + std::to_string(i) + ".w"), d_up, 2, &d_up_in,
                                  &d_w, &d_b);
        detail::axpy<S>(d_w.numel(), S(1), d_w.data.data(), params.at("up" + std::to_string(i) + ".w").grad.data());
        detail::axpy<S>(d_b.numel(), S(1), d_b.data.data(), params.at("up" + std::to_string(i) + ".b").grad.data());
        d_cur = std::move(d_up_in);
    }

    // encoder, from the bottom back to the input; d_cur currently holds the
    // grad of enc[levels-1].a2 coming from the last upconv (or the head when levels==1)
    TensorT<S> d_a2 = std::move(d_cur);
    for (int64_t i = cfg.levels - 1; i >= 0; --i) {
        if (i < cfg.levels - 1) {
            // pool backward routes the grad of pools[i].out into enc[i].a2
            TensorT<S> d_pool_in = maxpool3d_backward(tape.pools[static_cast<size_t>(i)].argmax, d_a2,
                                                      tape.enc[static_cast<size_t>(i)].a2.shape);
            detail::axpy<S>(d_pool_in.numel(), S(1), d_skip[static_cast<size_t>(i)].data.data(),
                            d_pool_in.data.data());
            d_a2 = std::move(d_pool_in);
        }
        d_a2 = block_backward(tape.enc[static_cast<size_t>(i)], "enc" + std::to_string(i), d_a2);
    }

    if (cfg.use_time_embedding) {
        std::vector<S> d_fc2_z = d_fc2_a;
        for (size_t i = 0; i < d_fc2_z.size(); ++i)
            if (tape.fc2_z[i] <= S(0)) d_fc2_z[i] = S(0);
        std::vector<S> d_fc1_a;
        linear_backward(params.at("temb.fc2.w"), params.at("temb.fc2.b"), tape.fc1_a, d_fc2_z, d_fc1_a);
        for (size_t i = 0; i < d_fc1_a.size(); ++i)
            if (tape.fc1_z[i] <= S(0)) d_fc1_a[i] = S(0);
        std::vector<S> d_emb0;
        linear_backward(params.at("temb.fc1.w"), params.at("temb.fc1.b"), tape.emb0, d_fc1_a, d_emb0);
    }

    return unet_detail::crop_spatial(d_a2, tape.orig[0], tape.orig[1], tape.orig[2]);
}

/// Wraps a Volume as a [1, C, D, H, W] float tensor.
inline TensorF volume_to_tensor(const Volume& v) {
    TensorF t({1, v.channels, v.depth, v.height, v.width});
    t.data = v.data;
    return t;
}

inline TensorF mask_to_tensor(const SegMask& m) {
    TensorF t({1, 1, m.depth, m.height, m.width});
    t.data = m.data;
    return t;
}

/// Softmax over the two output channels, then argmax; ties go to background.
SegMask predict_initial_mask(const ParamSetT<float>& params, const UNet3DConfig& cfg,
                             const Volume& image);

struct UnetTrainConfig {
    int64_t steps = 1500;
    double lr = 7e-4;
    double dice_smooth = 1.0;
    uint64_t seed = 1;
};

struct TrainLogRow {
    int64_t step;
    double loss;
    double dice;
};

/// Single-record-batch training on BCE(tumor prob, mask) + Dice loss.
/// Deterministic for a fixed seed. Appends one log row per step.
ParamSetT<float> train_unet(const std::vector<DatasetRecord>& train, const UNet3DConfig& cfg,
                            const UnetTrainConfig& tcfg, std::vector<TrainLogRow>* log = nullptr);

void write_train_log_csv(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows);

}  // namespace voldiff
