#include "voldiff/preprocess.hpp"

#include <cmath>

#include "voldiff/errors.hpp"
#include "voldiff/stats.hpp"

namespace voldiff {

Volume clip_percentiles(const Volume& v, double p_low, double p_high) {
    if (!(0.0 <= p_low && p_low < p_high && p_high <= 100.0))
        throw ConfigError("clip_percentiles: need 0 <= p_low < p_high <= 100");
    Volume out = v;
    const int64_t n = v.voxels_per_channel();
    std::vector<double> vals(static_cast<size_t>(n));
    for (int64_t c = 0; c < v.channels; ++c) {
        const float* src = v.channel_ptr(c);
        for (int64_t i = 0; i < n; ++i) {
            if (!std::isfinite(src[i]))
                throw NumericError("clip_percentiles: non-finite voxel in channel " + std::to_string(c));
            vals[static_cast<size_t>(i)] = src[i];
        }
        std::sort(vals.begin(), vals.end());
        const auto lo = static_cast<float>(percentile_sorted(vals, p_low));
        const auto hi = static_cast<float>(percentile_sorted(vals, p_high));
        float* dst = out.channel_ptr(c);
        for (int64_t i = 0; i < n; ++i) dst[i] = std::clamp(dst[i], lo, hi);
    }
    return out;
}

namespace {

template <class V>
V trim_axial_impl(const V& v, int64_t channels, int64_t drop_top, int64_t drop_bottom) {
    if (drop_top < 0 || drop_bottom < 0 || drop_top + drop_bottom >= v.depth)
        throw ShapeError("trim_axial: trims " + std::to_string(drop_top) + "+" +
                         std::to_string(drop_bottom) + " exceed depth " + std::to_string(v.depth));
    V out = v;
    out.depth = v.depth - drop_top - drop_bottom;
    out.data.assign(static_cast<size_t>(channels * out.depth * v.height * v.width), 0.0f);
    const int64_t slice = v.height * v.width;
    for (int64_t c = 0; c < channels; ++c)
        for (int64_t z = 0; z < out.depth; ++z)
            std::copy_n(v.data.data() + (c * v.depth + z + drop_top) * slice, slice,
                        out.data.data() + (c * out.depth + z) * slice);
    return out;
}

}  // namespace

Volume trim_axial(const Volume& v, int64_t drop_top, int64_t drop_bottom) {
    return trim_axial_impl(v, v.channels, drop_top, drop_bottom);
}

SegMask trim_axial(const SegMask& m, int64_t drop_top, int64_t drop_bottom) {
    return trim_axial_impl(m, 1, drop_top, drop_bottom);
}

namespace {

// pixel-center source coordinate for output index i along an axis
inline double src_coord(int64_t i, int64_t n_src, int64_t n_dst) {
    return (static_cast<double>(i) + 0.5) * static_cast<double>(n_src) / static_cast<double>(n_dst) - 0.5;
}

inline int64_t nearest_index(double x, int64_t n) {
    auto i = static_cast<int64_t>(std::floor(x + 0.5));
    return std::clamp<int64_t>(i, 0, n - 1);
}

}  // namespace

Volume center_crop_resize(const Volume& v, std::array<int64_t, 3> target, Interp mode) {
    const auto [td, th, tw] = target;
    if (td < 1 || th < 1 || tw < 1) throw ShapeError("center_crop_resize: target dims must be >= 1");
    Volume out(v.channels, td, th, tw, 0.0f,
               {v.spacing_mm[0] * static_cast<double>(v.depth) / static_cast<double>(td),
                v.spacing_mm[1] * static_cast<double>(v.height) / static_cast<double>(th),
                v.spacing_mm[2] * static_cast<double>(v.width) / static_cast<double>(tw)});
    out.channel_desc = v.channel_desc;
    for (int64_t c = 0; c < v.channels; ++c) {
        const float* src = v.channel_ptr(c);
        float* dst = out.channel_ptr(c);
        for (int64_t z = 0; z < td; ++z) {
            const double sz = src_coord(z, v.depth, td);
            for (int64_t y = 0; y < th; ++y) {
                const double sy = src_coord(y, v.height, th);
                for (int64_t x = 0; x < tw; ++x) {
                    const double sx = src_coord(x, v.width, tw);
                    float val;
                    if (mode == Interp::Nearest) {
                        val = src[(nearest_index(sz, v.depth) * v.height + nearest_index(sy, v.height)) * v.width +
                                  nearest_index(sx, v.width)];
                    } else {
                        const auto z0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(sz)), 0, v.depth - 1);
                        const auto y0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(sy)), 0, v.height - 1);
                        const auto x0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(sx)), 0, v.width - 1);
                        const int64_t z1 = std::min(z0 + 1, v.depth - 1);
                        const int64_t y1 = std::min(y0 + 1, v.height - 1);
                        const int64_t x1 = std::min(x0 + 1, v.width - 1);
                        const auto fz = static_cast<float>(std::clamp(sz - static_cast<double>(z0), 0.0, 1.0));
                        const auto fy = static_cast<float>(std::clamp(sy - static_cast<double>(y0), 0.0, 1.0));
                        const auto fx = static_cast<float>(std::clamp(sx - static_cast<double>(x0), 0.0, 1.0));
                        auto at = [&](int64_t zz, int64_t yy, int64_t xx) {
                            return src[(zz * v.height + yy) * v.width + xx];
                        };
                        // lerp as v0 + f*(v1-v0) so constant inputs reproduce exactly
                        const float c00 = at(z0, y0, x0) + fx * (at(z0, y0, x1) - at(z0, y0, x0));
                        const float c01 = at(z0, y1, x0) + fx * (at(z0, y1, x1) - at(z0, y1, x0));
                        const float c10 = at(z1, y0, x0) + fx * (at(z1, y0, x1) - at(z1, y0, x0));
                        const float c11 = at(z1, y1, x0) + fx * (at(z1, y1, x1) - at(z1, y1, x0));
                        const float c0 = c00 + fy * (c01 - c00);
                        const float c1 = c10 + fy * (c11 - c10);
                        val = c0 + fz * (c1 - c0);
                    }
                    dst[(z * th + y) * tw + x] = val;
                }
            }
        }
    }
    return out;
}

SegMask center_crop_resize(const SegMask& m, std::array<int64_t, 3> target) {
    Volume v(1, m.depth, m.height, m.width, 0.0f, m.spacing_mm);
    v.data = m.data;
    Volume r = center_crop_resize(v, target, Interp::Nearest);
    SegMask out(r.depth, r.height, r.width, 0.0f, r.spacing_mm);
    out.data = std::move(r.data);
    return out;
}

SegMask merge_labels(const Volume& labels) {
    if (labels.channels != 1) throw ShapeError("merge_labels: expected single-channel label volume");
    SegMask out(labels.depth, labels.height, labels.width, 0.0f, labels.spacing_mm);
    for (size_t i = 0; i < labels.data.size(); ++i) {
        const float x = labels.data[i];
        if (x < 0.0f || !std::isfinite(x)) throw NumericError("merge_labels: labels must be non-negative");
        out.data[i] = x > 0.0f ? 1.0f : 0.0f;
    }
    return out;
}

Volume stack_modalities(const std::array<Volume, 4>& mods) {
    for (const Volume& m : mods) {
        if (m.channels != 1) throw ShapeError("stack_modalities: inputs must be single-channel");
        if (!m.same_grid(mods[0]) || m.spacing_mm != mods[0].spacing_mm)
            throw ShapeError("stack_modalities: dimension or spacing mismatch");
    }
    Volume out(4, mods[0].depth, mods[0].height, mods[0].width, 0.0f, mods[0].spacing_mm);
    out.channel_desc = "T1,T1ce,T2,FLAIR";
    for (int64_t c = 0; c < 4; ++c)
        std::copy(mods[static_cast<size_t>(c)].data.begin(), mods[static_cast<size_t>(c)].data.end(),
                  out.channel_ptr(c));
    return out;
}

namespace {

SegMask morph6(const SegMask& m, int iterations, bool dilate) {
    SegMask cur = m;
    for (int it = 0; it < iterations; ++it) {
        SegMask next = cur;
        for (int64_t z = 0; z < m.depth; ++z)
            for (int64_t y = 0; y < m.height; ++y)
                for (int64_t x = 0; x < m.width; ++x) {
                    auto nb = [&](int64_t dz, int64_t dy, int64_t dx) {
                        const int64_t zz = z + dz, yy = y + dy, xx = x + dx;
                        if (zz < 0 || zz >= m.depth || yy < 0 || yy >= m.height || xx < 0 || xx >= m.width)
                            return 0.0f;  // outside counts as background
                        return cur.at(zz, yy, xx);
                    };
                    const bool any_fg = nb(-1, 0, 0) > 0.5f || nb(1, 0, 0) > 0.5f || nb(0, -1, 0) > 0.5f ||
                                        nb(0, 1, 0) > 0.5f || nb(0, 0, -1) > 0.5f || nb(0, 0, 1) > 0.5f;
                    const bool all_fg = nb(-1, 0, 0) > 0.5f && nb(1, 0, 0) > 0.5f && nb(0, -1, 0) > 0.5f &&
                                        nb(0, 1, 0) > 0.5f && nb(0, 0, -1) > 0.5f && nb(0, 0, 1) > 0.5f;
                    if (dilate) {
                        if (cur.at(z, y, x) < 0.5f && any_fg) next.at(z, y, x) = 1.0f;
                    } else {
                        if (cur.at(z, y, x) > 0.5f && !all_fg) next.at(z, y, x) = 0.0f;
                    }
                }
        cur = std::move(next);
    }
    return cur;
}

}  // namespace

SegMask dilate6(const SegMask& m, int iterations) { return morph6(m, iterations, true); }
SegMask erode6(const SegMask& m, int iterations) { return morph6(m, iterations, false); }

}  // namespace voldiff
