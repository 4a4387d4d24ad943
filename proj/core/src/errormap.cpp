#include "voldiff/errormap.hpp"

#include <cmath>

#include "voldiff/errors.hpp"
#include "voldiff/nvol.hpp"

namespace voldiff {

ErrorMap::ErrorMap(int64_t d, int64_t h, int64_t w, std::array<double, 3> spacing)
    : depth(d), height(h), width(w), spacing_mm(spacing) {
    if (d <= 0 || h <= 0 || w <= 0) throw ShapeError("ErrorMap: non-positive dimension");
    data.assign(static_cast<size_t>(numel()), 0.0f);
}

void ErrorMap::validate() const {
    if (depth <= 0 || height <= 0 || width <= 0) throw ShapeError("ErrorMap: non-positive dimension");
    if (data.size() != static_cast<size_t>(numel()))
        throw ShapeError("ErrorMap: data size does not match dimensions");
    for (double s : spacing_mm)
        if (!(s > 0.0) || !std::isfinite(s)) throw ShapeError("ErrorMap: spacing must be finite and positive");
    for (size_t i = 0; i < data.size(); ++i) {
        const float v = data[i];
        if (v != -1.0f && v != 0.0f && v != 1.0f)
            throw NumericError("ErrorMap: value at flat index " + std::to_string(i) +
                               " is not in {-1,0,1}");
    }
}

ErrorMap compute_error_map(const SegMask& initial, const SegMask& truth) {
    if (!initial.same_grid(truth)) throw ShapeError("compute_error_map: grid mismatch");
    ErrorMap e(initial.depth, initial.height, initial.width, initial.spacing_mm);
    for (size_t i = 0; i < e.data.size(); ++i)
        e.data[i] = static_cast<float>(initial.data[i]) - static_cast<float>(truth.data[i]);
    return e;
}

TensorF encode_error(const ErrorMap& e) {
    TensorF t({1, 1, e.depth, e.height, e.width});
    t.data.assign(e.data.begin(), e.data.end());
    return t;
}

ErrorMap decode_error(const TensorF& x, const SegMask& reference) {
    if (x.ndim() != 5 || x.dim(0) != 1 || x.dim(1) != 1)
        throw ShapeError("decode_error: expected a [1,1,D,H,W] tensor");
    if (x.dim(2) != reference.depth || x.dim(3) != reference.height || x.dim(4) != reference.width)
        throw ShapeError("decode_error: tensor does not match the reference grid");
    ErrorMap e(reference.depth, reference.height, reference.width, reference.spacing_mm);
    for (size_t i = 0; i < e.data.size(); ++i) {
        const float v = x.data[i];
        if (!std::isfinite(v)) throw NumericError("decode_error: non-finite value in input");
        e.data[i] = v < -0.5f ? -1.0f : (v > 0.5f ? 1.0f : 0.0f);
    }
    return e;
}

SegMask apply_correction(const SegMask& initial, const ErrorMap& e_hat, CorrectionSign sign) {
    if (initial.depth != e_hat.depth || initial.height != e_hat.height || initial.width != e_hat.width)
        throw ShapeError("apply_correction: mask/error grid mismatch");
    e_hat.validate();
    SegMask out(initial.depth, initial.height, initial.width, 0, initial.spacing_mm);
    const float s = sign == CorrectionSign::Minus ? -1.0f : 1.0f;
    for (size_t i = 0; i < out.data.size(); ++i) {
        float raw = static_cast<float>(initial.data[i]) + s * e_hat.data[i];
        if (raw < 0.0f) raw = 0.0f;
        if (raw > 1.0f) raw = 1.0f;
        out.data[i] = raw >= 0.5f ? 1 : 0;
    }
    return out;
}

void save_error_map(const std::filesystem::path& path, const ErrorMap& e) {
    e.validate();
    Volume v(1, e.depth, e.height, e.width, 0.0f, e.spacing_mm);
    v.channel_desc = "ERRMAP";
    v.data = e.data;
    save_nvol(path, v);
}

ErrorMap load_error_map(const std::filesystem::path& path) {
    Volume v = load_nvol(path);
    if (v.channels != 1)
        throw IoError(IoError::Kind::BadHeader, "error map file must have one channel: " + path.string());
    ErrorMap e(v.depth, v.height, v.width, v.spacing_mm);
    e.data = v.data;
    e.validate();
    return e;
}

}  // namespace voldiff
