#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "voldiff/errors.hpp"

namespace voldiff {

/// Dense multi-channel 3D float field with physical voxel spacing.
/// Data is channel-major: index = ((c*D + z)*H + y)*W + x.
struct Volume {
    int64_t channels = 0;
    int64_t depth = 0, height = 0, width = 0;
    std::array<double, 3> spacing_mm = {1.0, 1.0, 1.0};  // (depth, height, width) axes
    std::string channel_desc;                            // free-form, recorded in the container header
    std::vector<float> data;

    Volume() = default;
    Volume(int64_t c, int64_t d, int64_t h, int64_t w, float fill = 0.0f,
           std::array<double, 3> spacing = {1.0, 1.0, 1.0})
        : channels(c), depth(d), height(h), width(w), spacing_mm(spacing),
          data(static_cast<size_t>(c * d * h * w), fill) {}

    int64_t voxels_per_channel() const { return depth * height * width; }
    int64_t numel() const { return channels * voxels_per_channel(); }

    float& at(int64_t c, int64_t z, int64_t y, int64_t x) {
        return data[static_cast<size_t>(((c * depth + z) * height + y) * width + x)];
    }
    float at(int64_t c, int64_t z, int64_t y, int64_t x) const {
        return data[static_cast<size_t>(((c * depth + z) * height + y) * width + x)];
    }

    const float* channel_ptr(int64_t c) const { return data.data() + c * voxels_per_channel(); }
    float* channel_ptr(int64_t c) { return data.data() + c * voxels_per_channel(); }

    bool same_grid(const Volume& o) const {
        return depth == o.depth && height == o.height && width == o.width &&
               spacing_mm == o.spacing_mm;
    }

    /// Enforces the type invariants: consistent data length, positive spacing, finite values.
    void validate() const {
        if (channels < 1 || depth < 1 || height < 1 || width < 1)
            throw ShapeError("Volume: non-positive dimensions");
        if (static_cast<int64_t>(data.size()) != numel())
            throw ShapeError("Volume: data length does not match channels*D*H*W");
        for (double s : spacing_mm)
            if (!(s > 0.0) || !std::isfinite(s))
                throw ShapeError("Volume: spacing components must be positive and finite");
        for (float v : data)
            if (!std::isfinite(v)) throw NumericError("Volume: non-finite voxel value");
    }
};

/// Binary 3D mask; every element must be exactly 0 or 1.
struct SegMask {
    int64_t depth = 0, height = 0, width = 0;
    std::array<double, 3> spacing_mm = {1.0, 1.0, 1.0};
    std::vector<float> data;

    SegMask() = default;
    SegMask(int64_t d, int64_t h, int64_t w, float fill = 0.0f,
            std::array<double, 3> spacing = {1.0, 1.0, 1.0})
        : depth(d), height(h), width(w), spacing_mm(spacing),
          data(static_cast<size_t>(d * h * w), fill) {}

    int64_t numel() const { return depth * height * width; }

    float& at(int64_t z, int64_t y, int64_t x) {
        return data[static_cast<size_t>((z * height + y) * width + x)];
    }
    float at(int64_t z, int64_t y, int64_t x) const {
        return data[static_cast<size_t>((z * height + y) * width + x)];
    }

    bool same_grid(const SegMask& o) const {
        return depth == o.depth && height == o.height && width == o.width &&
               spacing_mm == o.spacing_mm;
    }
    bool same_grid(const Volume& o) const {
        return depth == o.depth && height == o.height && width == o.width &&
               spacing_mm == o.spacing_mm;
    }

    int64_t foreground_count() const {
        int64_t n = 0;
        for (float v : data) n += (v != 0.0f);
        return n;
    }

    void validate() const {
        if (depth < 1 || height < 1 || width < 1)
            throw ShapeError("SegMask: non-positive dimensions");
        if (static_cast<int64_t>(data.size()) != numel())
            throw ShapeError("SegMask: data length does not match D*H*W");
        for (float v : data)
            if (v != 0.0f && v != 1.0f) throw NumericError("SegMask: value not in {0,1}");
    }
};

/// One subject: a 4-channel image paired with its ground-truth mask.
struct DatasetRecord {
    std::string id;
    Volume image;
    SegMask mask;

    void validate() const {
        image.validate();
        mask.validate();
        if (!mask.same_grid(image))
            throw ShapeError("DatasetRecord '" + id + "': image/mask grid mismatch");
    }
};

}  // namespace voldiff
