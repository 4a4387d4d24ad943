#pragma once

#include <filesystem>

#include "voldiff/tensor.hpp"
#include "voldiff/volume.hpp"

namespace voldiff {

/// Ternary voxel field E = initial - truth: +1 false positive, -1 false
/// negative, 0 agreement. Stored as float but every value must be one of
/// {-1, 0, +1} exactly.
struct ErrorMap {
    int64_t depth = 0, height = 0, width = 0;
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::vector<float> data;

    ErrorMap() = default;
    ErrorMap(int64_t d, int64_t h, int64_t w, std::array<double, 3> spacing = {1.0, 1.0, 1.0});

    int64_t numel() const { return depth * height * width; }
    float& at(int64_t z, int64_t y, int64_t x) { return data[static_cast<size_t>((z * height + y) * width + x)]; }
    float at(int64_t z, int64_t y, int64_t x) const { return data[static_cast<size_t>((z * height + y) * width + x)]; }

    void validate() const;
};

ErrorMap compute_error_map(const SegMask& initial, const SegMask& truth);

/// Error values are already in the [-1,1] working range of the denoiser, so
/// encoding is the identity; this just reshapes to a [1,1,D,H,W] tensor.
TensorF encode_error(const ErrorMap& e);

/// Snap a continuous field back to ternary: x < -0.5 -> -1, x > +0.5 -> +1,
/// else 0. Grid geometry (spacing) comes from the reference mask.
ErrorMap decode_error(const TensorF& x, const SegMask& reference);

enum class CorrectionSign {
    Minus,  // corrected = initial - e_hat (e_hat oriented as initial - truth)
    Plus    // corrected = initial + e_hat, for the opposite orientation
};

/// Applies a predicted error map to the initial mask: combine with the chosen
/// sign, clamp to [0,1], threshold at 0.5 (>= 0.5 is foreground). With the
/// exact error map and Minus this returns the ground truth identically.
SegMask apply_correction(const SegMask& initial, const ErrorMap& e_hat,
                         CorrectionSign sign = CorrectionSign::Minus);

/// Single-channel NVOL round trip; load validates ternary content.
void save_error_map(const std::filesystem::path& path, const ErrorMap& e);
ErrorMap load_error_map(const std::filesystem::path& path);

}  // namespace voldiff
