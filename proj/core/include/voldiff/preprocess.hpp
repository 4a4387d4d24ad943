#pragma once

#include <array>

#include "voldiff/volume.hpp"

namespace voldiff {

enum class Interp { Nearest, Trilinear };

// Clamp each channel to its [p_low, p_high] percentile band. Percentiles are
// taken over all voxels of the channel (background included) with linear
// interpolation between order statistics. Throws NumericError on non-finite input.
Volume clip_percentiles(const Volume& v, double p_low, double p_high);

// Drop axial slices from both ends; keeps z in [drop_top, depth - drop_bottom).
Volume trim_axial(const Volume& v, int64_t drop_top, int64_t drop_bottom);
SegMask trim_axial(const SegMask& m, int64_t drop_top, int64_t drop_bottom);

// Center-aligned resample to target (D,H,W). Source coordinates come from the
// pixel-center map src = (i + 0.5) * n_src / n_dst - 0.5, so shrinking acts as a
// centered crop of the sampling grid and output spacing is extent / target count.
Volume center_crop_resize(const Volume& v, std::array<int64_t, 3> target, Interp mode);
SegMask center_crop_resize(const SegMask& m, std::array<int64_t, 3> target);  // always nearest

// Collapse a non-negative integer label volume (1 channel) to binary foreground.
SegMask merge_labels(const Volume& labels);

// Concatenate four single-channel volumes in the fixed order T1, T1ce, T2, FLAIR.
Volume stack_modalities(const std::array<Volume, 4>& mods);

// Binary morphology with a 6-connected structuring element, out-of-bounds
// treated as background. Used to manufacture systematically wrong masks.
SegMask dilate6(const SegMask& m, int iterations = 1);
SegMask erode6(const SegMask& m, int iterations = 1);

}  // namespace voldiff
