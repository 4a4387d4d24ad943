#pragma once

#include <filesystem>
#include <string>

#include "voldiff/volume.hpp"

namespace voldiff {

/// NVOL: minimal bit-exact float32 volume container.
///
/// Layout (all little-endian):
///   [ 0..15]  magic "NVOLFMT1" padded with NUL to 16 bytes
///   [16..19]  u32 header version (1)
///   [20..23]  u32 dtype tag (1 = float32)
///   [24..39]  u32 channels, depth, height, width
///   [40..63]  f64 spacing (depth, height, width) in mm
///   [64..95]  char[32] channel description, NUL padded
///   [96.. ]   payload: channels*D*H*W float32, channel-major
///
/// save_nvol followed by load_nvol is a byte-exact identity.
void save_nvol(const std::filesystem::path& path, const Volume& v);
Volume load_nvol(const std::filesystem::path& path);

/// Masks and error maps travel as 1-channel NVOL volumes. Loaders validate
/// the value set ({0,1} resp. {-1,0,+1}) and fail with NumericError otherwise.
void save_mask(const std::filesystem::path& path, const SegMask& m);
SegMask load_mask(const std::filesystem::path& path);

/// One axial slice as an 8-bit binary PGM, values linearly mapped from
/// [lo, hi] to [0, 255]. Used by the CLI's --dump-pgm inspection output.
void save_pgm_slice(const std::filesystem::path& path, const Volume& v, int64_t channel,
                    int64_t z, float lo, float hi);

}  // namespace voldiff
