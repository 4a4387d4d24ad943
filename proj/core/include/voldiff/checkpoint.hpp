#pragma once

#include <filesystem>

#include "voldiff/optim.hpp"

namespace voldiff {

/// Parameter checkpoint: named-tensor archive, little-endian, written in
/// ParamSet order so identical parameters always produce identical bytes.
///
/// Layout: magic "VDCKPT01" (8 bytes), u32 format version (1), u32 scalar tag
/// (1 = float32), u64 parameter count, then per parameter: u32 name length,
/// name bytes, u32 ndim, u64 dims[ndim], float32 payload of prod(dims).
void save_checkpoint(const std::filesystem::path& path, const ParamSetT<float>& params);
ParamSetT<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace voldiff
