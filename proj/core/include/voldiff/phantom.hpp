#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "voldiff/rng.hpp"
#include "voldiff/volume.hpp"

namespace voldiff {

/// Parameters for the synthetic lesion-phantom generator that stands in for a
/// real MRI dataset. Stored as a flat "key = value" text file.
struct PhantomConfig {
    int64_t depth = 32, height = 48, width = 48;
    std::array<double, 3> spacing_mm = {1.0, 1.0, 1.0};
    int64_t num_lesions_min = 1, num_lesions_max = 3;
    double lesion_radius_mm_min = 3.0, lesion_radius_mm_max = 7.0;
    std::array<double, 4> channel_mean = {0.20, 0.25, 0.30, 0.35};      // T1, T1ce, T2, FLAIR
    std::array<double, 4> channel_contrast = {0.35, 0.55, 0.45, 0.60};  // added inside lesions
    double noise_sigma = 0.03;
    uint64_t seed = 1;

    void validate() const;  // throws ConfigError, incl. lesions that cannot fit the volume
};

PhantomConfig load_phantom_config(const std::filesystem::path& path);
void save_phantom_config(const std::filesystem::path& path, const PhantomConfig& cfg);

/// Marks every voxel whose center lies inside the analytic ellipsoid
/// sum_axis ((i - center_i) * spacing_i / radius_i)^2 <= 1.
void add_ellipsoid(SegMask& m, std::array<double, 3> center_vox, std::array<double, 3> radii_mm);

/// Renders the 4-channel image for a lesion mask: channel c is
/// mean[c] + contrast[c] inside lesions, plus N(0, noise_sigma^2) noise.
/// Noise is drawn channel-major from rng, so the draw order is part of the format.
Volume render_phantom_image(const SegMask& lesions, const PhantomConfig& cfg, Rng& rng);

/// One deterministic synthetic subject (same cfg.seed gives the identical record).
DatasetRecord synth_phantom(const PhantomConfig& cfg, const std::string& id = "phantom");

/// Dataset manifest: one "<image>\t<mask>" path pair per line, paths relative
/// to the manifest's own directory. A record's id is its image filename up to
/// the first dot (rec0003.img.nvol -> rec0003).
struct ManifestEntry {
    std::string id;
    std::filesystem::path image_path;  // absolute after load_manifest
    std::filesystem::path mask_path;
};

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, std::string>>& relative_pairs);

/// Loads the image/mask pair behind a manifest entry. Missing files raise
/// MissingArtifactError so the CLI can report "run synth/preprocess first".
DatasetRecord load_record(const ManifestEntry& entry);

}  // namespace voldiff
