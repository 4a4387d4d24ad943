#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "voldiff/volume.hpp"

namespace voldiff {

struct ConfusionCounts {
    int64_t tp = 0, fp = 0, fn = 0;
};

/// Voxel counts of pred vs truth foreground (dims must match).
ConfusionCounts confusion_counts(const SegMask& pred, const SegMask& truth);

/// 2|A∩B| / (|A|+|B|). Both masks empty counts as perfect agreement (1.0),
/// exactly one empty as total disagreement (0.0).
double dice_score(const SegMask& a, const SegMask& b);

/// Per-voxel distance in millimeters to the nearest foreground voxel center.
/// An empty input mask yields an all-infinite field.
struct DistanceField {
    int64_t depth = 0, height = 0, width = 0;
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::vector<double> data;

    double at(int64_t z, int64_t y, int64_t x) const {
        return data[static_cast<size_t>((z * height + y) * width + x)];
    }
};

/// Exact squared Euclidean distance transform (separable lower-envelope
/// passes along z, then y, then x), spacing-aware, square-rooted on output.
DistanceField edt(const SegMask& mask);

/// Foreground voxels with at least one of their 6 face neighbors in the
/// background; out-of-bounds counts as background.
SegMask surface_voxels(const SegMask& m);

/// Symmetric 95th percentile of the pooled directed surface-to-surface
/// distances, in mm. Undefined (nullopt) when either surface is empty.
std::optional<double> hd95(const SegMask& a, const SegMask& b);

/// Same contract as hd95 via all-pairs distances; intended for small masks.
std::optional<double> hd95_bruteforce(const SegMask& a, const SegMask& b);

struct EvalResult {
    std::string id;
    double dice = 0.0;
    std::optional<double> hd95_mm;
    int64_t tp = 0, fp = 0, fn = 0;
};

struct EvalSummary {
    std::vector<EvalResult> rows;
    double mean_dice = 0.0;
    std::optional<double> mean_hd95_mm;  // over rows where HD95 is defined
    int64_t hd95_undefined = 0;
};

struct LabeledMask {
    std::string id;
    SegMask mask;
};

/// Pairs predictions with references by position, requiring the ids to agree,
/// and aggregates: mean Dice over all rows, mean HD95 over defined rows only.
EvalSummary evaluate_dataset(const std::vector<LabeledMask>& predictions,
                             const std::vector<LabeledMask>& references);

/// Report format: header id,dice,hd95_mm,tp,fp,fn; one row per record; final
/// __mean__ row holding per-column averages. Undefined HD95 is an empty field.
void write_eval_csv(const std::filesystem::path& path, const EvalSummary& s);
EvalSummary read_eval_csv(const std::filesystem::path& path);

}  // namespace voldiff
