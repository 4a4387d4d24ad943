#pragma once

#include <optional>

#include "voldiff/config.hpp"
#include "voldiff/metrics.hpp"
#include "voldiff/phantom.hpp"

namespace voldiff {

/// Command-line overrides applied on top of the loaded config.
struct StageOverrides {
    std::optional<int64_t> records;
    std::optional<std::filesystem::path> out;  // replaces workdir
    std::optional<uint64_t> seed;
    std::optional<bool> dump_pgm;
    std::optional<std::string> eval_pred;
};

RunConfig apply_overrides(RunConfig rc, const StageOverrides& o);

/// Fixed artifact layout inside the run's working directory. Every stage
/// writes only under its own subdirectory, so reruns of a downstream stage
/// never touch upstream files.
struct Workdir {
    std::filesystem::path root;

    std::filesystem::path raw() const { return root / "raw"; }
    std::filesystem::path pre() const { return root / "pre"; }
    std::filesystem::path ckpt() const { return root / "ckpt"; }
    std::filesystem::path pred() const { return root / "pred"; }
    std::filesystem::path logs() const { return root / "logs"; }
    std::filesystem::path evals() const { return root / "evals"; }
    std::filesystem::path slices() const { return root / "slices"; }

    std::filesystem::path raw_manifest() const { return raw() / "manifest.tsv"; }
    std::filesystem::path pre_manifest() const { return pre() / "manifest.tsv"; }
    std::filesystem::path unet_ckpt() const { return ckpt() / "unet.ckpt"; }
    std::filesystem::path diff_ckpt() const { return ckpt() / "diff.ckpt"; }
    std::filesystem::path unet_log() const { return logs() / "unet_train.csv"; }
    std::filesystem::path diff_log() const { return logs() / "diff_train.csv"; }
    std::filesystem::path report(const std::string& pred) const {
        return evals() / ("report_" + pred + ".csv");
    }
};

/// Deterministic split over n records sorted by id: the last ceil(f*n) ids
/// are validation, the rest training.
struct SplitIndices {
    std::vector<size_t> train, val;
};
SplitIndices split_records(size_t n, double val_fraction);

void run_synth(const RunConfig& rc);
void run_preprocess(const RunConfig& rc);
void run_train_unet(const RunConfig& rc);
void run_train_diff(const RunConfig& rc);
void run_refine(const RunConfig& rc);

/// Scores the chosen prediction kind ("mi" or "mcorr") for the validation
/// split against ground truth and returns the written summary.
EvalSummary run_eval(const RunConfig& rc);

}  // namespace voldiff
