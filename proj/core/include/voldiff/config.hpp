#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "voldiff/diffusion.hpp"
#include "voldiff/errormap.hpp"
#include "voldiff/preprocess.hpp"

namespace voldiff {

/// Parsed structured-text config: [section] headers, key = value lines,
/// # comments, blank lines. Keys outside any section land in section "".
struct IniDoc {
    struct Entry {
        std::string value;
        int line = 0;
    };
    std::map<std::string, std::map<std::string, Entry>> sections;

    bool has(const std::string& sec, const std::string& key) const {
        auto s = sections.find(sec);
        return s != sections.end() && s->second.count(key) > 0;
    }
};

IniDoc parse_ini_file(const std::filesystem::path& path);
IniDoc parse_ini_text(const std::string& text, const std::string& origin);

struct PreprocessConfig {
    double clip_low = 1.0;
    double clip_high = 99.0;
    int64_t trim_top = 0;
    int64_t trim_bottom = 0;
    std::array<int64_t, 3> target_dims{0, 0, 0};  // all zero = keep native grid
    Interp interp = Interp::Trilinear;
};

struct RefineConfig {
    CorrectionSign sign = CorrectionSign::Minus;
    // sigma_t * z disabled during sampling: the chain follows its mean update
    // and the per-record seed only draws the starting noise field. Small
    // denoisers give markedly cleaner corrections this way; set false for the
    // stochastic chain.
    bool deterministic = true;
    bool dump_pgm = false;
};

/// Everything one pipeline run needs, in one file. Paths inside the config
/// resolve relative to the config file's directory.
struct RunConfig {
    uint64_t seed = 0;

    std::filesystem::path workdir;
    std::filesystem::path phantom_config;
    int64_t records = 60;
    double val_fraction = 0.2;

    PreprocessConfig preprocess;

    UNet3DConfig unet;               // segmentation net: 4 in, 2 out
    UnetTrainConfig unet_train;
    int64_t degrade_dilate = 0;      // dilation rounds applied to stored initial masks

    UNet3DConfig denoiser;           // noise predictor: 5 in, 1 out, time embedding
    DiffusionConfig diffusion;
    DiffTrainConfig diff_train;

    RefineConfig refine;
    std::string eval_pred = "mcorr";  // which prediction eval scores by default

    void validate() const;
};

/// Reads and validates a RunConfig; unknown sections or keys are errors.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace voldiff
