#include "voldiff/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "voldiff/checkpoint.hpp"
#include "voldiff/errors.hpp"
#include "voldiff/nvol.hpp"

namespace voldiff {

namespace {

std::string record_id(int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "rec%04lld", static_cast<long long>(i));
    return buf;
}

std::vector<ManifestEntry> load_stage_manifest(const std::filesystem::path& path,
                                               const char* missing_hint) {
    if (!std::filesystem::exists(path))
        throw MissingArtifactError("manifest not found: " + path.string() + " (" + missing_hint + ")");
    return load_manifest(path);
}

// Initial mask as downstream stages see it: the trained net's prediction,
// optionally thickened to emulate a weaker segmenter. The same function runs
// in train-diff and refine so both stages work from identical masks.
SegMask initial_mask_for(const ParamSetT<float>& params, const UNet3DConfig& cfg,
                         const Volume& image, int64_t degrade_dilate) {
    SegMask m = predict_initial_mask(params, cfg, image);
    if (degrade_dilate > 0) m = dilate6(m, degrade_dilate);
    return m;
}

std::filesystem::path pred_path(const Workdir& wd, const std::string& id, const char* kind) {
    return wd.pred() / (id + "." + kind + ".nvol");
}

}  // namespace

RunConfig apply_overrides(RunConfig rc, const StageOverrides& o) {
    if (o.records) rc.records = *o.records;
    if (o.out) rc.workdir = *o.out;
    if (o.seed) rc.seed = *o.seed;
    if (o.dump_pgm) rc.refine.dump_pgm = *o.dump_pgm;
    if (o.eval_pred) rc.eval_pred = *o.eval_pred;
    rc.validate();
    return rc;
}

SplitIndices split_records(size_t n, double val_fraction) {
    if (n < 2) throw ConfigError("split_records: need at least 2 records");
    auto nval = static_cast<size_t>(
        std::ceil(val_fraction * static_cast<double>(n)));
    if (nval < 1) nval = 1;
    if (nval >= n)
        throw ConfigError("split_records: val_fraction leaves no training records");
    SplitIndices s;
    for (size_t i = 0; i < n - nval; ++i) s.train.push_back(i);
    for (size_t i = n - nval; i < n; ++i) s.val.push_back(i);
    return s;
}

void run_synth(const RunConfig& rc) {
    if (rc.phantom_config.empty())
        throw ConfigError("synth requires data.phantom_config in the run config");
    PhantomConfig pc = load_phantom_config(rc.phantom_config);
    const Workdir wd{rc.workdir};
    std::filesystem::create_directories(wd.raw());

    std::vector<std::pair<std::string, std::string>> pairs;
    for (int64_t i = 0; i < rc.records; ++i) {
        const std::string id = record_id(i);
        pc.seed = derive_seed(rc.seed, "synth", static_cast<uint64_t>(i));
        const DatasetRecord rec = synth_phantom(pc, id);
        const std::string img = id + ".img.nvol", seg = id + ".seg.nvol";
        save_nvol(wd.raw() / img, rec.image);
        save_mask(wd.raw() / seg, rec.mask);
        pairs.emplace_back(img, seg);
    }
    save_manifest(wd.raw_manifest(), pairs);
}

void run_preprocess(const RunConfig& rc) {
    const Workdir wd{rc.workdir};
    const auto entries = load_stage_manifest(wd.raw_manifest(), "run synth first");
    std::filesystem::create_directories(wd.pre());

    const auto& pp = rc.preprocess;
    const bool resize = pp.target_dims[0] > 0;
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& e : entries) {
        DatasetRecord rec = load_record(e);
        rec.image = clip_percentiles(rec.image, pp.clip_low, pp.clip_high);
        if (pp.trim_top > 0 || pp.trim_bottom > 0) {
            rec.image = trim_axial(rec.image, pp.trim_top, pp.trim_bottom);
            rec.mask = trim_axial(rec.mask, pp.trim_top, pp.trim_bottom);
        }
        if (resize) {
            rec.image = center_crop_resize(rec.image, pp.target_dims, pp.interp);
            rec.mask = center_crop_resize(rec.mask, pp.target_dims);
        }
        const std::string img = e.id + ".img.nvol", seg = e.id + ".seg.nvol";
        save_nvol(wd.pre() / img, rec.image);
        save_mask(wd.pre() / seg, rec.mask);
        pairs.emplace_back(img, seg);
    }
    save_manifest(wd.pre_manifest(), pairs);
}

void run_train_unet(const RunConfig& rc) {
    const Workdir wd{rc.workdir};
    const auto entries = load_stage_manifest(wd.pre_manifest(), "run preprocess first");
    const SplitIndices split = split_records(entries.size(), rc.val_fraction);

    std::vector<DatasetRecord> train;
    train.reserve(split.train.size());
    for (size_t i : split.train) train.push_back(load_record(entries[i]));

    UnetTrainConfig tcfg = rc.unet_train;
    tcfg.seed = derive_seed(rc.seed, "train-unet");
    std::vector<TrainLogRow> log;
    const ParamSetT<float> params = train_unet(train, rc.unet, tcfg, &log);

    std::filesystem::create_directories(wd.ckpt());
    std::filesystem::create_directories(wd.logs());
    save_checkpoint(wd.unet_ckpt(), params);
    write_train_log_csv(wd.unet_log(), log);
}

void run_train_diff(const RunConfig& rc) {
    const Workdir wd{rc.workdir};
    const auto entries = load_stage_manifest(wd.pre_manifest(), "run preprocess first");
    if (!std::filesystem::exists(wd.unet_ckpt()))
        throw MissingArtifactError("segmentation checkpoint not found: " + wd.unet_ckpt().string() +
                                   " (run train-unet first)");
    const ParamSetT<float> unet_params = load_checkpoint(wd.unet_ckpt());
    const SplitIndices split = split_records(entries.size(), rc.val_fraction);

    std::vector<RefineRecord> train;
    train.reserve(split.train.size());
    for (size_t i : split.train) {
        DatasetRecord rec = load_record(entries[i]);
        RefineRecord r;
        r.id = rec.id;
        r.initial = initial_mask_for(unet_params, rc.unet, rec.image, rc.degrade_dilate);
        r.gt = std::move(rec.mask);
        r.image = std::move(rec.image);
        train.push_back(std::move(r));
    }

    DiffTrainConfig tcfg = rc.diff_train;
    tcfg.seed = derive_seed(rc.seed, "train-diff");
    std::vector<DiffLogRow> log;
    const ParamSetT<float> params = train_diffusion(train, rc.denoiser, rc.diffusion, tcfg, &log);

    std::filesystem::create_directories(wd.ckpt());
    std::filesystem::create_directories(wd.logs());
    save_checkpoint(wd.diff_ckpt(), params);
    write_diff_log_csv(wd.diff_log(), log);
}

void run_refine(const RunConfig& rc) {
    const Workdir wd{rc.workdir};
    const auto entries = load_stage_manifest(wd.pre_manifest(), "run preprocess first");
    if (!std::filesystem::exists(wd.unet_ckpt()))
        throw MissingArtifactError("segmentation checkpoint not found: " + wd.unet_ckpt().string() +
                                   " (run train-unet first)");
    if (!std::filesystem::exists(wd.diff_ckpt()))
        throw MissingArtifactError("denoiser checkpoint not found: " + wd.diff_ckpt().string() +
                                   " (run train-diff first)");
    const ParamSetT<float> unet_params = load_checkpoint(wd.unet_ckpt());
    const ParamSetT<float> diff_params = load_checkpoint(wd.diff_ckpt());
    const NoisePredictor eps_model = unet_noise_predictor(diff_params, rc.denoiser);
    const NoiseSchedule ns = linear_schedule(rc.diffusion.T, rc.diffusion.beta_start,
                                             rc.diffusion.beta_end);

    const SplitIndices split = split_records(entries.size(), rc.val_fraction);
    std::filesystem::create_directories(wd.pred());
    if (rc.refine.dump_pgm) std::filesystem::create_directories(wd.slices());

    for (size_t i : split.val) {
        const DatasetRecord rec = load_record(entries[i]);
        const SegMask mi = initial_mask_for(unet_params, rc.unet, rec.image, rc.degrade_dilate);

        // per-record seed: sampling does not depend on validation set order
        Rng rng(derive_seed(rc.seed, "refine-" + rec.id));
        const TensorF x = sample_error_map(rec.image, eps_model, ns, rng, rc.refine.deterministic);
        const ErrorMap ehat = decode_error(x, mi);
        const SegMask mcorr = apply_correction(mi, ehat, rc.refine.sign);

        save_mask(pred_path(wd, rec.id, "mi"), mi);
        save_error_map(pred_path(wd, rec.id, "ehat"), ehat);
        save_mask(pred_path(wd, rec.id, "mcorr"), mcorr);

        if (rc.refine.dump_pgm) {
            const int64_t z = rec.image.depth / 2;
            auto dump = [&](const char* kind, const Volume& v, float lo, float hi) {
                save_pgm_slice(wd.slices() / (rec.id + "." + kind + ".pgm"), v, 0, z, lo, hi);
            };
            Volume img1(1, rec.image.depth, rec.image.height, rec.image.width, 0.0f,
                        rec.image.spacing_mm);
            img1.data.assign(rec.image.data.begin(),
                             rec.image.data.begin() + rec.image.voxels_per_channel());
            dump("img", img1, 0.0f, 1.0f);
            Volume em(1, ehat.depth, ehat.height, ehat.width, 0.0f, ehat.spacing_mm);
            em.data = ehat.data;
            dump("ehat", em, -1.0f, 1.0f);
            auto mask_vol = [](const SegMask& m) {
                Volume v(1, m.depth, m.height, m.width, 0.0f, m.spacing_mm);
                v.data = m.data;
                return v;
            };
            dump("mi", mask_vol(mi), 0.0f, 1.0f);
            dump("mcorr", mask_vol(mcorr), 0.0f, 1.0f);
            dump("gt", mask_vol(rec.mask), 0.0f, 1.0f);
        }
    }
}

EvalSummary run_eval(const RunConfig& rc) {
    const Workdir wd{rc.workdir};
    const auto entries = load_stage_manifest(wd.pre_manifest(), "run preprocess first");
    const SplitIndices split = split_records(entries.size(), rc.val_fraction);

    std::vector<LabeledMask> preds, refs;
    for (size_t i : split.val) {
        const auto p = pred_path(wd, entries[i].id, rc.eval_pred.c_str());
        if (!std::filesystem::exists(p))
            throw MissingArtifactError("prediction not found: " + p.string() + " (run refine first)");
        preds.push_back({entries[i].id, load_mask(p)});
        refs.push_back({entries[i].id, load_mask(entries[i].mask_path)});
    }
    EvalSummary s = evaluate_dataset(preds, refs);
    std::filesystem::create_directories(wd.evals());
    write_eval_csv(wd.report(rc.eval_pred), s);
    return s;
}

}  // namespace voldiff
