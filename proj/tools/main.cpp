// Pipeline driver. Exit codes: 0 ok, 2 config error, 3 missing artifact,
// 4 shape error, 5 numeric error, 6 file format error, 1 anything else.

#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "voldiff/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitother = 1;
constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitShape = 4;
constexpr int kExitNumeric = 5;
constexpr int kExitIo = 6;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voldiff: diffusion-refined volumetric segmentation pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir, pred;
    long long records = 0;
    unsigned long long seed = 0;
    bool dump_pgm = false;

    auto add_common = [&](CLI::App* s) {
        s->add_option("--config", config_path, "run config file")->required();
        s->add_option("--records", records, "override [data] records");
        s->add_option("--out", out_dir, "override the working directory");
        s->add_option("--seed", seed, "override the run seed");
    };
    add_common(app.add_subcommand("synth", "generate the phantom dataset"));
    add_common(app.add_subcommand("preprocess", "clip/trim/resize the raw records"));
    add_common(app.add_subcommand("train-unet", "train the segmentation net"));
    add_common(app.add_subcommand("train-diff", "train the error-map denoiser"));
    CLI::App* c_refine = app.add_subcommand("refine", "sample error maps, correct validation masks");
    add_common(c_refine);
    c_refine->add_flag("--dump-pgm", dump_pgm, "write mid-slice PGM images");
    CLI::App* c_eval = app.add_subcommand("eval", "score predictions against ground truth");
    add_common(c_eval);
    c_eval->add_option("--pred", pred, "prediction kind to score: mi or mcorr");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    try {
        voldiff::StageOverrides ov;
        if (sub->count("--records")) ov.records = records;
        if (sub->count("--out")) ov.out = out_dir;
        if (sub->count("--seed")) ov.seed = seed;
        if (dump_pgm) ov.dump_pgm = true;
        if (name == "eval" && sub->count("--pred")) ov.eval_pred = pred;
        const voldiff::RunConfig rc =
            voldiff::apply_overrides(voldiff::load_run_config(config_path), ov);

        if (name == "synth") {
            voldiff::run_synth(rc);
            std::printf("synth: %lld records -> %s\n", static_cast<long long>(rc.records),
                        rc.workdir.string().c_str());
        } else if (name == "preprocess") {
            voldiff::run_preprocess(rc);
            std::printf("preprocess: done -> %s\n", rc.workdir.string().c_str());
        } else if (name == "train-unet") {
            voldiff::run_train_unet(rc);
            std::printf("train-unet: %lld steps -> %s\n",
                        static_cast<long long>(rc.unet_train.steps), rc.workdir.string().c_str());
        } else if (name == "train-diff") {
            voldiff::run_train_diff(rc);
            std::printf("train-diff: %lld steps -> %s\n",
                        static_cast<long long>(rc.diff_train.steps), rc.workdir.string().c_str());
        } else if (name == "refine") {
            voldiff::run_refine(rc);
            std::printf("refine: done -> %s\n", rc.workdir.string().c_str());
        } else {
            const voldiff::EvalSummary s = voldiff::run_eval(rc);
            if (s.mean_hd95_mm)
                std::printf("eval[%s]: mean dice %.4f, mean hd95 %.3f mm (%lld undefined)\n",
                            rc.eval_pred.c_str(), s.mean_dice, *s.mean_hd95_mm,
                            static_cast<long long>(s.hd95_undefined));
            else
                std::printf("eval[%s]: mean dice %.4f, hd95 undefined for all records\n",
                            rc.eval_pred.c_str(), s.mean_dice);
        }
        return kExitOk;
    } catch (const voldiff::ConfigError& e) {
        std::fprintf(stderr, "%s: config error: %s\n", name.c_str(), e.what());
        return kExitConfig;
    } catch (const voldiff::MissingArtifactError& e) {
        std::fprintf(stderr, "%s: missing artifact: %s\n", name.c_str(), e.what());
        return kExitMissing;
    } catch (const voldiff::ShapeError& e) {
        std::fprintf(stderr, "%s: shape error: %s\n", name.c_str(), e.what());
        return kExitShape;
    } catch (const voldiff::NumericError& e) {
        std::fprintf(stderr, "%s: numeric error: %s\n", name.c_str(), e.what());
        return kExitNumeric;
    } catch (const voldiff::IoError& e) {
        std::fprintf(stderr, "%s: file error: %s\n", name.c_str(), e.what());
        return kExitIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s: error: %s\n", name.c_str(), e.what());
        return kExitother;
    }
}
