#include "voldiff/unet3d.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "voldiff/losses.hpp"

namespace voldiff {

SegMask predict_initial_mask(const ParamSetT<float>& params, const UNet3DConfig& cfg,
                             const Volume& image) {
    if (image.channels != cfg.in_channels)
        throw ShapeError("predict_initial_mask: image channels != network input channels");
    if (cfg.out_channels != 2)
        throw ShapeError("predict_initial_mask: needs the 2-channel softmax head");
    TensorF logits = unet_forward(params, cfg, volume_to_tensor(image));
    TensorF probs = softmax_channel(logits);
    SegMask m(image.depth, image.height, image.width, 0.0f, image.spacing_mm);
    const int64_t vox = m.numel();
    const float* bg = probs.data.data();
    const float* fg = probs.data.data() + vox;
    // strict > sends the tie to background
    for (int64_t i = 0; i < vox; ++i) m.data[static_cast<size_t>(i)] = fg[i] > bg[i] ? 1.0f : 0.0f;
    return m;
}

ParamSetT<float> train_unet(const std::vector<DatasetRecord>& train, const UNet3DConfig& cfg,
                            const UnetTrainConfig& tcfg, std::vector<TrainLogRow>* log) {
    if (train.empty()) throw ConfigError("train_unet: empty dataset");
    if (cfg.out_channels != 2) throw ConfigError("train_unet: segmentation head must have 2 channels");

    ParamSetT<float> params = build_unet<float>(cfg, derive_seed(tcfg.seed, "unet-init"));
    AdamStateT<float> opt;
    opt.init(params, AdamConfig{.lr = tcfg.lr});
    Rng order(derive_seed(tcfg.seed, "unet-order"));

    UNetTape<float> tape;
    for (int64_t step = 1; step <= tcfg.steps; ++step) {
        const DatasetRecord& rec = train[static_cast<size_t>(
            order.uniform_int(0, static_cast<int64_t>(train.size()) - 1))];
        TensorF target = mask_to_tensor(rec.mask);
        TensorF logits = unet_forward(params, cfg, volume_to_tensor(rec.image), -1, &tape);
        TensorF probs = softmax_channel(logits);
        TensorF p_fg = slice_channels(probs, 1, 2);

        TensorF d_bce, d_dice;
        const float l_bce = bce(p_fg, target, &d_bce);
        const float l_dice = dice_loss(p_fg, target, static_cast<float>(tcfg.dice_smooth), &d_dice);
        const double loss = static_cast<double>(l_bce) + static_cast<double>(l_dice);
        if (!std::isfinite(loss))
            throw NumericError("train_unet: non-finite loss at step " + std::to_string(step));

        for (size_t i = 0; i < d_bce.data.size(); ++i) d_bce.data[i] += d_dice.data[i];
        TensorF d_logits = softmax_channel_backward(probs, slice_channels_backward(d_bce, 2, 1));
        params.zero_grads();
        unet_backward(params, cfg, tape, d_logits);
        adam_step(params, opt);

        if (log) {
            double inter = 0, fsum = 0, tsum = 0;
            for (size_t i = 0; i < p_fg.data.size(); ++i) {
                const bool f = p_fg.data[i] > 0.5f;
                const bool t = target.data[i] != 0.0f;
                inter += f && t;
                fsum += f;
                tsum += t;
            }
            const double dice = fsum + tsum > 0 ? 2.0 * inter / (fsum + tsum) : 1.0;
            log->push_back({step, loss, dice});
        }
    }
    return params;
}

void write_train_log_csv(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError(IoError::Kind::OpenFailed, "write_train_log_csv: cannot open " + path.string());
    f << "step,loss,dice\n";
    char buf[128];
    for (const TrainLogRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%" PRId64 ",%.10g,%.10g\n", r.step, r.loss, r.dice);
        f << buf;
    }
    if (!f) throw IoError(IoError::Kind::WriteFailed, "write_train_log_csv: write failed");
}

}  // namespace voldiff
