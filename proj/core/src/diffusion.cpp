#include "voldiff/diffusion.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>

#include "voldiff/errormap.hpp"
#include "voldiff/losses.hpp"

namespace voldiff {

NoiseSchedule linear_schedule(int64_t T, double beta_start, double beta_end) {
    if (T < 1) throw ConfigError("linear_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("linear_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule ns;
    ns.T = T;
    ns.betas.resize(static_cast<size_t>(T));
    ns.alphas.resize(static_cast<size_t>(T));
    ns.alpha_bars.resize(static_cast<size_t>(T));
    ns.sigmas.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int64_t i = 0; i < T; ++i) {
        const double f = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
        const double b = beta_start + (beta_end - beta_start) * f;
        const auto k = static_cast<size_t>(i);
        ns.betas[k] = b;
        ns.alphas[k] = 1.0 - b;
        prod *= ns.alphas[k];
        ns.alpha_bars[k] = prod;
        ns.sigmas[k] = std::sqrt(b);
    }
    return ns;
}

TensorF make_conditioned_input(const Volume& c, const TensorF& x) {
    c.validate();
    if (c.channels != 4)
        throw ShapeError("make_conditioned_input: conditioning stack must have 4 channels, got " +
                         std::to_string(c.channels));
    if (x.ndim() != 5 || x.dim(0) != 1 || x.dim(1) != 1)
        throw ShapeError("make_conditioned_input: x must be a [1,1,D,H,W] tensor");
    if (x.dim(2) != c.depth || x.dim(3) != c.height || x.dim(4) != c.width)
        throw ShapeError("make_conditioned_input: x grid does not match the conditioning image");
    return concat_channels(volume_to_tensor(c), x);
}

NoisePredictor unet_noise_predictor(const ParamSetT<float>& params, const UNet3DConfig& cfg) {
    cfg.validate();
    if (cfg.in_channels != 5 || cfg.out_channels != 1 || !cfg.use_time_embedding)
        throw ConfigError(
            "unet_noise_predictor: denoiser must take 5 input channels, emit 1, and use the time "
            "embedding");
    const ParamSetT<float>* p = &params;
    return [p, cfg](const TensorF& x_ct, int64_t t) { return unet_forward(*p, cfg, x_ct, t); };
}

TensorF p_sample_step(const TensorF& x_t, const Volume& c, int64_t t, const NoisePredictor& eps_model,
                      const NoiseSchedule& ns, Rng& rng, bool deterministic) {
    ns.check_t(t);
    if (x_t.ndim() != 5 || x_t.dim(0) != 1 || x_t.dim(1) != 1)
        throw ShapeError("p_sample_step: x_t must be a [1,1,D,H,W] tensor");
    TensorF x_ct = make_conditioned_input(c, x_t);
    TensorF eps_hat = eps_model(x_ct, t);
    if (!same_shape(eps_hat, x_t)) throw ShapeError("p_sample_step: predictor output shape mismatch");
    const double a = ns.alpha(t);
    const double ab = ns.alpha_bar(t);
    const auto inv_sqrt_a = static_cast<float>(1.0 / std::sqrt(a));
    const auto coef = static_cast<float>((1.0 - a) / std::sqrt(1.0 - ab));
    const float sig = (t == 1 || deterministic) ? 0.0f : static_cast<float>(ns.sigma(t));
    TensorF out(x_t.shape);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = inv_sqrt_a * (x_t.data[i] - coef * eps_hat.data[i]);
    if (sig > 0.0f)
        for (auto& v : out.data) v += sig * static_cast<float>(rng.gaussian());
    return out;
}

TensorF sample_error_map(const Volume& c, const NoisePredictor& eps_model, const NoiseSchedule& ns,
                         Rng& rng, bool deterministic) {
    c.validate();
    TensorF x({1, 1, c.depth, c.height, c.width});
    for (auto& v : x.data) v = static_cast<float>(rng.gaussian());
    for (int64_t t = ns.T; t >= 1; --t) x = p_sample_step(x, c, t, eps_model, ns, rng, deterministic);
    return x;
}

namespace {

// Combined BCE + lambda*Dice on already-mapped [0,1] fields; writes the
// gradient with respect to pred into d_pred when given.
double bce_dice(const TensorF& pred, const TensorF& target, const DiffusionConfig& cfg,
                TensorF* d_pred) {
    TensorF db, dd;
    const double b = bce(pred, target, d_pred ? &db : nullptr);
    const double d = dice_loss(pred, target, static_cast<float>(cfg.dice_smooth),
                               d_pred ? &dd : nullptr);
    if (d_pred) {
        *d_pred = db;
        const auto lam = static_cast<float>(cfg.lambda);
        for (size_t i = 0; i < d_pred->data.size(); ++i) d_pred->data[i] += lam * dd.data[i];
    }
    return b + cfg.lambda * d;
}

}  // namespace

double concatdiff_loss(const TensorF& eps, const TensorF& eps_hat, const TensorF& x_t, int64_t t,
                       const NoiseSchedule& ns, const DiffusionConfig& cfg, TensorF* d_eps_hat) {
    if (!same_shape(eps, eps_hat) || !same_shape(eps, x_t))
        throw ShapeError("concatdiff_loss: eps/eps_hat/x_t shape mismatch");
    ns.check_t(t);

    switch (cfg.mode) {
        case DiffusionLossMode::EpsMse:
            return mse(eps_hat, eps, d_eps_hat);

        case DiffusionLossMode::BceDiceX0: {
            const double ab = ns.alpha_bar(t);
            const auto sab = static_cast<float>(std::sqrt(ab));
            const auto sob = static_cast<float>(std::sqrt(1.0 - ab));
            TensorF x0_hat = x0_from_eps(x_t, t, eps_hat, ns);
            TensorF x0_true = x0_from_eps(x_t, t, eps, ns);
            // Map [-1,1] reconstructions to probabilities; clamping makes the
            // implemented function flat outside [0,1], hence the pass mask.
            TensorF pred(x0_hat.shape), target(x0_true.shape);
            std::vector<char> inside(pred.data.size());
            for (size_t i = 0; i < pred.data.size(); ++i) {
                const float pr = 0.5f * (x0_hat.data[i] + 1.0f);
                inside[i] = pr > 0.0f && pr < 1.0f;
                pred.data[i] = std::min(1.0f, std::max(0.0f, pr));
                const float tr = 0.5f * (x0_true.data[i] + 1.0f);
                target.data[i] = std::min(1.0f, std::max(0.0f, tr));
            }
            TensorF dp;
            const double loss = bce_dice(pred, target, cfg, d_eps_hat ? &dp : nullptr);
            if (d_eps_hat) {
                // chain: pred <- 0.5*(x0_hat+1), x0_hat <- -sob/sab * eps_hat
                const float scale = 0.5f * (-sob / sab);
                *d_eps_hat = TensorF(eps_hat.shape);
                for (size_t i = 0; i < dp.data.size(); ++i)
                    d_eps_hat->data[i] = inside[i] ? dp.data[i] * scale : 0.0f;
            }
            return loss;
        }

        case DiffusionLossMode::LiteralSquash: {
            TensorF pred(eps_hat.shape), target(eps.shape);
            for (size_t i = 0; i < pred.data.size(); ++i) {
                pred.data[i] = 1.0f / (1.0f + std::exp(-eps_hat.data[i]));
                target.data[i] = 1.0f / (1.0f + std::exp(-eps.data[i]));
            }
            TensorF dp;
            const double loss = bce_dice(pred, target, cfg, d_eps_hat ? &dp : nullptr);
            if (d_eps_hat) {
                *d_eps_hat = TensorF(eps_hat.shape);
                for (size_t i = 0; i < dp.data.size(); ++i) {
                    const float y = pred.data[i];
                    d_eps_hat->data[i] = dp.data[i] * y * (1.0f - y);
                }
            }
            return loss;
        }
    }
    throw ConfigError("concatdiff_loss: unknown loss mode");
}

ParamSetT<float> train_diffusion(const std::vector<RefineRecord>& records,
                                 const UNet3DConfig& denoiser_cfg, const DiffusionConfig& dcfg,
                                 const DiffTrainConfig& tcfg, std::vector<DiffLogRow>* log) {
    if (records.empty()) throw ConfigError("train_diffusion: empty record set");
    denoiser_cfg.validate();
    dcfg.validate();
    if (denoiser_cfg.in_channels != 5 || denoiser_cfg.out_channels != 1 ||
        !denoiser_cfg.use_time_embedding)
        throw ConfigError(
            "train_diffusion: denoiser must take 5 input channels, emit 1, and use the time embedding");
    if (tcfg.steps < 1) throw ConfigError("train_diffusion: steps must be >= 1");
    for (const auto& r : records) r.validate();

    const NoiseSchedule ns = linear_schedule(dcfg.T, dcfg.beta_start, dcfg.beta_end);
    auto params = build_unet<float>(denoiser_cfg, derive_seed(tcfg.seed, "diff-init"));
    AdamConfig acfg;
    acfg.lr = tcfg.lr;
    acfg.weight_decay = tcfg.weight_decay;
    AdamStateT<float> opt;
    opt.init(params, acfg);

    // Targets never change during training, so encode each record's error map once.
    std::vector<TensorF> x0s;
    x0s.reserve(records.size());
    for (const auto& r : records) x0s.push_back(encode_error(compute_error_map(r.initial, r.gt)));

    Rng pick(derive_seed(tcfg.seed, "diff-order"));
    Rng noise(derive_seed(tcfg.seed, "diff-noise"));
    if (log) log->clear();

    for (int64_t step = 1; step <= tcfg.steps; ++step) {
        const auto ri = static_cast<size_t>(
            pick.uniform_int(0, static_cast<int64_t>(records.size()) - 1));
        const int64_t t = pick.uniform_int(1, dcfg.T);
        const TensorF& x0 = x0s[ri];
        TensorF eps(x0.shape);
        for (auto& v : eps.data) v = static_cast<float>(noise.gaussian());
        TensorF x_t = q_sample(x0, t, eps, ns);
        TensorF x_ct = make_conditioned_input(records[ri].image, x_t);

        UNetTape<float> tape;
        TensorF eps_hat = unet_forward(params, denoiser_cfg, x_ct, t, &tape);
        TensorF d_eps_hat;
        const double loss = concatdiff_loss(eps, eps_hat, x_t, t, ns, dcfg, &d_eps_hat);
        if (!std::isfinite(loss))
            throw NumericError("train_diffusion: non-finite loss at step " + std::to_string(step));

        params.zero_grads();
        unet_backward(params, denoiser_cfg, tape, d_eps_hat);
        adam_step(params, opt);
        if (log) log->push_back({step, t, loss});
    }
    return params;
}

void write_diff_log_csv(const std::filesystem::path& path, const std::vector<DiffLogRow>& rows) {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw IoError(IoError::Kind::OpenFailed, "cannot open log for writing: " + path.string());
    std::fputs("step,t,loss\n", f);
    for (const auto& r : rows)
        std::fprintf(f, "%" PRId64 ",%" PRId64 ",%.10g\n", r.step, r.t, r.loss);
    if (std::fclose(f) != 0)
        throw IoError(IoError::Kind::WriteFailed, "failed to finish writing: " + path.string());
}

}  // namespace voldiff
