#pragma once

#include <functional>

#include "voldiff/unet3d.hpp"

namespace voldiff {

/// Linear beta schedule with the derived per-step quantities. Accessors are
/// 1-based in t to match the usual chain indexing; array slot [t-1] holds
/// step t. All derived values are computed and stored in double.
struct NoiseSchedule {
    int64_t T = 0;
    std::vector<double> betas, alphas, alpha_bars, sigmas;

    void check_t(int64_t t) const {
        if (t < 1 || t > T) throw ShapeError("NoiseSchedule: t=" + std::to_string(t) +
                                             " outside [1," + std::to_string(T) + "]");
    }
    double beta(int64_t t) const { check_t(t); return betas[static_cast<size_t>(t - 1)]; }
    double alpha(int64_t t) const { check_t(t); return alphas[static_cast<size_t>(t - 1)]; }
    double alpha_bar(int64_t t) const { check_t(t); return alpha_bars[static_cast<size_t>(t - 1)]; }
    double sigma(int64_t t) const { check_t(t); return sigmas[static_cast<size_t>(t - 1)]; }
};

/// beta_t linear from beta_start (t=1) to beta_end (t=T); alpha_t = 1-beta_t,
/// alpha_bar_t their running product, sigma_t = sqrt(beta_t) (fixed variance rule).
NoiseSchedule linear_schedule(int64_t T, double beta_start, double beta_end);

enum class DiffusionLossMode {
    EpsMse,        // plain DDPM objective, mse(eps_hat, eps)
    BceDiceX0,     // BCE + lambda*Dice on the implied x0 reconstruction mapped to [0,1]
    LiteralSquash  // BCE + lambda*Dice on sigmoid(eps_hat) vs sigmoid(eps)
};

struct DiffusionConfig {
    int64_t T = 200;
    double beta_start = 1e-4;
    // Reverse sampling amplifies every uncorrected prediction error by
    // prod 1/sqrt(alpha_t) = 1/sqrt(alpha_bar_T); 0.02 keeps that factor
    // below 3 at T=200, which small denoisers need to stay stable.
    double beta_end = 0.02;
    DiffusionLossMode mode = DiffusionLossMode::BceDiceX0;
    double lambda = 1.0;       // Dice weight inside the combined loss
    double dice_smooth = 1.0;

    void validate() const {
        if (T < 1) throw ConfigError("DiffusionConfig: T must be >= 1");
        if (!(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0))
            throw ConfigError("DiffusionConfig: need 0 < beta_start <= beta_end < 1");
        if (lambda < 0.0) throw ConfigError("DiffusionConfig: lambda must be >= 0");
    }
};

/// Closed-form forward jump: x_t = sqrt(ab_t) x0 + sqrt(1-ab_t) eps.
template <class S>
TensorT<S> q_sample(const TensorT<S>& x0, int64_t t, const TensorT<S>& eps, const NoiseSchedule& ns) {
    if (!same_shape(x0, eps)) throw ShapeError("q_sample: x0/eps shape mismatch");
    const double ab = ns.alpha_bar(t);
    const S a = static_cast<S>(std::sqrt(ab));
    const S b = static_cast<S>(std::sqrt(1.0 - ab));
    TensorT<S> out = x0;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
    return out;
}

/// Inversion of q_sample given a noise estimate: (x_t - sqrt(1-ab) eps_hat) / sqrt(ab).
template <class S>
TensorT<S> x0_from_eps(const TensorT<S>& x_t, int64_t t, const TensorT<S>& eps_hat,
                       const NoiseSchedule& ns) {
    if (!same_shape(x_t, eps_hat)) throw ShapeError("x0_from_eps: shape mismatch");
    const double ab = ns.alpha_bar(t);
    const S inv_a = static_cast<S>(1.0 / std::sqrt(ab));
    const S b = static_cast<S>(std::sqrt(1.0 - ab));
    TensorT<S> out = x_t;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = (x_t.data[i] - b * eps_hat.data[i]) * inv_a;
    return out;
}

/// Stacks the clean 4-channel conditioning on top of the 1-channel noisy
/// error field: channels 0-3 = c byte-exact, channel 4 = x.
TensorF make_conditioned_input(const Volume& c, const TensorF& x);

/// Noise estimator interface for the reverse chain; the test suites substitute
/// closed-form oracles for the trained net here.
using NoisePredictor = std::function<TensorF(const TensorF& x_ct, int64_t t)>;

/// Adapts a trained denoiser (in=5, out=1, time embedding on). Captures both
/// arguments by reference; keep them alive while sampling.
NoisePredictor unet_noise_predictor(const ParamSetT<float>& params, const UNet3DConfig& cfg);

/// One reverse step on the error channel:
///   x_{t-1} = (x_t - (1-a_t)/sqrt(1-ab_t) * eps_hat) / sqrt(a_t) + sigma_t z,
/// with z = 0 at t = 1 and sigma forced to 0 when deterministic is set.
/// The conditioning channels are re-attached clean on every call.
TensorF p_sample_step(const TensorF& x_t, const Volume& c, int64_t t, const NoisePredictor& eps_model,
                      const NoiseSchedule& ns, Rng& rng, bool deterministic = false);

/// Full reverse chain from pure Gaussian noise at t = T down to t = 1;
/// returns the final continuous error-channel field [1,1,D,H,W].
TensorF sample_error_map(const Volume& c, const NoisePredictor& eps_model, const NoiseSchedule& ns,
                         Rng& rng, bool deterministic = false);

/// Training loss over the selected mode; fills d_eps_hat when requested.
/// The true x0 inside the x0 mode is recovered from (x_t, t, eps) exactly.
double concatdiff_loss(const TensorF& eps, const TensorF& eps_hat, const TensorF& x_t, int64_t t,
                       const NoiseSchedule& ns, const DiffusionConfig& cfg,
                       TensorF* d_eps_hat = nullptr);

/// One training subject for the correction stage: conditioning image, ground
/// truth, and the initial mask whose errors the denoiser learns to predict.
struct RefineRecord {
    std::string id;
    Volume image;
    SegMask gt;
    SegMask initial;

    void validate() const {
        image.validate();
        gt.validate();
        initial.validate();
        if (!gt.same_grid(image) || !initial.same_grid(image))
            throw ShapeError("RefineRecord '" + id + "': grid mismatch");
    }
};

struct DiffTrainConfig {
    int64_t steps = 3000;
    double lr = 3e-4;
    double weight_decay = 1e-5;
    uint64_t seed = 1;
};

struct DiffLogRow {
    int64_t step;
    int64_t t;
    double loss;
};

/// DDPM training over the error maps of a record set: per step draw a record,
/// a timestep and a noise field, noise the encoded error map, run the
/// denoiser on the 5-channel conditioned input, and Adam-update on the
/// configured loss. Deterministic for a fixed seed.
ParamSetT<float> train_diffusion(const std::vector<RefineRecord>& records,
                                 const UNet3DConfig& denoiser_cfg, const DiffusionConfig& dcfg,
                                 const DiffTrainConfig& tcfg, std::vector<DiffLogRow>* log = nullptr);

void write_diff_log_csv(const std::filesystem::path& path, const std::vector<DiffLogRow>& rows);

}  // namespace voldiff
