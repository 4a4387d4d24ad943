#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "voldiff/gradcheck.hpp"
#include "voldiff/phantom.hpp"
#include "voldiff/unet3d.hpp"

using namespace voldiff;

namespace {

TensorD random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    TensorD t(std::move(shape));
    for (auto& v : t.data) v = scale * (2.0 * rng.uniform() - 1.0);
    return t;
}

double project(const TensorD& a, const TensorD& b) {
    REQUIRE(a.data.size() == b.data.size());
    double s = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

PhantomConfig small_phantom() {
    PhantomConfig pc;
    pc.depth = 16;
    pc.height = 32;
    pc.width = 32;
    pc.spacing_mm = {2.0, 1.0, 1.0};
    pc.num_lesions_min = 1;
    pc.num_lesions_max = 2;
    pc.lesion_radius_mm_min = 4.0;
    pc.lesion_radius_mm_max = 7.0;
    pc.noise_sigma = 0.02;
    pc.seed = 42;
    return pc;
}

}  // namespace

TEST_CASE("build_unet lays out the expected parameters deterministically") {
    UNet3DConfig cfg;  // 4 -> 2, base 8, levels 3
    const auto p = build_unet<float>(cfg, 7);
    CHECK(p.at("enc0.conv1.w").shape == std::vector<int64_t>{8, 4, 3, 3, 3});
    CHECK(p.at("enc2.conv2.w").shape == std::vector<int64_t>{32, 32, 3, 3, 3});
    CHECK(p.at("up1.w").shape == std::vector<int64_t>{32, 16, 2, 2, 2});
    CHECK(p.at("dec1.conv1.w").shape == std::vector<int64_t>{16, 32, 3, 3, 3});
    CHECK(p.at("head.w").shape == std::vector<int64_t>{2, 8, 1, 1, 1});
    CHECK(p.at("head.b").shape == std::vector<int64_t>{2});
    CHECK_FALSE(p.has("temb.fc1.w"));
    for (const auto& t : p.tensors) CHECK(t.grad.size() == t.data.size());

    const auto q = build_unet<float>(cfg, 7);
    CHECK(q.names == p.names);
    for (size_t i = 0; i < p.size(); ++i) CHECK(q.tensors[i].data == p.tensors[i].data);
    const auto other = build_unet<float>(cfg, 8);
    CHECK(other.tensors[0].data != p.tensors[0].data);

    UNet3DConfig dcfg;
    dcfg.in_channels = 5;
    dcfg.out_channels = 1;
    dcfg.use_time_embedding = true;
    dcfg.time_embed_dim = 32;
    const auto d = build_unet<float>(dcfg, 7);
    CHECK(d.at("temb.fc1.w").shape == std::vector<int64_t>{32, 32});
    CHECK(d.at("enc0.tproj.w").shape == std::vector<int64_t>{8, 32});
    CHECK(d.at("dec0.tproj.b").shape == std::vector<int64_t>{8});

    UNet3DConfig bad;
    bad.levels = 0;
    CHECK_THROWS_AS(build_unet<float>(bad, 1), ConfigError);
    bad = UNet3DConfig{};
    bad.use_time_embedding = true;
    bad.time_embed_dim = 5;
    CHECK_THROWS_AS(build_unet<float>(bad, 1), ConfigError);
}

TEST_CASE("unet_forward keeps spatial dims, padding odd inputs internally") {
    UNet3DConfig cfg;
    cfg.base_channels = 2;
    const auto p = build_unet<float>(cfg, 3);

    TensorF x({1, 4, 8, 8, 8});
    Rng rng(5);
    for (auto& v : x.data) v = static_cast<float>(rng.uniform());
    CHECK(unet_forward(p, cfg, x).shape == std::vector<int64_t>{1, 2, 8, 8, 8});

    // 5x6x7 is not a multiple of 2^(levels-1) = 4 on any axis
    TensorF odd({1, 4, 5, 6, 7});
    for (auto& v : odd.data) v = static_cast<float>(rng.uniform());
    CHECK(unet_forward(p, cfg, odd).shape == std::vector<int64_t>{1, 2, 5, 6, 7});

    TensorF wrong({1, 3, 8, 8, 8});
    CHECK_THROWS_AS(unet_forward(p, cfg, wrong), ShapeError);
    // timestep and embedding config must agree, in both directions
    CHECK_THROWS_AS(unet_forward(p, cfg, x, 5), ConfigError);
    UNet3DConfig tcfg = cfg;
    tcfg.use_time_embedding = true;
    tcfg.time_embed_dim = 8;
    const auto tp = build_unet<float>(tcfg, 3);
    CHECK_THROWS_AS(unet_forward(tp, tcfg, x), ConfigError);
}

TEST_CASE("timestep embedding actually changes the output") {
    UNet3DConfig cfg;
    cfg.in_channels = 5;
    cfg.out_channels = 1;
    cfg.base_channels = 2;
    cfg.levels = 2;
    cfg.use_time_embedding = true;
    cfg.time_embed_dim = 8;
    const auto p = build_unet<float>(cfg, 11);
    TensorF x({1, 5, 4, 4, 4});
    Rng rng(2);
    for (auto& v : x.data) v = static_cast<float>(rng.uniform());
    const TensorF y1 = unet_forward(p, cfg, x, 1);
    const TensorF y2 = unet_forward(p, cfg, x, 150);
    double diff = 0;
    for (size_t i = 0; i < y1.data.size(); ++i)
        diff = std::max(diff, std::abs(static_cast<double>(y1.data[i]) - y2.data[i]));
    CHECK(diff > 1e-4);
    // same timestep is bit-stable
    const TensorF y1b = unet_forward(p, cfg, x, 1);
    CHECK(y1b.data == y1.data);
}

TEST_CASE("full network gradients agree with finite differences in double") {
    Rng rng(19);
    UNet3DConfig cfg;
    cfg.in_channels = 2;
    cfg.out_channels = 2;
    cfg.base_channels = 2;
    cfg.levels = 2;
    ParamSetT<double> params = build_unet<double>(cfg, 23);
    const TensorD x = random_tensor({1, 2, 4, 4, 4}, rng);
    const TensorD logits = unet_forward(params, cfg, x);
    const TensorD r = random_tensor(logits.shape, rng);

    UNetTape<double> tape;
    unet_forward(params, cfg, x, -1, &tape);
    params.zero_grads();
    const TensorD dx = unet_backward(params, cfg, tape, r);

    auto fx = [&](const std::vector<double>& v) {
        TensorD xx = x;
        xx.data = v;
        return project(unet_forward(params, cfg, xx), r);
    };
    CHECK(grad_check(fx, x.data, dx.data, 1e-6, 120, &rng).pass(1e-6));

    for (const std::string name :
         {"enc0.conv1.w", "enc1.conv2.b", "up0.w", "dec0.conv1.w", "head.w", "head.b"}) {
        auto fp = [&](const std::vector<double>& v) {
            ParamSetT<double> ps = params;
            ps.at(name).data = v;
            return project(unet_forward(ps, cfg, x), r);
        };
        const auto rep = grad_check(fp, params.at(name).data, params.at(name).grad, 1e-6, 80, &rng);
        INFO("param ", name, " worst rel err ", rep.max_rel_err);
        CHECK(rep.pass(1e-6));
    }
}

TEST_CASE("time-conditioned network gradients agree with finite differences") {
    Rng rng(37);
    UNet3DConfig cfg;
    cfg.in_channels = 5;
    cfg.out_channels = 1;
    cfg.base_channels = 2;
    cfg.levels = 2;
    cfg.use_time_embedding = true;
    cfg.time_embed_dim = 8;
    ParamSetT<double> params = build_unet<double>(cfg, 29);
    const TensorD x = random_tensor({1, 5, 4, 4, 4}, rng);
    const int64_t t = 7;
    const TensorD logits = unet_forward(params, cfg, x, t);
    const TensorD r = random_tensor(logits.shape, rng);

    UNetTape<double> tape;
    unet_forward(params, cfg, x, t, &tape);
    params.zero_grads();
    const TensorD dx = unet_backward(params, cfg, tape, r);

    auto fx = [&](const std::vector<double>& v) {
        TensorD xx = x;
        xx.data = v;
        return project(unet_forward(params, cfg, xx, t), r);
    };
    CHECK(grad_check(fx, x.data, dx.data, 1e-6, 100, &rng).pass(1e-6));

    for (const std::string name :
         {"temb.fc1.w", "temb.fc2.b", "enc0.tproj.w", "dec0.tproj.w", "enc1.conv1.w"}) {
        auto fp = [&](const std::vector<double>& v) {
            ParamSetT<double> ps = params;
            ps.at(name).data = v;
            return project(unet_forward(ps, cfg, x, t), r);
        };
        const auto rep = grad_check(fp, params.at(name).data, params.at(name).grad, 1e-6, 80, &rng);
        INFO("param ", name, " worst rel err ", rep.max_rel_err);
        CHECK(rep.pass(1e-6));
    }
}

TEST_CASE("predict_initial_mask sends softmax ties to background") {
    UNet3DConfig cfg;
    cfg.base_channels = 2;
    auto p = build_unet<float>(cfg, 5);
    // zero logits everywhere: fg prob == bg prob == 0.5 exactly
    std::fill(p.at("head.w").data.begin(), p.at("head.w").data.end(), 0.0f);
    std::fill(p.at("head.b").data.begin(), p.at("head.b").data.end(), 0.0f);
    Rng rng(9);
    const Volume img = testutil::random_volume(4, 8, 8, 8, rng);
    const SegMask m = predict_initial_mask(p, cfg, img);
    CHECK(m.foreground_count() == 0);
    CHECK(m.depth == 8);
}

TEST_CASE("training is deterministic and lr=0 freezes the parameters") {
    PhantomConfig pc = small_phantom();
    const DatasetRecord rec = synth_phantom(pc, "r0");

    UNet3DConfig cfg;
    cfg.base_channels = 2;
    cfg.levels = 2;
    UnetTrainConfig t0;
    t0.steps = 0;
    t0.seed = 77;
    const auto init = train_unet({rec}, cfg, t0);

    UnetTrainConfig tz = t0;
    tz.steps = 5;
    tz.lr = 0.0;
    const auto frozen = train_unet({rec}, cfg, tz);
    REQUIRE(frozen.size() == init.size());
    for (size_t i = 0; i < init.size(); ++i) CHECK(frozen.tensors[i].data == init.tensors[i].data);

    UnetTrainConfig tr = t0;
    tr.steps = 8;
    tr.lr = 1e-3;
    std::vector<TrainLogRow> log_a, log_b;
    const auto run_a = train_unet({rec}, cfg, tr, &log_a);
    const auto run_b = train_unet({rec}, cfg, tr, &log_b);
    for (size_t i = 0; i < run_a.size(); ++i) CHECK(run_a.tensors[i].data == run_b.tensors[i].data);
    REQUIRE(log_a.size() == 8);
    for (size_t i = 0; i < 8; ++i) {
        CHECK(log_a[i].loss == log_b[i].loss);
        CHECK(log_a[i].step == static_cast<int64_t>(i + 1));
    }
    // moved away from init
    CHECK(run_a.at("head.w").data != init.at("head.w").data);

    CHECK_THROWS_AS(train_unet({}, cfg, tr), ConfigError);
    UNet3DConfig one_ch = cfg;
    one_ch.out_channels = 1;
    CHECK_THROWS_AS(train_unet({rec}, one_ch, tr), ConfigError);
}

TEST_CASE("a small net overfits one record") {
    PhantomConfig pc = small_phantom();
    pc.seed = 404;
    const DatasetRecord rec = synth_phantom(pc, "r0");
    REQUIRE(rec.mask.foreground_count() > 0);

    UNet3DConfig cfg;
    cfg.base_channels = 4;
    cfg.levels = 2;
    UnetTrainConfig tcfg;
    tcfg.steps = 200;
    tcfg.lr = 2e-3;
    tcfg.seed = 1;
    std::vector<TrainLogRow> log;
    const auto params = train_unet({rec}, cfg, tcfg, &log);
    REQUIRE(log.size() == 200);
    CHECK(log.back().loss < log.front().loss);
    CHECK(log.back().dice >= 0.95);

    // the thresholded prediction agrees with the target it memorized
    const SegMask pred = predict_initial_mask(params, cfg, rec.image);
    double inter = 0, a = 0, b = 0;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        inter += pred.data[i] != 0 && rec.mask.data[i] != 0;
        a += pred.data[i] != 0;
        b += rec.mask.data[i] != 0;
    }
    CHECK(2.0 * inter / (a + b) >= 0.95);
}

TEST_CASE("train log csv format") {
    const auto dir = testutil::scratch_dir("unet_log");
    std::vector<TrainLogRow> rows = {{1, 1.25, 0.5}, {2, 0.75, 0.625}};
    const auto path = dir / "log.csv";
    write_train_log_csv(path, rows);
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    CHECK(line == "step,loss,dice");
    std::getline(f, line);
    CHECK(line == "1,1.25,0.5");
    std::getline(f, line);
    CHECK(line == "2,0.75,0.625");
    CHECK_FALSE(std::getline(f, line));
}

TEST_CASE("volume and mask tensor wrappers keep layout") {
    Rng rng(3);
    const Volume v = testutil::random_volume(3, 2, 4, 5, rng);
    const TensorF t = volume_to_tensor(v);
    CHECK(t.shape == std::vector<int64_t>{1, 3, 2, 4, 5});
    CHECK(t.data == v.data);
    const SegMask m = testutil::random_mask(2, 4, 5, 0.3, rng);
    const TensorF mt = mask_to_tensor(m);
    CHECK(mt.shape == std::vector<int64_t>{1, 1, 2, 4, 5});
    CHECK(mt.data == m.data);
}
