#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "doctest.h"
#include "test_util.hpp"
#include "voldiff/checkpoint.hpp"
#include "voldiff/errors.hpp"
#include "voldiff/gradcheck.hpp"
#include "voldiff/losses.hpp"
#include "voldiff/nn_ops.hpp"
#include "voldiff/optim.hpp"

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

}  // namespace

TEST_CASE("grad_check flags wrong gradients and accepts right ones") {
    // f(x) = sum x^2, df = 2x
    auto f = [](const std::vector<double>& x) {
        double s = 0;
        for (double v : x) s += v * v;
        return s;
    };
    std::vector<double> x0 = {0.3, -1.2, 4.0};
    std::vector<double> good = {0.6, -2.4, 8.0};
    std::vector<double> bad = {0.6, -2.4, 8.1};
    CHECK(grad_check(f, x0, good).pass(1e-8));
    CHECK_FALSE(grad_check(f, x0, bad).pass(1e-4));
    CHECK_THROWS_AS(grad_check(f, x0, {1.0}), std::invalid_argument);
}

TEST_CASE("conv3d forward matches hand arithmetic") {
    // 1-d style: input [1,2,3], kernel [1,1] -> [1*1+2*1, 2+3] with bias 10
    TensorD x({1, 1, 1, 1, 3});
    x.data = {1, 2, 3};
    TensorD w({1, 1, 1, 1, 2});
    w.data = {1, 1};
    TensorD b({1});
    b.data = {10};
    const TensorD y = conv3d(x, w, b);
    CHECK(y.shape == std::vector<int64_t>{1, 1, 1, 1, 2});
    CHECK(y.data == std::vector<double>{13, 15});

    // identity 1x1x1 kernel over 2 input channels: out = 2*ch0 - ch1
    TensorD x2({1, 2, 1, 2, 2});
    x2.data = {1, 2, 3, 4, 10, 20, 30, 40};
    TensorD w2({1, 2, 1, 1, 1});
    w2.data = {2, -1};
    const TensorD y2 = conv3d(x2, w2, TensorD({1}));
    CHECK(y2.data == std::vector<double>{-8, -16, -24, -32});

    // padding=1 keeps dims at k=3, stride=2 halves them per the floor formula
    Rng rng(1);
    const TensorD xr = random_tensor({1, 1, 4, 6, 5}, rng);
    const TensorD wr = random_tensor({2, 1, 3, 3, 3}, rng);
    CHECK(conv3d(xr, wr, TensorD({2}), 1, 1).shape == std::vector<int64_t>{1, 2, 4, 6, 5});
    CHECK(conv3d(xr, wr, TensorD({2}), 2, 1).shape == std::vector<int64_t>{1, 2, 2, 3, 3});
    CHECK_THROWS_AS(conv3d(xr, random_tensor({2, 3, 3, 3, 3}, rng), TensorD({2})), ShapeError);
}

TEST_CASE("conv3d backward passes finite-difference checks") {
    Rng rng(7);
    for (const auto& [stride, padding] : {std::pair{int64_t{1}, int64_t{1}},
                                          std::pair{int64_t{2}, int64_t{0}},
                                          std::pair{int64_t{2}, int64_t{1}}}) {
        const TensorD x = random_tensor({1, 2, 4, 5, 4}, rng);
        const TensorD w = random_tensor({3, 2, 3, 3, 3}, rng, 0.5);
        const TensorD b = random_tensor({3}, rng);
        const TensorD out = conv3d(x, w, b, stride, padding);
        const TensorD r = random_tensor(out.shape, rng);

        TensorD dx, dw, db;
        conv3d_backward(x, w, r, stride, padding, &dx, &dw, &db);

        auto fx = [&](const std::vector<double>& v) {
            TensorD xx = x;
            xx.data = v;
            return project(conv3d(xx, w, b, stride, padding), r);
        };
        CHECK(grad_check(fx, x.data, dx.data, 1e-5, 120, &rng).pass(1e-7));

        auto fw = [&](const std::vector<double>& v) {
            TensorD ww = w;
            ww.data = v;
            return project(conv3d(x, ww, b, stride, padding), r);
        };
        CHECK(grad_check(fw, w.data, dw.data, 1e-5, 120, &rng).pass(1e-7));

        auto fb = [&](const std::vector<double>& v) {
            TensorD bb = b;
            bb.data = v;
            return project(conv3d(x, w, bb, stride, padding), r);
        };
        CHECK(grad_check(fb, b.data, db.data).pass(1e-8));
    }
}

TEST_CASE("conv_transpose3d is the adjoint of conv3d and its backward checks out") {
    Rng rng(13);
    const int64_t stride = 2;
    const TensorD w = random_tensor({2, 3, 2, 2, 2}, rng);  // [Cin, Cout, k,k,k]
    const TensorD x = random_tensor({1, 2, 3, 4, 3}, rng);
    const TensorD up = conv_transpose3d(x, w, TensorD({3}), stride);
    CHECK(up.shape == std::vector<int64_t>{1, 3, 6, 8, 6});  // (n-1)*s + k

    // <convT(x), y> == <x, conv(y)> with the same weight array
    const TensorD y = random_tensor(up.shape, rng);
    const TensorD back = conv3d(y, w, TensorD({2}), stride, 0);
    CHECK(project(up, y) == doctest::Approx(project(x, back)).epsilon(1e-12));

    const TensorD r = random_tensor(up.shape, rng);
    TensorD dx, dw, db;
    conv_transpose3d_backward(x, w, r, stride, &dx, &dw, &db);
    auto fx = [&](const std::vector<double>& v) {
        TensorD xx = x;
        xx.data = v;
        return project(conv_transpose3d(xx, w, TensorD({3}), stride), r);
    };
    CHECK(grad_check(fx, x.data, dx.data, 1e-5, 100, &rng).pass(1e-7));
    auto fw = [&](const std::vector<double>& v) {
        TensorD ww = w;
        ww.data = v;
        return project(conv_transpose3d(x, ww, TensorD({3}), stride), r);
    };
    CHECK(grad_check(fw, w.data, dw.data, 1e-5, 100, &rng).pass(1e-7));
    auto fb = [&](const std::vector<double>& v) {
        TensorD bb({3});
        bb.data = v;
        return project(conv_transpose3d(x, w, bb, stride), r);
    };
    CHECK(grad_check(fb, std::vector<double>{0.1, -0.2, 0.3}, db.data).pass(1e-8));
}

TEST_CASE("maxpool3d picks window maxima, first-in-scan-order on ties") {
    TensorD x({1, 1, 2, 2, 4});
    for (size_t i = 0; i < 16; ++i) x.data[i] = static_cast<double>(i);
    const auto r = maxpool3d(x, 2, 2);
    CHECK(r.out.shape == std::vector<int64_t>{1, 1, 1, 1, 2});
    CHECK(r.out.data == std::vector<double>{13, 15});
    CHECK(r.argmax == std::vector<int64_t>{13, 15});

    TensorD tie({1, 1, 2, 2, 2}, 3.5);
    const auto rt = maxpool3d(tie, 2, 2);
    CHECK(rt.argmax == std::vector<int64_t>{0});  // strict > keeps the first

    const TensorD g = maxpool3d_backward(r.argmax, r.out, x.shape);
    CHECK(g.data[13] == 13.0);
    CHECK(g.data[15] == 15.0);
    CHECK(g.data[0] == 0.0);

    CHECK_THROWS_AS(maxpool3d(TensorD({1, 1, 3, 2, 2}), 2, 2), ShapeError);
}

TEST_CASE("maxpool3d backward matches finite differences away from ties") {
    Rng rng(3);
    TensorD x = random_tensor({1, 2, 4, 4, 4}, rng, 5.0);
    const auto pooled = maxpool3d(x, 2, 2);
    const TensorD r = random_tensor(pooled.out.shape, rng);
    const TensorD dx = maxpool3d_backward(pooled.argmax, r, x.shape);
    auto f = [&](const std::vector<double>& v) {
        TensorD xx = x;
        xx.data = v;
        return project(maxpool3d(xx, 2, 2).out, r);
    };
    CHECK(grad_check(f, x.data, dx.data, 1e-6, 100, &rng).pass(1e-7));
}

TEST_CASE("activation forwards and backwards") {
    TensorD x({1, 1, 1, 1, 4});
    x.data = {-2, -0.5, 0.5, 3};
    CHECK(relu(x).data == std::vector<double>{0, 0, 0.5, 3});

    Rng rng(17);
    // keep inputs away from the relu kink so central differences are valid
    TensorD xr({1, 2, 3, 3, 3});
    for (auto& v : xr.data) {
        v = 2.0 * rng.uniform() - 1.0;
        if (std::abs(v) < 0.1) v = v < 0 ? v - 0.1 : v + 0.1;
    }
    const TensorD r = random_tensor(xr.shape, rng);
    {
        const TensorD dx = relu_backward(xr, r);
        auto f = [&](const std::vector<double>& v) {
            TensorD t = xr;
            t.data = v;
            return project(relu(t), r);
        };
        CHECK(grad_check(f, xr.data, dx.data).pass(1e-8));
    }
    {
        const TensorD y = sigmoid(xr);
        CHECK(y.data[0] == doctest::Approx(1.0 / (1.0 + std::exp(-xr.data[0]))).epsilon(1e-12));
        const TensorD dx = sigmoid_backward(y, r);
        auto f = [&](const std::vector<double>& v) {
            TensorD t = xr;
            t.data = v;
            return project(sigmoid(t), r);
        };
        CHECK(grad_check(f, xr.data, dx.data).pass(1e-8));
    }
}

TEST_CASE("softmax_channel normalizes over channels and its backward is exact") {
    TensorD x({1, 2, 1, 1, 2});
    x.data = {1.0, 3.0, 1.0, 1.0};  // ch0: (1,3) ch1: (1,1)
    const TensorD y = softmax_channel(x);
    for (int i = 0; i < 2; ++i)
        CHECK(y.data[static_cast<size_t>(i)] + y.data[static_cast<size_t>(2 + i)] ==
              doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y.data[0] == doctest::Approx(0.5));                         // equal logits
    CHECK(y.data[1] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));  // logit gap 2

    // shift invariance (max-subtraction path)
    TensorD xs = x;
    for (auto& v : xs.data) v += 1000.0;
    const TensorD ys = softmax_channel(xs);
    for (size_t i = 0; i < y.data.size(); ++i)
        CHECK(ys.data[i] == doctest::Approx(y.data[i]).epsilon(1e-12));

    Rng rng(23);
    const TensorD xr = random_tensor({2, 3, 2, 2, 2}, rng, 2.0);
    const TensorD r = random_tensor(xr.shape, rng);
    const TensorD yr = softmax_channel(xr);
    const TensorD dx = softmax_channel_backward(yr, r);
    auto f = [&](const std::vector<double>& v) {
        TensorD t = xr;
        t.data = v;
        return project(softmax_channel(t), r);
    };
    CHECK(grad_check(f, xr.data, dx.data, 1e-5, 120, &rng).pass(1e-7));
}

TEST_CASE("concat and slice move channels without mixing") {
    Rng rng(31);
    const TensorD a = random_tensor({2, 2, 1, 2, 2}, rng);
    const TensorD b = random_tensor({2, 3, 1, 2, 2}, rng);
    const TensorD c = concat_channels(a, b);
    CHECK(c.shape == std::vector<int64_t>{2, 5, 1, 2, 2});
    // channel 0 of sample 1 comes from a, channel 4 from b
    CHECK(c.data[static_cast<size_t>(5 * 4)] == a.data[static_cast<size_t>(2 * 4)]);
    CHECK(c.data[static_cast<size_t>(5 * 4 + 2 * 4 + 2 * 4 + 3)] ==
          b.data[static_cast<size_t>(3 * 4 + 2 * 4 + 3)]);

    auto [da, db] = concat_channels_backward(c, 2);
    CHECK(da.data == a.data);
    CHECK(db.data == b.data);

    const TensorD s = slice_channels(c, 2, 5);
    CHECK(s.data == b.data);
    const TensorD back = slice_channels_backward(s, 5, 2);
    CHECK(back.shape == c.shape);
    auto [z, keep] = concat_channels_backward(back, 2);
    for (double v : z.data) CHECK(v == 0.0);
    CHECK(keep.data == b.data);

    CHECK_THROWS_AS(concat_channels(a, random_tensor({2, 3, 1, 2, 3}, rng)), ShapeError);
    CHECK_THROWS_AS(slice_channels(c, 3, 3), ShapeError);
}

TEST_CASE("bce matches hand values and its gradient stays inside the clamp band") {
    TensorD p({1, 1, 1, 1, 2}), t({1, 1, 1, 1, 2});
    p.data = {0.5, 0.5};
    t.data = {1.0, 0.0};
    // -(ln 0.5 + ln 0.5)/2 = ln 2
    CHECK(bce(p, t) == doctest::Approx(0.6931471805599453).epsilon(1e-12));

    // perfect binary prediction sits at the clamp floor, about 1e-7
    TensorD pp({1, 1, 1, 1, 2}), tt({1, 1, 1, 1, 2});
    pp.data = {1.0, 0.0};
    tt.data = {1.0, 0.0};
    const double floor_loss = bce(pp, tt);
    CHECK(floor_loss > 0.0);
    CHECK(floor_loss < 1.1e-7);

    Rng rng(5);
    TensorD pr({1, 1, 2, 3, 2}), tr({1, 1, 2, 3, 2});
    for (auto& v : pr.data) v = 0.05 + 0.9 * rng.uniform();
    for (auto& v : tr.data) v = rng.uniform();
    TensorD d;
    bce(pr, tr, &d);
    auto f = [&](const std::vector<double>& v) {
        TensorD x = pr;
        x.data = v;
        return static_cast<double>(bce(x, tr));
    };
    CHECK(grad_check(f, pr.data, d.data).pass(1e-8));
}

TEST_CASE("dice_loss hand value, range, and gradient") {
    TensorD p({1, 1, 1, 1, 4}), t({1, 1, 1, 1, 4});
    p.data = {1, 0, 1, 0};
    t.data = {1, 1, 0, 0};
    // 1 - (2*1 + 1) / (2 + 2 + 1) = 0.4
    CHECK(dice_loss(p, t, 1.0) == doctest::Approx(0.4).epsilon(1e-12));
    // identical prediction: loss exactly 0
    CHECK(dice_loss(t, t, 1.0) == doctest::Approx(0.0).epsilon(1e-15));
    // empty-empty with smoothing: 1 - s/s = 0
    TensorD z({1, 1, 1, 1, 4});
    CHECK(dice_loss(z, z, 1.0) == 0.0);

    Rng rng(29);
    TensorD pr({1, 1, 2, 3, 3}), tr({1, 1, 2, 3, 3});
    for (auto& v : pr.data) v = rng.uniform();
    for (auto& v : tr.data) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    CHECK(dice_loss(pr, tr) >= 0.0);
    CHECK(dice_loss(pr, tr) <= 1.0);
    TensorD d;
    dice_loss(pr, tr, 1.0, &d);
    auto f = [&](const std::vector<double>& v) {
        TensorD x = pr;
        x.data = v;
        return static_cast<double>(dice_loss(x, tr, 1.0));
    };
    CHECK(grad_check(f, pr.data, d.data).pass(1e-8));
}

TEST_CASE("mse hand value and gradient") {
    TensorD p({1, 1, 1, 1, 2}), t({1, 1, 1, 1, 2});
    p.data = {3, 1};
    t.data = {1, 1};
    CHECK(mse(p, t) == doctest::Approx(2.0).epsilon(1e-15));
    TensorD d;
    mse(p, t, &d);
    CHECK(d.data == std::vector<double>{2.0, 0.0});

    Rng rng(41);
    TensorD pr({1, 2, 2, 2, 2}), tr({1, 2, 2, 2, 2});
    for (auto& v : pr.data) v = 2 * rng.uniform() - 1;
    for (auto& v : tr.data) v = 2 * rng.uniform() - 1;
    mse(pr, tr, &d);
    auto f = [&](const std::vector<double>& v) {
        TensorD x = pr;
        x.data = v;
        return static_cast<double>(mse(x, tr));
    };
    CHECK(grad_check(f, pr.data, d.data).pass(1e-8));
}

TEST_CASE("adam_step reproduces the hand-computed first step") {
    ParamSetT<double> ps;
    auto& w = ps.add("w", {1});
    w.data[0] = 1.0;
    w.grad[0] = 0.1;
    AdamConfig cfg;
    cfg.lr = 0.1;
    AdamStateT<double> st;
    st.init(ps, cfg);
    adam_step(ps, st);

    // step 1 by hand: m = (1-b1)g, v = (1-b2)g^2, m_hat = g, v_hat = g^2,
    // update = lr * g / (|g| + eps)
    const double expected = 1.0 - 0.1 * (0.1 / (0.1 + 1e-8));
    CHECK(expected == doctest::Approx(0.900000009999999).epsilon(1e-15));
    CHECK(ps.at("w").data[0] == doctest::Approx(expected).epsilon(1e-15));

    // second step against a scripted replica of the recurrence
    ps.at("w").grad[0] = -0.05;
    adam_step(ps, st);
    double m = (1 - 0.9) * 0.1;
    double v = (1 - 0.999) * 0.01;
    double x = expected;
    m = 0.9 * m + 0.1 * (-0.05);
    v = 0.999 * v + 0.001 * 0.0025;
    const double mh = m / (1 - 0.9 * 0.9);
    const double vh = v / (1 - 0.999 * 0.999);
    x -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(ps.at("w").data[0] == doctest::Approx(x).epsilon(1e-14));
}

TEST_CASE("adam weight decay is decoupled and uses the pre-update parameter") {
    ParamSetT<double> a, b;
    a.add("w", {1}).data[0] = 2.0;
    b.add("w", {1}).data[0] = 2.0;
    a.at("w").grad[0] = 0.3;
    b.at("w").grad[0] = 0.3;

    AdamConfig plain;
    plain.lr = 0.01;
    AdamConfig decay = plain;
    decay.weight_decay = 0.5;

    AdamStateT<double> sa, sb;
    sa.init(a, plain);
    sb.init(b, decay);
    adam_step(a, sa);
    adam_step(b, sb);
    // decayed = plain - lr * wd * theta_before
    CHECK(b.at("w").data[0] ==
          doctest::Approx(a.at("w").data[0] - 0.01 * 0.5 * 2.0).epsilon(1e-14));
}

TEST_CASE("adam rejects non-finite gradients with the parameter name") {
    ParamSetT<float> ps;
    ps.add("enc0.conv1.w", {2});
    ps.at("enc0.conv1.w").grad[1] = std::numeric_limits<float>::quiet_NaN();
    AdamStateT<float> st;
    st.init(ps, {});
    CHECK_THROWS_WITH_AS(adam_step(ps, st), doctest::Contains("enc0.conv1.w"), NumericError);
}

TEST_CASE("param set enforces unique names and known lookups") {
    ParamSetT<float> ps;
    ps.add("a", {2, 2});
    CHECK_THROWS_AS(ps.add("a", {1}), ConfigError);
    CHECK_THROWS_AS(ps.at("missing"), ConfigError);
    CHECK(ps.has("a"));
    CHECK(ps.total_elems() == 4);
}

TEST_CASE("kaiming init matches the target variance") {
    Rng rng(123);
    TensorT<float> w({64, 64, 3, 3, 3});  // plenty of samples
    const int64_t fan_in = 64 * 27;
    kaiming_init(w, fan_in, rng);
    double mean = 0, var = 0;
    for (float v : w.data) mean += v;
    mean /= static_cast<double>(w.numel());
    for (float v : w.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.numel());
    const double target = 2.0 / static_cast<double>(fan_in);
    CHECK(std::abs(mean) < 3.0 * std::sqrt(target / static_cast<double>(w.numel())));
    CHECK(var == doctest::Approx(target).epsilon(0.05));
}

TEST_CASE("checkpoint round trip preserves names, shapes, order and bytes") {
    const auto dir = testutil::scratch_dir("nn_ckpt");
    Rng rng(77);
    ParamSetT<float> ps;
    ps.add("enc0.conv1.w", {4, 2, 3, 3, 3});
    ps.add("enc0.conv1.b", {4});
    ps.add("head.w", {2, 4, 1, 1, 1});
    for (auto& t : ps.tensors)
        for (auto& v : t.data) v = static_cast<float>(rng.gaussian());

    const auto p1 = dir / "a.ckpt";
    save_checkpoint(p1, ps);
    ParamSetT<float> r = load_checkpoint(p1);
    REQUIRE(r.size() == 3);
    CHECK(r.names == ps.names);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(r.tensors[i].shape == ps.tensors[i].shape);
        CHECK(r.tensors[i].data == ps.tensors[i].data);
    }

    // byte-stable: saving the loaded set reproduces the file
    const auto p2 = dir / "b.ckpt";
    save_checkpoint(p2, r);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    // corruption classes
    auto bytes = b1;
    bytes[0] = 'X';
    std::ofstream(dir / "magic.ckpt", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), IoError);
    std::ofstream(dir / "short.ckpt", std::ios::binary) << b1.substr(0, b1.size() - 2);
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), IoError);
    std::ofstream(dir / "long.ckpt", std::ios::binary) << (b1 + "x");
    CHECK_THROWS_AS(load_checkpoint(dir / "long.ckpt"), IoError);
    CHECK_THROWS_AS(load_checkpoint(dir / "absent.ckpt"), IoError);
}
