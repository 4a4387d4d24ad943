#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "voldiff/metrics.hpp"

using namespace voldiff;

namespace {

SegMask empty_mask(int64_t d, int64_t h, int64_t w, std::array<double, 3> spacing = {1, 1, 1}) {
    return SegMask(d, h, w, 0.0f, spacing);
}

// all-pairs oracle with the same (z,y) + x association the separable passes use
DistanceField edt_oracle(const SegMask& m) {
    DistanceField f;
    f.depth = m.depth;
    f.height = m.height;
    f.width = m.width;
    f.spacing_mm = m.spacing_mm;
    f.data.assign(static_cast<size_t>(m.depth * m.height * m.width),
                  std::numeric_limits<double>::infinity());
    const double sz = m.spacing_mm[0], sy = m.spacing_mm[1], sx = m.spacing_mm[2];
    for (int64_t z = 0; z < m.depth; ++z)
        for (int64_t y = 0; y < m.height; ++y)
            for (int64_t x = 0; x < m.width; ++x) {
                double best = std::numeric_limits<double>::infinity();
                for (int64_t fz = 0; fz < m.depth; ++fz)
                    for (int64_t fy = 0; fy < m.height; ++fy)
                        for (int64_t fx = 0; fx < m.width; ++fx) {
                            if (m.at(fz, fy, fx) == 0.0f) continue;
                            const double dz = static_cast<double>(z - fz) * sz;
                            const double dy = static_cast<double>(y - fy) * sy;
                            const double dx = static_cast<double>(x - fx) * sx;
                            best = std::min(best, (dz * dz + dy * dy) + dx * dx);
                        }
                f.data[static_cast<size_t>((z * m.height + y) * m.width + x)] = std::sqrt(best);
            }
    return f;
}

}  // namespace

TEST_CASE("confusion counts") {
    SegMask pred = empty_mask(1, 2, 3);
    SegMask truth = empty_mask(1, 2, 3);
    pred.data = {1, 1, 0, 0, 1, 0};
    truth.data = {1, 0, 1, 0, 1, 0};
    const ConfusionCounts c = confusion_counts(pred, truth);
    CHECK(c.tp == 2);
    CHECK(c.fp == 1);
    CHECK(c.fn == 1);
    CHECK_THROWS_AS(confusion_counts(pred, empty_mask(1, 3, 2)), ShapeError);
}

TEST_CASE("dice hand values and conventions") {
    SegMask a = empty_mask(1, 2, 5);
    SegMask b = empty_mask(1, 2, 5);
    // |A| = 4, |B| = 6, |A and B| = 3 -> 2*3/10
    a.data = {1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
    b.data = {1, 1, 1, 0, 1, 1, 1, 0, 0, 0};
    CHECK(dice_score(a, b) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(dice_score(b, a) == doctest::Approx(0.6).epsilon(1e-15));

    CHECK(dice_score(empty_mask(2, 2, 2), empty_mask(2, 2, 2)) == 1.0);
    SegMask one = empty_mask(2, 2, 2);
    one.data[3] = 1.0f;
    CHECK(dice_score(one, empty_mask(2, 2, 2)) == 0.0);
    CHECK(dice_score(empty_mask(2, 2, 2), one) == 0.0);

    Rng rng(10);
    for (int rep = 0; rep < 50; ++rep) {
        const SegMask x = testutil::random_mask(4, 5, 6, 0.4, rng);
        const SegMask y = testutil::random_mask(4, 5, 6, 0.4, rng);
        double inter = 0, nx = 0, ny = 0;
        for (size_t i = 0; i < x.data.size(); ++i) {
            inter += x.data[i] != 0 && y.data[i] != 0;
            nx += x.data[i] != 0;
            ny += y.data[i] != 0;
        }
        const double want = nx + ny == 0 ? 1.0 : 2.0 * inter / (nx + ny);
        CHECK(dice_score(x, y) == doctest::Approx(want).epsilon(1e-15));
        CHECK(dice_score(x, y) == dice_score(y, x));
        CHECK(dice_score(x, x) == 1.0);
    }
}

TEST_CASE("distance transform closed-form probes") {
    SegMask full = empty_mask(2, 3, 3);
    std::fill(full.data.begin(), full.data.end(), 1.0f);
    const DistanceField f0 = edt(full);
    for (double v : f0.data) CHECK(v == 0.0);

    SegMask point = empty_mask(4, 4, 4);
    point.at(0, 0, 0) = 1.0f;
    const DistanceField f1 = edt(point);
    CHECK(f1.at(0, 0, 3) == 3.0);
    CHECK(f1.at(1, 2, 2) == 3.0);  // sqrt(1+4+4)
    CHECK(f1.at(0, 0, 0) == 0.0);

    SegMask aniso = empty_mask(3, 3, 3, {2.0, 0.5, 1.0});
    aniso.at(0, 0, 0) = 1.0f;
    const DistanceField f2 = edt(aniso);
    CHECK(f2.at(1, 0, 0) == 2.0);
    CHECK(f2.at(0, 2, 0) == 1.0);
    CHECK(f2.at(0, 0, 2) == 2.0);
    CHECK(f2.at(1, 1, 1) == std::sqrt(5.25));

    const DistanceField fe = edt(empty_mask(2, 2, 2));
    for (double v : fe.data) CHECK(std::isinf(v));
}

TEST_CASE("distance transform equals the all-pairs oracle exactly") {
    Rng rng(2718);
    for (const auto spacing : {std::array<double, 3>{1, 1, 1}, std::array<double, 3>{1, 0.5, 2}}) {
        for (int rep = 0; rep < 12; ++rep) {
            const SegMask m = testutil::random_mask(8, 8, 8, 0.15, rng, spacing);
            if (m.foreground_count() == 0) continue;
            const DistanceField fast = edt(m);
            const DistanceField slow = edt_oracle(m);
            REQUIRE(fast.data.size() == slow.data.size());
            for (size_t i = 0; i < fast.data.size(); ++i) REQUIRE(fast.data[i] == slow.data[i]);
        }
    }
}

TEST_CASE("surface voxels are the 6-connected boundary") {
    SegMask cube = empty_mask(3, 3, 3);
    std::fill(cube.data.begin(), cube.data.end(), 1.0f);
    const SegMask s = surface_voxels(cube);
    CHECK(s.foreground_count() == 26);
    CHECK(s.at(1, 1, 1) == 0.0f);  // interior voxel is enclosed

    SegMask point = empty_mask(3, 3, 3);
    point.at(1, 1, 1) = 1.0f;
    CHECK(surface_voxels(point).data == point.data);

    // out-of-bounds counts as background, so a full line is all surface
    SegMask line = empty_mask(1, 1, 3);
    std::fill(line.data.begin(), line.data.end(), 1.0f);
    CHECK(surface_voxels(line).foreground_count() == 3);

    CHECK(surface_voxels(empty_mask(2, 2, 2)).foreground_count() == 0);
}

TEST_CASE("hd95 closed-form probes") {
    Rng rng(5);
    const SegMask m = testutil::random_mask(5, 6, 7, 0.3, rng);
    REQUIRE(m.foreground_count() > 0);
    CHECK(hd95(m, m) == 0.0);

    SegMask a = empty_mask(1, 1, 5);
    SegMask b = empty_mask(1, 1, 5);
    a.at(0, 0, 0) = 1.0f;
    b.at(0, 0, 3) = 1.0f;
    CHECK(*hd95(a, b) == 3.0);
    CHECK(*hd95(b, a) == 3.0);

    // pooled percentile over {0, 0, 10}: linear interpolation at rank 1.9
    SegMask two = empty_mask(1, 1, 11), one = empty_mask(1, 1, 11);
    two.at(0, 0, 0) = 1.0f;
    two.at(0, 0, 10) = 1.0f;
    one.at(0, 0, 0) = 1.0f;
    CHECK(*hd95(two, one) == doctest::Approx(9.0).epsilon(1e-12));

    CHECK_FALSE(hd95(empty_mask(5, 6, 7), m).has_value());
    CHECK_FALSE(hd95(m, empty_mask(5, 6, 7)).has_value());
    CHECK_FALSE(hd95(empty_mask(5, 6, 7), empty_mask(5, 6, 7)).has_value());

    CHECK_THROWS_AS(hd95(m, empty_mask(5, 6, 8)), ShapeError);
    CHECK_THROWS_AS(hd95(m, testutil::random_mask(5, 6, 7, 0.3, rng, {2, 1, 1})), ShapeError);
}

TEST_CASE("hd95 equals the brute-force oracle on random pairs") {
    Rng rng(1618);
    int checked = 0;
    for (int rep = 0; rep < 220; ++rep) {
        const bool aniso = rep % 2 == 1;
        const std::array<double, 3> spacing = aniso ? std::array<double, 3>{1, 0.5, 2}
                                                    : std::array<double, 3>{1, 1, 1};
        const SegMask a = testutil::random_mask(8, 8, 8, 0.05 + 0.3 * rng.uniform(), rng, spacing);
        const SegMask b = testutil::random_mask(8, 8, 8, 0.05 + 0.3 * rng.uniform(), rng, spacing);
        const auto fast = hd95(a, b);
        const auto slow = hd95_bruteforce(a, b);
        REQUIRE(fast.has_value() == slow.has_value());
        if (fast) {
            REQUIRE(*fast == *slow);
            REQUIRE(*hd95(b, a) == *fast);
            ++checked;
        }
    }
    CHECK(checked >= 200);
}

TEST_CASE("dataset evaluation pairs rows by id and aggregates") {
    Rng rng(23);
    std::vector<LabeledMask> preds, refs;
    for (int i = 0; i < 3; ++i) {
        const std::string id = "rec" + std::to_string(i);
        const SegMask gt = testutil::random_mask(4, 6, 6, 0.35, rng);
        refs.push_back({id, gt});
        preds.push_back({id, gt});  // perfect
    }
    const EvalSummary perfect = evaluate_dataset(preds, refs);
    CHECK(perfect.mean_dice == 1.0);
    REQUIRE(perfect.mean_hd95_mm.has_value());
    CHECK(*perfect.mean_hd95_mm == 0.0);
    CHECK(perfect.hd95_undefined == 0);
    REQUIRE(perfect.rows.size() == 3);
    CHECK(perfect.rows[1].id == "rec1");
    CHECK(perfect.rows[1].fp == 0);
    CHECK(perfect.rows[1].fn == 0);

    // an empty prediction: dice 0, no surface, excluded from the HD95 mean
    preds[2].mask = empty_mask(4, 6, 6);
    const EvalSummary partial = evaluate_dataset(preds, refs);
    CHECK(partial.rows[2].dice == 0.0);
    CHECK_FALSE(partial.rows[2].hd95_mm.has_value());
    CHECK(partial.hd95_undefined == 1);
    CHECK(partial.mean_dice == doctest::Approx((1.0 + 1.0 + 0.0) / 3.0).epsilon(1e-15));
    REQUIRE(partial.mean_hd95_mm.has_value());
    CHECK(*partial.mean_hd95_mm == 0.0);  // averaged over the two defined rows

    auto swapped = preds;
    std::swap(swapped[0].id, swapped[1].id);
    CHECK_THROWS_AS(evaluate_dataset(swapped, refs), ConfigError);
    auto shorter = preds;
    shorter.pop_back();
    CHECK_THROWS_AS(evaluate_dataset(shorter, refs), ShapeError);
    CHECK_THROWS_AS(evaluate_dataset({}, {}), ConfigError);
}

TEST_CASE("evaluation csv round trip") {
    const auto dir = testutil::scratch_dir("eval_csv");
    EvalSummary s;
    s.rows.push_back({"rec0", 0.875, 1.5, 10, 2, 3});
    s.rows.push_back({"rec1", 0.5, std::nullopt, 4, 4, 4});
    s.mean_dice = 0.6875;
    s.mean_hd95_mm = 1.5;
    s.hd95_undefined = 1;

    const auto path = dir / "report.csv";
    write_eval_csv(path, s);
    const EvalSummary r = read_eval_csv(path);
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].id == "rec0");
    CHECK(r.rows[0].dice == 0.875);
    REQUIRE(r.rows[0].hd95_mm.has_value());
    CHECK(*r.rows[0].hd95_mm == 1.5);
    CHECK(r.rows[0].tp == 10);
    CHECK(r.rows[0].fp == 2);
    CHECK(r.rows[0].fn == 3);
    CHECK(r.rows[1].id == "rec1");
    CHECK_FALSE(r.rows[1].hd95_mm.has_value());
    CHECK(r.mean_dice == 0.6875);
    REQUIRE(r.mean_hd95_mm.has_value());
    CHECK(*r.mean_hd95_mm == 1.5);

    {
        std::ifstream f(path);
        std::string header;
        std::getline(f, header);
        CHECK(header == "id,dice,hd95_mm,tp,fp,fn");
        std::string row;
        std::getline(f, row);
        CHECK(row == "rec0,0.875,1.5,10,2,3");
        std::getline(f, row);
        CHECK(row == "rec1,0.5,,4,4,4");
    }

    std::ofstream(dir / "bad_header.csv") << "id,dice\nrec0,1\n";
    CHECK_THROWS_AS(read_eval_csv(dir / "bad_header.csv"), IoError);
    std::ofstream(dir / "no_mean.csv") << "id,dice,hd95_mm,tp,fp,fn\nrec0,1,0,1,0,0\n";
    CHECK_THROWS_AS(read_eval_csv(dir / "no_mean.csv"), IoError);
    std::ofstream(dir / "mangled.csv") << "id,dice,hd95_mm,tp,fp,fn\nrec0,xyz,0,1,0,0\n__mean__,1,0,1,0,0\n";
    CHECK_THROWS_AS(read_eval_csv(dir / "mangled.csv"), IoError);
    CHECK_THROWS_AS(read_eval_csv(dir / "absent.csv"), IoError);
}
