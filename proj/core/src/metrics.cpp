#include "voldiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "voldiff/errors.hpp"
#include "voldiff/stats.hpp"

namespace voldiff {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_dims(const SegMask& a, const SegMask& b, const char* who) {
    if (a.depth != b.depth || a.height != b.height || a.width != b.width)
        throw ShapeError(std::string(who) + ": mask dimensions differ");
}

// One-dimensional squared-distance transform over samples at positions
// i*step. Infinite inputs are skipped when building the parabola envelope;
// an all-infinite line stays infinite.
void dt1d(const std::vector<double>& f, std::vector<double>& d, int64_t n, double step,
          std::vector<int64_t>& v, std::vector<double>& z) {
    int64_t k = -1;
    for (int64_t q = 0; q < n; ++q) {
        if (f[static_cast<size_t>(q)] == kInf) continue;
        const double xq = static_cast<double>(q) * step;
        const double fq = f[static_cast<size_t>(q)] + xq * xq;
        double s = -kInf;
        while (k >= 0) {
            const double xv = static_cast<double>(v[static_cast<size_t>(k)]) * step;
            s = (fq - (f[static_cast<size_t>(v[static_cast<size_t>(k)])] + xv * xv)) /
                (2.0 * (xq - xv));
            if (k > 0 && s <= z[static_cast<size_t>(k)]) {
                --k;
                continue;
            }
            break;
        }
        ++k;
        v[static_cast<size_t>(k)] = q;
        z[static_cast<size_t>(k)] = s;
        z[static_cast<size_t>(k + 1)] = kInf;
    }
    if (k < 0) {
        std::fill(d.begin(), d.begin() + static_cast<ptrdiff_t>(n), kInf);
        return;
    }
    int64_t j = 0;
    for (int64_t q = 0; q < n; ++q) {
        const double xq = static_cast<double>(q) * step;
        while (z[static_cast<size_t>(j + 1)] < xq) ++j;
        const double dx = xq - static_cast<double>(v[static_cast<size_t>(j)]) * step;
        d[static_cast<size_t>(q)] = dx * dx + f[static_cast<size_t>(v[static_cast<size_t>(j)])];
    }
}

}  // namespace

ConfusionCounts confusion_counts(const SegMask& pred, const SegMask& truth) {
    check_dims(pred, truth, "confusion_counts");
    ConfusionCounts c;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0.0f, t = truth.data[i] != 0.0f;
        c.tp += p && t;
        c.fp += p && !t;
        c.fn += !p && t;
    }
    return c;
}

double dice_score(const SegMask& a, const SegMask& b) {
    check_dims(a, b, "dice_score");
    int64_t inter = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const bool fa = a.data[i] != 0.0f, fb = b.data[i] != 0.0f;
        inter += fa && fb;
        na += fa;
        nb += fb;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

DistanceField edt(const SegMask& mask) {
    mask.validate();
    const int64_t D = mask.depth, H = mask.height, W = mask.width;
    DistanceField out;
    out.depth = D;
    out.height = H;
    out.width = W;
    out.spacing_mm = mask.spacing_mm;
    out.data.assign(static_cast<size_t>(D * H * W), kInf);
    for (size_t i = 0; i < out.data.size(); ++i)
        if (mask.data[i] != 0.0f) out.data[i] = 0.0;

    const int64_t nmax = std::max({D, H, W});
    std::vector<double> line(static_cast<size_t>(nmax)), dist(static_cast<size_t>(nmax));
    std::vector<int64_t> v(static_cast<size_t>(nmax));
    std::vector<double> z(static_cast<size_t>(nmax + 1));

    auto run_axis = [&](int64_t n, double step, int64_t count, auto index) {
        for (int64_t l = 0; l < count; ++l) {
            for (int64_t i = 0; i < n; ++i) line[static_cast<size_t>(i)] = out.data[index(l, i)];
            dt1d(line, dist, n, step, v, z);
            for (int64_t i = 0; i < n; ++i) out.data[index(l, i)] = dist[static_cast<size_t>(i)];
        }
    };

    // squared-distance passes, axis by axis: z, then y, then x
    run_axis(D, mask.spacing_mm[0], H * W,
             [&](int64_t l, int64_t i) { return static_cast<size_t>(i * H * W + l); });
    run_axis(H, mask.spacing_mm[1], D * W, [&](int64_t l, int64_t i) {
        const int64_t zi = l / W, xi = l % W;
        return static_cast<size_t>((zi * H + i) * W + xi);
    });
    run_axis(W, mask.spacing_mm[2], D * H,
             [&](int64_t l, int64_t i) { return static_cast<size_t>(l * W + i); });

    for (auto& d : out.data) d = d == kInf ? kInf : std::sqrt(d);
    return out;
}

SegMask surface_voxels(const SegMask& m) {
    m.validate();
    SegMask s(m.depth, m.height, m.width, 0, m.spacing_mm);
    auto bg = [&](int64_t z, int64_t y, int64_t x) {
        if (z < 0 || z >= m.depth || y < 0 || y >= m.height || x < 0 || x >= m.width) return true;
        return m.at(z, y, x) == 0.0f;
    };
    for (int64_t z = 0; z < m.depth; ++z)
        for (int64_t y = 0; y < m.height; ++y)
            for (int64_t x = 0; x < m.width; ++x) {
                if (m.at(z, y, x) == 0.0f) continue;
                if (bg(z - 1, y, x) || bg(z + 1, y, x) || bg(z, y - 1, x) || bg(z, y + 1, x) ||
                    bg(z, y, x - 1) || bg(z, y, x + 1))
                    s.at(z, y, x) = 1;
            }
    return s;
}

std::optional<double> hd95(const SegMask& a, const SegMask& b) {
    if (!a.same_grid(b)) throw ShapeError("hd95: mask grids differ (dims or spacing)");
    const SegMask sa = surface_voxels(a), sb = surface_voxels(b);
    if (sa.foreground_count() == 0 || sb.foreground_count() == 0) return std::nullopt;
    const DistanceField da = edt(sa), db = edt(sb);
    std::vector<double> pooled;
    pooled.reserve(static_cast<size_t>(sa.foreground_count() + sb.foreground_count()));
    for (size_t i = 0; i < sa.data.size(); ++i) {
        if (sa.data[i] != 0.0f) pooled.push_back(db.data[i]);
        if (sb.data[i] != 0.0f) pooled.push_back(da.data[i]);
    }
    std::sort(pooled.begin(), pooled.end());
    return percentile_sorted(pooled, 95.0);
}

std::optional<double> hd95_bruteforce(const SegMask& a, const SegMask& b) {
    if (!a.same_grid(b)) throw ShapeError("hd95_bruteforce: mask grids differ (dims or spacing)");
    const SegMask sa = surface_voxels(a), sb = surface_voxels(b);
    auto collect = [](const SegMask& s) {
        std::vector<std::array<int64_t, 3>> pts;
        for (int64_t z = 0; z < s.depth; ++z)
            for (int64_t y = 0; y < s.height; ++y)
                for (int64_t x = 0; x < s.width; ++x)
                    if (s.at(z, y, x) != 0.0f) pts.push_back({z, y, x});
        return pts;
    };
    const auto pa = collect(sa), pb = collect(sb);
    if (pa.empty() || pb.empty()) return std::nullopt;
    const auto& sp = a.spacing_mm;
    // same association order as the separable transform: (z² + y²) + x²
    auto min_dist = [&](const std::array<int64_t, 3>& p,
                        const std::vector<std::array<int64_t, 3>>& set) {
        double best = kInf;
        for (const auto& q : set) {
            const double dz = static_cast<double>(p[0] - q[0]) * sp[0];
            const double dy = static_cast<double>(p[1] - q[1]) * sp[1];
            const double dx = static_cast<double>(p[2] - q[2]) * sp[2];
            const double d2 = (dz * dz + dy * dy) + dx * dx;
            if (d2 < best) best = d2;
        }
        return std::sqrt(best);
    };
    std::vector<double> pooled;
    pooled.reserve(pa.size() + pb.size());
    for (const auto& p : pa) pooled.push_back(min_dist(p, pb));
    for (const auto& p : pb) pooled.push_back(min_dist(p, pa));
    std::sort(pooled.begin(), pooled.end());
    return percentile_sorted(pooled, 95.0);
}

EvalSummary evaluate_dataset(const std::vector<LabeledMask>& predictions,
                             const std::vector<LabeledMask>& references) {
    if (predictions.size() != references.size())
        throw ShapeError("evaluate_dataset: prediction/reference list sizes differ");
    if (predictions.empty()) throw ConfigError("evaluate_dataset: empty dataset");
    EvalSummary s;
    double dsum = 0.0, hsum = 0.0;
    int64_t hn = 0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i].id != references[i].id)
            throw ConfigError("evaluate_dataset: id mismatch at row " + std::to_string(i) + ": '" +
                              predictions[i].id + "' vs '" + references[i].id + "'");
        const SegMask& p = predictions[i].mask;
        const SegMask& g = references[i].mask;
        const ConfusionCounts c = confusion_counts(p, g);
        EvalResult r;
        r.id = predictions[i].id;
        r.dice = dice_score(p, g);
        r.hd95_mm = hd95(p, g);
        r.tp = c.tp;
        r.fp = c.fp;
        r.fn = c.fn;
        dsum += r.dice;
        if (r.hd95_mm) {
            hsum += *r.hd95_mm;
            ++hn;
        } else {
            ++s.hd95_undefined;
        }
        s.rows.push_back(std::move(r));
    }
    s.mean_dice = dsum / static_cast<double>(s.rows.size());
    if (hn > 0) s.mean_hd95_mm = hsum / static_cast<double>(hn);
    return s;
}

void write_eval_csv(const std::filesystem::path& path, const EvalSummary& s) {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw IoError(IoError::Kind::OpenFailed, "cannot open report for writing: " + path.string());
    std::fputs("id,dice,hd95_mm,tp,fp,fn\n", f);
    double tp = 0, fp = 0, fn = 0;
    for (const auto& r : s.rows) {
        std::fprintf(f, "%s,%.10g,", r.id.c_str(), r.dice);
        if (r.hd95_mm) std::fprintf(f, "%.10g", *r.hd95_mm);
        std::fprintf(f, ",%lld,%lld,%lld\n", static_cast<long long>(r.tp),
                     static_cast<long long>(r.fp), static_cast<long long>(r.fn));
        tp += static_cast<double>(r.tp);
        fp += static_cast<double>(r.fp);
        fn += static_cast<double>(r.fn);
    }
    const auto n = static_cast<double>(s.rows.size());
    std::fprintf(f, "__mean__,%.10g,", s.mean_dice);
    if (s.mean_hd95_mm) std::fprintf(f, "%.10g", *s.mean_hd95_mm);
    std::fprintf(f, ",%.10g,%.10g,%.10g\n", tp / n, fp / n, fn / n);
    if (std::fclose(f) != 0)
        throw IoError(IoError::Kind::WriteFailed, "failed to finish writing: " + path.string());
}

EvalSummary read_eval_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(IoError::Kind::OpenFailed, "cannot open report: " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "id,dice,hd95_mm,tp,fp,fn")
        throw IoError(IoError::Kind::BadHeader, "unexpected report header in " + path.string());
    EvalSummary s;
    bool saw_mean = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.push_back("");
        if (cells.size() != 6)
            throw IoError(IoError::Kind::BadHeader, "malformed report row in " + path.string());
        try {
            if (cells[0] == "__mean__") {
                s.mean_dice = std::stod(cells[1]);
                if (!cells[2].empty()) s.mean_hd95_mm = std::stod(cells[2]);
                saw_mean = true;
                continue;
            }
            EvalResult r;
            r.id = cells[0];
            r.dice = std::stod(cells[1]);
            if (!cells[2].empty())
                r.hd95_mm = std::stod(cells[2]);
            else
                ++s.hd95_undefined;
            r.tp = std::stoll(cells[3]);
            r.fp = std::stoll(cells[4]);
            r.fn = std::stoll(cells[5]);
            s.rows.push_back(std::move(r));
        } catch (const std::exception&) {
            throw IoError(IoError::Kind::BadHeader, "malformed report row in " + path.string());
        }
    }
    if (!saw_mean)
        throw IoError(IoError::Kind::Truncated, "report missing __mean__ row: " + path.string());
    return s;
}

}  // namespace voldiff
