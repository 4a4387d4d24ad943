#include "voldiff/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "voldiff/errors.hpp"
#include "voldiff/nvol.hpp"

namespace voldiff {

void PhantomConfig::validate() const {
    if (depth < 1 || height < 1 || width < 1) throw ConfigError("phantom: non-positive dims");
    for (double s : spacing_mm)
        if (!(s > 0.0)) throw ConfigError("phantom: spacing must be positive");
    if (num_lesions_min < 0 || num_lesions_min > num_lesions_max)
        throw ConfigError("phantom: num_lesions range is empty");
    if (!(lesion_radius_mm_min > 0.0) || lesion_radius_mm_min > lesion_radius_mm_max)
        throw ConfigError("phantom: lesion_radius_mm range is empty");
    if (noise_sigma < 0.0) throw ConfigError("phantom: noise_sigma must be >= 0");
    const double extents[3] = {static_cast<double>(depth - 1) * spacing_mm[0],
                               static_cast<double>(height - 1) * spacing_mm[1],
                               static_cast<double>(width - 1) * spacing_mm[2]};
    for (double e : extents)
        if (2.0 * lesion_radius_mm_max > e)
            throw ConfigError("phantom: max lesion radius does not fit the volume extent");
}

namespace {

std::vector<double> parse_numbers(const std::string& key, const std::string& text, size_t expect) {
    std::istringstream ss(text);
    std::vector<double> out;
    double x;
    while (ss >> x) out.push_back(x);
    if (out.size() != expect)
        throw ConfigError("phantom config: key '" + key + "' expects " + std::to_string(expect) +
                          " numbers, got " + std::to_string(out.size()));
    return out;
}

}  // namespace

PhantomConfig load_phantom_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("phantom config: cannot open " + path.string());
    PhantomConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos)
                throw ConfigError("phantom config: line " + std::to_string(lineno) + " is not key = value");
            continue;
        }
        auto strip = [](std::string s) {
            const size_t a = s.find_first_not_of(" \t\r");
            const size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = strip(line.substr(0, eq));
        const std::string val = strip(line.substr(eq + 1));
        if (key == "dims") {
            auto v = parse_numbers(key, val, 3);
            cfg.depth = static_cast<int64_t>(v[0]);
            cfg.height = static_cast<int64_t>(v[1]);
            cfg.width = static_cast<int64_t>(v[2]);
        } else if (key == "spacing_mm") {
            auto v = parse_numbers(key, val, 3);
            cfg.spacing_mm = {v[0], v[1], v[2]};
        } else if (key == "num_lesions") {
            auto v = parse_numbers(key, val, 2);
            cfg.num_lesions_min = static_cast<int64_t>(v[0]);
            cfg.num_lesions_max = static_cast<int64_t>(v[1]);
        } else if (key == "lesion_radius_mm") {
            auto v = parse_numbers(key, val, 2);
            cfg.lesion_radius_mm_min = v[0];
            cfg.lesion_radius_mm_max = v[1];
        } else if (key == "channel_mean") {
            auto v = parse_numbers(key, val, 4);
            for (int i = 0; i < 4; ++i) cfg.channel_mean[static_cast<size_t>(i)] = v[static_cast<size_t>(i)];
        } else if (key == "channel_contrast") {
            auto v = parse_numbers(key, val, 4);
            for (int i = 0; i < 4; ++i) cfg.channel_contrast[static_cast<size_t>(i)] = v[static_cast<size_t>(i)];
        } else if (key == "noise_sigma") {
            cfg.noise_sigma = parse_numbers(key, val, 1)[0];
        } else if (key == "seed") {
            cfg.seed = static_cast<uint64_t>(parse_numbers(key, val, 1)[0]);
        } else {
            throw ConfigError("phantom config: unknown key '" + key + "' at line " + std::to_string(lineno));
        }
    }
    cfg.validate();
    return cfg;
}

void save_phantom_config(const std::filesystem::path& path, const PhantomConfig& cfg) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError(IoError::Kind::OpenFailed, "save_phantom_config: cannot open " + path.string());
    f << "dims = " << cfg.depth << " " << cfg.height << " " << cfg.width << "\n";
    f << "spacing_mm = " << cfg.spacing_mm[0] << " " << cfg.spacing_mm[1] << " " << cfg.spacing_mm[2] << "\n";
    f << "num_lesions = " << cfg.num_lesions_min << " " << cfg.num_lesions_max << "\n";
    f << "lesion_radius_mm = " << cfg.lesion_radius_mm_min << " " << cfg.lesion_radius_mm_max << "\n";
    f << "channel_mean = " << cfg.channel_mean[0] << " " << cfg.channel_mean[1] << " "
      << cfg.channel_mean[2] << " " << cfg.channel_mean[3] << "\n";
    f << "channel_contrast = " << cfg.channel_contrast[0] << " " << cfg.channel_contrast[1] << " "
      << cfg.channel_contrast[2] << " " << cfg.channel_contrast[3] << "\n";
    f << "noise_sigma = " << cfg.noise_sigma << "\n";
    f << "seed = " << cfg.seed << "\n";
    if (!f) throw IoError(IoError::Kind::WriteFailed, "save_phantom_config: write failed");
}

void add_ellipsoid(SegMask& m, std::array<double, 3> center_vox, std::array<double, 3> radii_mm) {
    for (double r : radii_mm)
        if (!(r > 0.0)) throw ConfigError("add_ellipsoid: radii must be positive");
    const int64_t dims[3] = {m.depth, m.height, m.width};
    int64_t lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
        const double r_vox = radii_mm[static_cast<size_t>(a)] / m.spacing_mm[static_cast<size_t>(a)];
        lo[a] = std::clamp<int64_t>(static_cast<int64_t>(std::floor(center_vox[static_cast<size_t>(a)] - r_vox)),
                                    0, dims[a] - 1);
        hi[a] = std::clamp<int64_t>(static_cast<int64_t>(std::ceil(center_vox[static_cast<size_t>(a)] + r_vox)),
                                    0, dims[a] - 1);
    }
    for (int64_t z = lo[0]; z <= hi[0]; ++z)
        for (int64_t y = lo[1]; y <= hi[1]; ++y)
            for (int64_t x = lo[2]; x <= hi[2]; ++x) {
                const double dz = (static_cast<double>(z) - center_vox[0]) * m.spacing_mm[0] / radii_mm[0];
                const double dy = (static_cast<double>(y) - center_vox[1]) * m.spacing_mm[1] / radii_mm[1];
                const double dx = (static_cast<double>(x) - center_vox[2]) * m.spacing_mm[2] / radii_mm[2];
                if (dz * dz + dy * dy + dx * dx <= 1.0) m.at(z, y, x) = 1.0f;
            }
}

Volume render_phantom_image(const SegMask& lesions, const PhantomConfig& cfg, Rng& rng) {
    Volume img(4, lesions.depth, lesions.height, lesions.width, 0.0f, lesions.spacing_mm);
    img.channel_desc = "T1,T1ce,T2,FLAIR";
    const int64_t n = lesions.numel();
    for (int64_t c = 0; c < 4; ++c) {
        const double mean = cfg.channel_mean[static_cast<size_t>(c)];
        const double contrast = cfg.channel_contrast[static_cast<size_t>(c)];
        float* dst = img.channel_ptr(c);
        for (int64_t i = 0; i < n; ++i) {
            double v = mean + (lesions.data[static_cast<size_t>(i)] != 0.0f ? contrast : 0.0);
            if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * rng.gaussian();
            dst[i] = static_cast<float>(v);
        }
    }
    return img;
}

DatasetRecord synth_phantom(const PhantomConfig& cfg, const std::string& id) {
    cfg.validate();
    Rng rng(cfg.seed);
    DatasetRecord rec;
    rec.id = id;
    rec.mask = SegMask(cfg.depth, cfg.height, cfg.width, 0.0f, cfg.spacing_mm);

    const int64_t n_lesions = rng.uniform_int(cfg.num_lesions_min, cfg.num_lesions_max);
    const int64_t dims[3] = {cfg.depth, cfg.height, cfg.width};
    for (int64_t l = 0; l < n_lesions; ++l) {
        std::array<double, 3> radii{};
        for (auto& r : radii) r = rng.uniform_in(cfg.lesion_radius_mm_min, cfg.lesion_radius_mm_max);
        std::array<double, 3> center{};
        for (int a = 0; a < 3; ++a) {
            // keep the whole ellipsoid inside the grid
            const double margin = radii[static_cast<size_t>(a)] / cfg.spacing_mm[static_cast<size_t>(a)];
            center[static_cast<size_t>(a)] =
                rng.uniform_in(margin, static_cast<double>(dims[a] - 1) - margin);
        }
        add_ellipsoid(rec.mask, center, radii);
    }
    rec.image = render_phantom_image(rec.mask, cfg, rng);
    rec.validate();
    return rec;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifactError("manifest not found: " + path.string());
    const std::filesystem::path base = path.parent_path();
    std::vector<ManifestEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        size_t sep = line.find('\t');
        if (sep == std::string::npos) sep = line.find(' ');
        if (sep == std::string::npos)
            throw ConfigError("manifest: line " + std::to_string(lineno) + " is not an image/mask pair");
        ManifestEntry e;
        e.image_path = base / line.substr(0, sep);
        e.mask_path = base / line.substr(sep + 1);
        const std::string stem = e.image_path.filename().string();
        e.id = stem.substr(0, stem.find('.'));
        out.push_back(std::move(e));
    }
    return out;
}

void save_manifest(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, std::string>>& relative_pairs) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError(IoError::Kind::OpenFailed, "save_manifest: cannot open " + path.string());
    for (const auto& [img, msk] : relative_pairs) f << img << "\t" << msk << "\n";
    if (!f) throw IoError(IoError::Kind::WriteFailed, "save_manifest: write failed");
}

DatasetRecord load_record(const ManifestEntry& entry) {
    if (!std::filesystem::exists(entry.image_path))
        throw MissingArtifactError("record image missing: " + entry.image_path.string());
    if (!std::filesystem::exists(entry.mask_path))
        throw MissingArtifactError("record mask missing: " + entry.mask_path.string());
    DatasetRecord rec;
    rec.id = entry.id;
    rec.image = load_nvol(entry.image_path);
    rec.mask = load_mask(entry.mask_path);
    rec.validate();
    return rec;
}

}  // namespace voldiff
