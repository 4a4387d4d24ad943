#include "voldiff/nvol.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace voldiff {

namespace {

constexpr char kMagic[16] = {'N', 'V', 'O', 'L', 'F', 'M', 'T', '1', 0, 0, 0, 0, 0, 0, 0, 0};
constexpr uint32_t kHeaderVersion = 1;
constexpr uint32_t kDtypeFloat32 = 1;
constexpr size_t kDescBytes = 32;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

double get_f64(const unsigned char* p) {
    uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void save_nvol(const std::filesystem::path& path, const Volume& v) {
    v.validate();
    std::string header;
    header.reserve(96);
    header.append(kMagic, 16);
    put_u32(header, kHeaderVersion);
    put_u32(header, kDtypeFloat32);
    put_u32(header, static_cast<uint32_t>(v.channels));
    put_u32(header, static_cast<uint32_t>(v.depth));
    put_u32(header, static_cast<uint32_t>(v.height));
    put_u32(header, static_cast<uint32_t>(v.width));
    for (double s : v.spacing_mm) put_f64(header, s);
    char desc[kDescBytes] = {0};
    std::memcpy(desc, v.channel_desc.data(), std::min(v.channel_desc.size(), kDescBytes - 1));
    header.append(desc, kDescBytes);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(IoError::Kind::OpenFailed, "save_nvol: cannot open " + path.string());
    f.write(header.data(), static_cast<std::streamsize>(header.size()));
    // payload is raw IEEE float32; x86 is little-endian, matching the format
    f.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(float)));
    if (!f) throw IoError(IoError::Kind::WriteFailed, "save_nvol: write failed for " + path.string());
}

Volume load_nvol(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(IoError::Kind::OpenFailed, "load_nvol: cannot open " + path.string());

    unsigned char header[96];
    f.read(reinterpret_cast<char*>(header), sizeof(header));
    if (f.gcount() != sizeof(header))
        throw IoError(IoError::Kind::Truncated, "load_nvol: file shorter than header: " + path.string());
    if (std::memcmp(header, kMagic, 16) != 0)
        throw IoError(IoError::Kind::BadMagic, "load_nvol: bad magic in " + path.string());
    if (get_u32(header + 16) != kHeaderVersion)
        throw IoError(IoError::Kind::BadHeader, "load_nvol: unsupported header version in " + path.string());
    if (get_u32(header + 20) != kDtypeFloat32)
        throw IoError(IoError::Kind::BadHeader, "load_nvol: unsupported dtype tag in " + path.string());

    Volume v;
    v.channels = get_u32(header + 24);
    v.depth = get_u32(header + 28);
    v.height = get_u32(header + 32);
    v.width = get_u32(header + 36);
    for (int i = 0; i < 3; ++i) v.spacing_mm[i] = get_f64(header + 40 + 8 * i);
    const char* desc = reinterpret_cast<const char*>(header + 64);
    v.channel_desc.assign(desc, strnlen(desc, kDescBytes));

    if (v.channels < 1 || v.depth < 1 || v.height < 1 || v.width < 1)
        throw IoError(IoError::Kind::BadHeader, "load_nvol: non-positive dimensions in " + path.string());

    const int64_t n = v.numel();
    v.data.resize(static_cast<size_t>(n));
    f.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(n * sizeof(float)))
        throw IoError(IoError::Kind::Truncated, "load_nvol: truncated payload in " + path.string());
    // a well-formed file ends exactly after the payload
    f.peek();
    if (!f.eof())
        throw IoError(IoError::Kind::SizeMismatch,
                      "load_nvol: payload length does not match header dimensions in " + path.string());
    v.validate();
    return v;
}

void save_mask(const std::filesystem::path& path, const SegMask& m) {
    m.validate();
    Volume v(1, m.depth, m.height, m.width, 0.0f, m.spacing_mm);
    v.channel_desc = "MASK";
    v.data = m.data;
    save_nvol(path, v);
}

SegMask load_mask(const std::filesystem::path& path) {
    Volume v = load_nvol(path);
    if (v.channels != 1)
        throw IoError(IoError::Kind::BadHeader, "load_mask: expected 1 channel in " + path.string());
    SegMask m(v.depth, v.height, v.width, 0.0f, v.spacing_mm);
    m.data = std::move(v.data);
    m.validate();
    return m;
}

void save_pgm_slice(const std::filesystem::path& path, const Volume& v, int64_t channel,
                    int64_t z, float lo, float hi) {
    if (channel < 0 || channel >= v.channels || z < 0 || z >= v.depth)
        throw ShapeError("save_pgm_slice: channel or slice out of range");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(IoError::Kind::OpenFailed, "save_pgm_slice: cannot open " + path.string());
    f << "P5\n" << v.width << " " << v.height << "\n255\n";
    const float scale = hi > lo ? 255.0f / (hi - lo) : 0.0f;
    for (int64_t y = 0; y < v.height; ++y) {
        for (int64_t x = 0; x < v.width; ++x) {
            float t = (v.at(channel, z, y, x) - lo) * scale;
            int b = static_cast<int>(std::lround(std::clamp(t, 0.0f, 255.0f)));
            f.put(static_cast<char>(b));
        }
    }
    if (!f) throw IoError(IoError::Kind::WriteFailed, "save_pgm_slice: write failed for " + path.string());
}

}  // namespace voldiff
