#include "voldiff/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace voldiff {

namespace {

constexpr char kMagic[8] = {'V', 'D', 'C', 'K', 'P', 'T', '0', '1'};
constexpr uint32_t kVersion = 1;
constexpr uint32_t kTagFloat32 = 1;

void write_u32(std::ofstream& f, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    f.write(b, 4);
}

void write_u64(std::ofstream& f, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    f.write(b, 8);
}

uint32_t read_u32(std::ifstream& f, const std::filesystem::path& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (f.gcount() != 4) throw IoError(IoError::Kind::Truncated, "checkpoint truncated: " + path.string());
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

uint64_t read_u64(std::ifstream& f, const std::filesystem::path& path) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    if (f.gcount() != 8) throw IoError(IoError::Kind::Truncated, "checkpoint truncated: " + path.string());
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamSetT<float>& params) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(IoError::Kind::OpenFailed, "save_checkpoint: cannot open " + path.string());
    f.write(kMagic, 8);
    write_u32(f, kVersion);
    write_u32(f, kTagFloat32);
    write_u64(f, params.size());
    for (size_t p = 0; p < params.size(); ++p) {
        const std::string& name = params.names[p];
        const TensorT<float>& t = params.tensors[p];
        write_u32(f, static_cast<uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(f, static_cast<uint32_t>(t.shape.size()));
        for (int64_t d : t.shape) write_u64(f, static_cast<uint64_t>(d));
        f.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    if (!f) throw IoError(IoError::Kind::WriteFailed, "save_checkpoint: write failed for " + path.string());
}

ParamSetT<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(IoError::Kind::OpenFailed, "load_checkpoint: cannot open " + path.string());
    char magic[8];
    f.read(magic, 8);
    if (f.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
        throw IoError(IoError::Kind::BadMagic, "load_checkpoint: bad magic in " + path.string());
    if (read_u32(f, path) != kVersion)
        throw IoError(IoError::Kind::BadHeader, "load_checkpoint: unsupported version in " + path.string());
    if (read_u32(f, path) != kTagFloat32)
        throw IoError(IoError::Kind::BadHeader, "load_checkpoint: unsupported scalar tag in " + path.string());
    const uint64_t count = read_u64(f, path);

    ParamSetT<float> params;
    for (uint64_t p = 0; p < count; ++p) {
        const uint32_t name_len = read_u32(f, path);
        if (name_len == 0 || name_len > 4096)
            throw IoError(IoError::Kind::BadHeader, "load_checkpoint: implausible name length");
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        if (f.gcount() != static_cast<std::streamsize>(name_len))
            throw IoError(IoError::Kind::Truncated, "checkpoint truncated: " + path.string());
        const uint32_t ndim = read_u32(f, path);
        if (ndim == 0 || ndim > 8)
            throw IoError(IoError::Kind::BadHeader, "load_checkpoint: implausible rank for '" + name + "'");
        std::vector<int64_t> shape(ndim);
        for (auto& d : shape) d = static_cast<int64_t>(read_u64(f, path));
        TensorT<float>& t = params.add(name, shape);
        f.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (f.gcount() != static_cast<std::streamsize>(t.data.size() * sizeof(float)))
            throw IoError(IoError::Kind::Truncated, "checkpoint truncated: " + path.string());
    }
    f.peek();
    if (!f.eof())
        throw IoError(IoError::Kind::SizeMismatch, "load_checkpoint: trailing bytes in " + path.string());
    return params;
}

}  // namespace voldiff
