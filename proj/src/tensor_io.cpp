#include "ofl/tensor_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <utility>
#include <vector>

#include "ofl/errors.hpp"

namespace ofl {

namespace {

constexpr unsigned char kMagic[4] = {0x4F, 0x54, 0x4E, 0x53};  // "OTNS"
constexpr std::size_t kMaxElements = std::size_t{1} << 31;

void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
    std::vector<unsigned char> buf;
    buf.reserve(8 + 4 * t.dims().size() + 4 * t.numel());
    buf.insert(buf.end(), kMagic, kMagic + 4);
    buf.push_back(1);  // version
    buf.push_back(0);  // dtype f32
    buf.push_back(static_cast<unsigned char>(t.ndim()));
    buf.push_back(0);  // reserved
    for (int d : t.dims()) put_u32_le(buf, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        std::uint32_t bits;
        float v = t[i];
        std::memcpy(&bits, &v, 4);
        put_u32_le(buf, bits);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

namespace {

// Parses the header; returns dims and the payload start offset.
std::pair<std::vector<int>, std::size_t> parse_header(const std::vector<unsigned char>& buf,
                                                      const std::filesystem::path& path) {
    if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw FormatError(0, "bad magic in " + path.string());
    }
    if (buf.size() < 8) throw FormatError(buf.size(), "truncated header in " + path.string());
    if (buf[4] != 1) throw FormatError(4, "unsupported version in " + path.string());
    if (buf[5] != 0) throw FormatError(5, "unsupported dtype in " + path.string());
    const int ndim = buf[6];
    if (ndim < 1 || ndim > 4) throw FormatError(6, "ndim out of range in " + path.string());
    if (buf[7] != 0) throw FormatError(7, "reserved byte must be 0 in " + path.string());

    const std::size_t dims_end = 8 + 4 * static_cast<std::size_t>(ndim);
    if (buf.size() < dims_end) throw FormatError(buf.size(), "truncated extents in " + path.string());

    std::vector<int> dims(static_cast<std::size_t>(ndim));
    std::size_t numel = 1;
    for (int i = 0; i < ndim; ++i) {
        const std::size_t off = 8 + 4 * static_cast<std::size_t>(i);
        const std::uint32_t e = get_u32_le(buf.data() + off);
        if (e == 0 || e > kMaxElements) throw FormatError(off, "extent out of range in " + path.string());
        numel *= e;
        if (numel > kMaxElements) throw FormatError(off, "extent product overflow in " + path.string());
        dims[static_cast<std::size_t>(i)] = static_cast<int>(e);
    }
    return {std::move(dims), dims_end};
}

std::vector<unsigned char> slurp(const std::filesystem::path& path, std::size_t limit = 0) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path.string());
    std::vector<unsigned char> buf;
    if (limit) {
        buf.resize(limit);
        f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(limit));
        buf.resize(static_cast<std::size_t>(f.gcount()));
    } else {
        buf.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    }
    return buf;
}

}  // namespace

Tensor read_tensor(const std::filesystem::path& path) {
    const std::vector<unsigned char> buf = slurp(path);
    auto [dims, dims_end] = parse_header(buf, path);
    std::size_t numel = 1;
    for (int d : dims) numel *= static_cast<std::size_t>(d);

    const std::size_t want = dims_end + 4 * numel;
    if (buf.size() < want) throw FormatError(buf.size(), "truncated payload in " + path.string());
    if (buf.size() > want) throw FormatError(want, "trailing bytes in " + path.string());

    std::vector<float> data(numel);
    for (std::size_t i = 0; i < numel; ++i) {
        const std::uint32_t bits = get_u32_le(buf.data() + dims_end + 4 * i);
        std::memcpy(&data[i], &bits, 4);
    }
    return Tensor(std::move(dims), std::move(data));
}

std::vector<int> read_tensor_dims(const std::filesystem::path& path) {
    const std::vector<unsigned char> buf = slurp(path, 8 + 4 * 4);
    return parse_header(buf, path).first;
}

}  // namespace ofl
