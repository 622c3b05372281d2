#pragma once

#include <cstdint>
#include <cstring>
#include <string>

#include "ofl/tensor.hpp"

namespace ofl {

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xCBF29CE484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Hashes extents then payload bits, so shape changes alter the digest.
inline std::uint64_t checksum(const Tensor& t, std::uint64_t h = 0xCBF29CE484222325ULL) {
    for (int d : t.dims()) {
        std::uint32_t e = static_cast<std::uint32_t>(d);
        h = fnv1a64(&e, 4, h);
    }
    for (std::size_t i = 0; i < t.numel(); ++i) {
        std::uint32_t bits;
        float v = t[i];
        std::memcpy(&bits, &v, 4);
        h = fnv1a64(&bits, 4, h);
    }
    return h;
}

inline std::string checksum_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[h & 0xF];
        h >>= 4;
    }
    return s;
}

}  // namespace ofl
