#include "uad/hash.hpp"

#include <cstdio>
#include <vector>

#include "uad/errors.hpp"

namespace uad {

std::uint64_t fnv1a64_bytes(const void* data, std::size_t n, std::uint64_t seed) {
    std::uint64_t h = seed;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

std::string hash_string(std::string_view s) {
    return hex64(fnv1a64_bytes(s.data(), s.size()));
}

std::string hash_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open file for hashing: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    std::vector<unsigned char> buf(1 << 16);
    std::size_t got = 0;
    while ((got = std::fread(buf.data(), 1, buf.size(), f)) > 0) {
        h = fnv1a64_bytes(buf.data(), got, h);
    }
    std::fclose(f);
    return hex64(h);
}

}  // namespace uad
