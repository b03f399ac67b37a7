#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace uad {

std::uint64_t fnv1a64_bytes(const void* data, std::size_t n,
                            std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t v);

/// Content hash of a string, as 16 hex chars.
std::string hash_string(std::string_view s);

/// Content hash of a file. Throws IoError if unreadable.
std::string hash_file(const std::string& path);

}  // namespace uad
