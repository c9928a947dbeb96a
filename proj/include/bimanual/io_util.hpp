#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ios>
#include <iosfwd>
#include <string_view>

namespace bimanual {

// Writes through a sibling temporary file and renames it into place.
void write_atomically(const std::filesystem::path& path,
                      const std::function<void(std::ostream&)>& writer,
                      std::ios::openmode mode = std::ios::openmode{});

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace bimanual
