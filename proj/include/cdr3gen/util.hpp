#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cdr3gen {

// 64-bit FNV-1a; used for the documented data-file checksums.
constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::string hex64(std::uint64_t v);

// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

std::vector<std::string> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace cdr3gen
