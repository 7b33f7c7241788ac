#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nes::text {

struct Substitution {
  std::string from;
  std::string to;
};

/// Single left-to-right pass replacing every occurrence of any `from` string.
/// At each position the longest matching pattern wins; replaced text is never
/// rescanned. Spans equal to one of `protect` are copied through untouched.
std::string substitute(std::string_view input, std::vector<Substitution> subs,
                       bool case_insensitive = false,
                       const std::vector<std::string>& protect = {},
                       std::size_t* count = nullptr);

bool iequals(std::string_view a, std::string_view b) noexcept;
std::string trim(std::string_view s);
std::string to_upper(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// 64-bit FNV-1a over the UTF-8 bytes.
std::uint64_t fnv1a64(std::string_view s) noexcept;
/// 16 lowercase hex digits of fnv1a64(s); the embedding-cache key.
std::string content_hash(std::string_view s);

} // namespace nes::text
