#include "nes/text.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

namespace nes::text {

namespace {

char fold(char c) noexcept {
  return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

bool matches_at(std::string_view s, std::size_t pos, std::string_view pat, bool ci) noexcept {
  if (pat.empty() || pos + pat.size() > s.size()) return false;
  if (!ci) return s.compare(pos, pat.size(), pat) == 0;
  for (std::size_t i = 0; i < pat.size(); ++i)
    if (fold(s[pos + i]) != fold(pat[i])) return false;
  return true;
}

} // namespace

std::string substitute(std::string_view input, std::vector<Substitution> subs, bool case_insensitive,
                       const std::vector<std::string>& protect, std::size_t* count) {
  std::stable_sort(subs.begin(), subs.end(), [](const Substitution& a, const Substitution& b) {
    return a.from.size() > b.from.size();
  });
  std::vector<std::string> guarded(protect.begin(), protect.end());
  std::stable_sort(guarded.begin(), guarded.end(),
                   [](const std::string& a, const std::string& b) { return a.size() > b.size(); });

  std::string out;
  out.reserve(input.size());
  std::size_t pos = 0;
  while (pos < input.size()) {
    bool advanced = false;
    for (const auto& g : guarded) {
      if (matches_at(input, pos, g, false)) {
        out.append(g);
        pos += g.size();
        advanced = true;
        break;
      }
    }
    if (advanced) continue;
    for (const auto& sub : subs) {
      if (matches_at(input, pos, sub.from, case_insensitive)) {
        out.append(sub.to);
        pos += sub.from.size();
        if (count) ++*count;
        advanced = true;
        break;
      }
    }
    if (!advanced) out.push_back(input[pos++]);
  }
  return out;
}

bool iequals(std::string_view a, std::string_view b) noexcept {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return fold(x) == fold(y);
         });
}

std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::string to_upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string content_hash(std::string_view s) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(s)));
  return buf;
}

} // namespace nes::text
