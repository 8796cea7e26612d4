#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace lmds::utf8 {

/// Strict validation: rejects overlong forms, surrogates and code points
/// above U+10FFFF.
inline bool is_valid(std::string_view s) {
  const auto* p = reinterpret_cast<const unsigned char*>(s.data());
  const std::size_t n = s.size();
  std::size_t i = 0;
  while (i < n) {
    const unsigned char c = p[i];
    if (c < 0x80) {
      ++i;
      continue;
    }
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > n) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const unsigned char cc = p[i + k];
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
        (len == 4 && cp < 0x10000))
      return false;
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += len;
  }
  return true;
}

inline bool is_continuation(unsigned char c) { return (c & 0xC0) == 0x80; }

/// Number of code points in valid UTF-8 text.
inline std::size_t length(std::string_view s) {
  std::size_t count = 0;
  for (unsigned char c : s) count += is_continuation(c) ? 0 : 1;
  return count;
}

/// Byte offset at which code point `index` starts; `length(s)` maps to s.size().
inline std::size_t byte_offset(std::string_view s, std::size_t index) {
  std::size_t seen = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (is_continuation(static_cast<unsigned char>(s[i]))) continue;
    if (seen == index) return i;
    ++seen;
  }
  return s.size();
}

}  // namespace lmds::utf8
