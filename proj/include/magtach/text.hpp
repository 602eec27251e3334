#pragma once

// Locale-independent number <-> text helpers shared by the file formats.

#include "magtach/error.hpp"

#include <charconv>
#include <string>
#include <string_view>

namespace magtach {

/// Shortest round-trip representation.
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, r.ptr};
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(std::string_view s, const std::string &where,
                           ErrorKind kind = ErrorKind::Io) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') {
    s.remove_prefix(1);
  }
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    fail(kind, where + ": cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

inline long long parse_int(std::string_view s, const std::string &where,
                           ErrorKind kind = ErrorKind::Io) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') {
    s.remove_prefix(1);
  }
  long long v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    fail(kind, where + ": cannot parse integer '" + std::string(s) + "'");
  }
  return v;
}

} // namespace magtach
