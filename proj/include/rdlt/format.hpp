#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <system_error>

namespace rdlt {

/// Shortest-safe text form of a double: 17 significant digits, round-trips
/// exactly through strtod.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  if (res.ec != std::errc()) return "nan";
  return std::string(buf, res.ptr);
}

}  // namespace rdlt
