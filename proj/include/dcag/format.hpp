#pragma once

#include <cstdio>
#include <string>

namespace dcag {

/// Shortest-stable text form used by every artifact: 17 significant digits.
inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace dcag
