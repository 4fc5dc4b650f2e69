#pragma once

#include <array>
#include <charconv>
#include <cstdlib>
#include <string>

namespace lata {

// Shortest decimal that parses back to exactly this float.
inline std::string format_float(float v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

// The double nearest to format_float(v); serializes as the same short decimal
// and narrows back to v exactly.
inline double json_float(float v) {
  return std::strtod(format_float(v).c_str(), nullptr);
}

}  // namespace lata
