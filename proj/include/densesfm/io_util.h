#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>

namespace densesfm {

// Shortest text form that parses back to the identical double.
inline std::string FormatDouble(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void WriteU32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

inline std::uint32_t ReadU32(std::istream& in) {
  unsigned char bytes[4] = {0, 0, 0, 0};
  in.read(reinterpret_cast<char*>(bytes), 4);
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

inline void WriteF32(std::ostream& out, float v) { WriteU32(out, std::bit_cast<std::uint32_t>(v)); }
inline float ReadF32(std::istream& in) { return std::bit_cast<float>(ReadU32(in)); }

}  // namespace densesfm
