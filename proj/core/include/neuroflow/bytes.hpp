// SPDX-License-Identifier: Apache-2.0
#pragma once

// Little-endian word access over byte buffers.

#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

namespace neuroflow {

using Bytes = std::vector<std::uint8_t>;

inline std::uint32_t load_u32(std::span<const std::uint8_t> buf, std::size_t off) {
  return static_cast<std::uint32_t>(buf[off]) |
         (static_cast<std::uint32_t>(buf[off + 1]) << 8) |
         (static_cast<std::uint32_t>(buf[off + 2]) << 16) |
         (static_cast<std::uint32_t>(buf[off + 3]) << 24);
}

inline void store_u32(std::span<std::uint8_t> buf, std::size_t off, std::uint32_t v) {
  buf[off] = static_cast<std::uint8_t>(v);
  buf[off + 1] = static_cast<std::uint8_t>(v >> 8);
  buf[off + 2] = static_cast<std::uint8_t>(v >> 16);
  buf[off + 3] = static_cast<std::uint8_t>(v >> 24);
}

inline std::int32_t load_i32(std::span<const std::uint8_t> buf, std::size_t off) {
  return static_cast<std::int32_t>(load_u32(buf, off));
}

inline void store_i32(std::span<std::uint8_t> buf, std::size_t off, std::int32_t v) {
  store_u32(buf, off, static_cast<std::uint32_t>(v));
}

inline float load_f32(std::span<const std::uint8_t> buf, std::size_t off) {
  std::uint32_t bits = load_u32(buf, off);
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

inline void store_f32(std::span<std::uint8_t> buf, std::size_t off, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  store_u32(buf, off, bits);
}

constexpr std::uint64_t align_up(std::uint64_t v, std::uint64_t a) {
  return (v + a - 1) / a * a;
}

}  // namespace neuroflow
